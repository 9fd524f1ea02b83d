#include "vmt/cli.hpp"

int main(int argc, char** argv) { return vmt::run_cli(argc, argv); }
