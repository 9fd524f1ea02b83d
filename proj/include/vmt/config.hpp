#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "vmt/data.hpp"
#include "vmt/losses.hpp"
#include "vmt/nn.hpp"

namespace vmt {

// Everything one run needs. The on-disk format is flat `key = value` lines
// under [section] headers; unknown sections or keys are hard errors, so a
// typo can never silently drop a hyperparameter from a sweep.
struct ExperimentConfig {
  TaskSpec task;
  ModelSpec model;
  LossWeights weights;
  VatConfig vat;
  MixupConfig mix;
  LossTermMask mask;
  AdamConfig adam;
  double ema_momentum = 0.998;
  int64_t batch = 64;
  int64_t iters = 4000;
  int64_t disc_steps = 1;  // discriminator updates per encoder update
  int64_t refine_iters = 1000;
  int64_t refine_interval = 500;
  int64_t eval_interval = 500;
  uint64_t seed = 0;
  bool debug_checks = false;  // per-iteration bitwise group-discipline asserts
  int64_t probe_pairs = 200;
  int64_t probe_lambdas = 11;
  bool probe_full_jacobian = false;

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig parse_config(std::istream& is);
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Canonical form: fixed section and key order. parse(serialize(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

// FNV-1a over the canonical serialization.
uint64_t config_hash(const ExperimentConfig& cfg);
std::string config_hash_hex(const ExperimentConfig& cfg);

// "Lc,Lv,Lm" subsets; "none" (or empty) turns every term off. Site is
// carried separately.
LossTermMask mask_from_string(const std::string& s);
std::string mask_to_string(const LossTermMask& mask);

// %.12g when that round-trips the exact double, full precision otherwise.
std::string fmt_double(double v);

}  // namespace vmt
