#include "vmt/run_io.hpp"

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "vmt/errors.hpp"

#ifndef VMTLAB_VERSION
#define VMTLAB_VERSION "dev"
#endif

namespace vmt {

namespace {

using nlohmann::json;

constexpr const char* kComponentColumns[] = {"total",   "l_y",     "l_d_gen", "l_m_src",
                                             "l_v_src", "l_m_tgt", "l_v_tgt", "l_c_tgt",
                                             "kl_teacher"};
constexpr const char* kTimingColumns[] = {"l_y",     "l_d_gen", "l_m_src", "l_v_src",
                                          "l_m_tgt", "l_v_tgt", "l_c_tgt", "kl_teacher"};

double lookup(const std::map<std::string, double>& m, const char* key) {
  const auto it = m.find(key);
  return it == m.end() ? 0.0 : it->second;
}

// Commas and newlines would break the single-row-per-record contract.
std::string sanitize_cell(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

void atomic_write(const std::string& path, const std::string& body) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc | std::ios::binary);
    if (!os) throw IoError("cannot write '" + tmp + "'");
    os << body;
    os.flush();
    if (!os) throw IoError("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw IoError("cannot move '" + tmp + "' into place");
  }
}

template <class Fn>
void to_file(const std::string& path, Fn&& write) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path + "'");
  write(os);
  os.flush();
  if (!os) throw IoError("write failed for '" + path + "'");
}

}  // namespace

std::string out_root() {
  const char* env = std::getenv("VMT_OUT_ROOT");
  return env != nullptr && env[0] != '\0' ? env : "runs";
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

std::string iso8601_utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const std::string& path, const RunManifest& m) {
  json j;
  j["status"] = m.status;
  j["error"] = m.error;
  j["started_at"] = m.started_at;
  j["ended_at"] = m.ended_at;
  j["config"] = m.config_text;
  j["config_hash"] = m.config_hash;
  j["version"] = m.version.empty() ? VMTLAB_VERSION : m.version;
  j["outputs"] = m.outputs;
  atomic_write(path, j.dump(2) + "\n");
}

RunManifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read manifest '" + path + "'");
  json j;
  try {
    is >> j;
  } catch (const json::parse_error& e) {
    throw IoError("manifest '" + path + "' is not valid JSON: " + e.what());
  }
  RunManifest m;
  m.status = j.value("status", "");
  m.error = j.value("error", "");
  m.started_at = j.value("started_at", "");
  m.ended_at = j.value("ended_at", "");
  m.config_text = j.value("config", "");
  m.config_hash = j.value("config_hash", "");
  m.version = j.value("version", "");
  if (j.contains("outputs")) m.outputs = j["outputs"].get<std::vector<std::string>>();
  return m;
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRecord>& history) {
  os << "iteration,src_test_acc,tgt_test_acc";
  for (const char* col : kComponentColumns) os << ',' << col;
  os << ",degenerate,probe_mean,probe_max\n";
  for (const MetricsRecord& r : history) {
    os << r.iteration << ',' << fmt_double(r.src_test_acc) << ',' << fmt_double(r.tgt_test_acc);
    for (const char* col : kComponentColumns) os << ',' << fmt_double(lookup(r.components, col));
    os << ',' << (r.degenerate ? 1 : 0) << ',' << fmt_double(r.probe_mean) << ','
       << fmt_double(r.probe_max) << '\n';
  }
  if (!os) throw IoError("metrics: write failed");
}

void write_metrics_csv_file(const std::string& path, const std::vector<MetricsRecord>& history) {
  to_file(path, [&](std::ostream& os) { write_metrics_csv(os, history); });
}

void write_timing_csv(std::ostream& os, const std::vector<MetricsRecord>& history) {
  os << "iteration";
  for (const char* col : kTimingColumns) os << ',' << col << "_s";
  os << '\n';
  for (const MetricsRecord& r : history) {
    os << r.iteration;
    for (const char* col : kTimingColumns) os << ',' << fmt_double(lookup(r.term_seconds, col));
    os << '\n';
  }
  if (!os) throw IoError("timing: write failed");
}

void write_timing_csv_file(const std::string& path, const std::vector<MetricsRecord>& history) {
  to_file(path, [&](std::ostream& os) { write_timing_csv(os, history); });
}

void write_sweep_csv(std::ostream& os, const SweepSummary& summary) {
  os << "seed,status,tgt_test_acc,degenerate,error\n";
  for (const RunOutcome& r : summary.runs) {
    os << r.seed << ',' << r.status << ',' << fmt_double(r.tgt_acc) << ','
       << (r.degenerate ? 1 : 0) << ',' << sanitize_cell(r.error) << '\n';
  }
  os << "# mean=" << fmt_double(summary.mean) << " stddev=" << fmt_double(summary.stddev)
     << " median=" << fmt_double(summary.median) << " min=" << fmt_double(summary.min)
     << " max=" << fmt_double(summary.max) << " failures=" << summary.failures << '\n';
  if (!os) throw IoError("sweep: write failed");
}

void write_sweep_csv_file(const std::string& path, const SweepSummary& summary) {
  to_file(path, [&](std::ostream& os) { write_sweep_csv(os, summary); });
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "mask,site,runs,failures,median,mean,stddev,min,max\n";
  for (const AblationRow& row : rows) {
    const SweepSummary& s = row.summary;
    std::string mask = mask_to_string(row.mask);  // "Lc,Lv" would split the cell
    for (char& c : mask) {
      if (c == ',') c = '+';
    }
    os << mask << ',' << mix_site_name(row.mask.site) << ','
       << s.runs.size() << ',' << s.failures << ',' << fmt_double(s.median) << ','
       << fmt_double(s.mean) << ',' << fmt_double(s.stddev) << ',' << fmt_double(s.min) << ','
       << fmt_double(s.max) << '\n';
  }
  if (!os) throw IoError("ablation: write failed");
}

void write_ablation_csv_file(const std::string& path, const std::vector<AblationRow>& rows) {
  to_file(path, [&](std::ostream& os) { write_ablation_csv(os, rows); });
}

}  // namespace vmt
