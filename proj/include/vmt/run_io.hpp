#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "vmt/trainer.hpp"

namespace vmt {

// Default parent for run directories; VMT_OUT_ROOT overrides "runs".
std::string out_root();

// Creates the directory (and parents) if needed.
void ensure_dir(const std::string& dir);

std::string iso8601_utc_now();

// Canonical file layout inside one run directory.
struct RunPaths {
  std::string dir;
  std::string checkpoint() const { return dir + "/checkpoint.bin"; }
  std::string metrics() const { return dir + "/metrics.csv"; }
  std::string timing() const { return dir + "/timing.csv"; }
  std::string manifest() const { return dir + "/manifest.json"; }
  std::string features() const { return dir + "/features.csv"; }
  std::string probe() const { return dir + "/probe.csv"; }
};

// Everything needed to re-create or audit a run. Written atomically so a
// manifest is never seen half-finished.
struct RunManifest {
  std::string status = "running";  // running | completed | degenerate | failed
  std::string error;
  std::string started_at;
  std::string ended_at;
  std::string config_text;  // canonical serialized config
  std::string config_hash;
  std::string version;
  std::vector<std::string> outputs;  // file names relative to the run dir
};

void write_manifest(const std::string& path, const RunManifest& m);
RunManifest read_manifest(const std::string& path);

// Reproducible metrics: fixed column set, deterministic formatting, no wall
// times. Missing components print as 0.
void write_metrics_csv(std::ostream& os, const std::vector<MetricsRecord>& history);
void write_metrics_csv_file(const std::string& path, const std::vector<MetricsRecord>& history);

// Wall-clock seconds per loss term; the only nondeterministic output.
void write_timing_csv(std::ostream& os, const std::vector<MetricsRecord>& history);
void write_timing_csv_file(const std::string& path, const std::vector<MetricsRecord>& history);

// Per-seed rows plus a trailing comment line with the aggregate stats.
void write_sweep_csv(std::ostream& os, const SweepSummary& summary);
void write_sweep_csv_file(const std::string& path, const SweepSummary& summary);

// One row per mask; identical seeds across rows by construction.
void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);
void write_ablation_csv_file(const std::string& path, const std::vector<AblationRow>& rows);

}  // namespace vmt
