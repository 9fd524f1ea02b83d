#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vmt/checkpoint.hpp"
#include "vmt/config.hpp"
#include "vmt/data.hpp"
#include "vmt/eval.hpp"
#include "vmt/losses.hpp"
#include "vmt/nn.hpp"
#include "vmt/rng.hpp"

namespace vmt {

// Generated and standardized task data, ready to batch.
struct TaskData {
  DomainSplits src;
  DomainSplits tgt;
};
TaskData prepare_data(const ExperimentConfig& cfg);

// Full training state. Serializes into a Checkpoint; a resumed state walks
// the same trajectory bit for bit.
struct TrainState {
  ModelParams params;
  int64_t iter = 0;
  uint64_t disc_t = 0;  // Adam step counts, incremented before each update
  uint64_t gen_t = 0;
  RngStream loss_rng{0};
  std::string batch_state;  // serialized iterator cursors; empty before the first step
  std::vector<MetricsRecord> history;
  std::string phase = "vmt";  // "vmt" | "refine"
  bool has_teacher = false;
  ModelParams teacher;  // refinement only
};

TrainState init_state(const ExperimentConfig& cfg);

Checkpoint to_checkpoint(const TrainState& state, const ExperimentConfig& cfg);
TrainState from_checkpoint(const Checkpoint& ck);

using MetricsSink = std::function<void(const MetricsRecord&)>;

// Joint VMT/VADA training. Per iteration: (A) discriminator Adam step on the
// domain loss (skipped entirely when lambda_d == 0, so the zero-weight run is
// bitwise plain supervised training), (B) encoder+head Adam step on the
// combined objective, (C) EMA update. Metrics go through EMA shadows every
// eval interval. Non-finite losses abort with the component name and
// iteration.
TrainState train_vmt(TrainState state, const TaskData& data, const ExperimentConfig& cfg,
                     const MetricsSink& sink = {});
TrainState train_vmt(const ExperimentConfig& cfg, const MetricsSink& sink = {});

// Target-only refinement from a completed run: the teacher starts as the
// frozen EMA model, the student minimizes the anchored cluster losses, and
// the teacher refreshes to the current EMA student every refine_interval
// iterations. Iteration count restarts at 0 for this phase.
TrainState refine_dirt_t(TrainState init, const TaskData& data, const ExperimentConfig& cfg,
                         const MetricsSink& sink = {});
TrainState refine_dirt_t(TrainState init, const ExperimentConfig& cfg,
                         const MetricsSink& sink = {});

// Copy whose raw values are the EMA shadows; Adam moments reset.
ModelParams ema_snapshot(const ModelParams& params);

struct RunOutcome {
  uint64_t seed = 0;
  double tgt_acc = 0.0;  // NaN when the run failed
  bool degenerate = false;
  std::string status;  // completed | degenerate | failed
  std::string error;
};

// Statistics over non-failed runs; failures only counted.
struct SweepSummary {
  std::vector<RunOutcome> runs;
  double mean = 0.0;
  double stddev = 0.0;
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
  int64_t failures = 0;
};

SweepSummary summarize(std::vector<RunOutcome> runs);

// Independent full runs, one per seed; jobs > 1 runs them concurrently (each
// run owns its state and stream). Failures are recorded, never propagated.
SweepSummary seed_sweep(const ExperimentConfig& cfg, const std::vector<uint64_t>& seeds,
                        int jobs = 1);

struct AblationRow {
  LossTermMask mask;
  SweepSummary summary;
};

// One model per mask per seed, identical seeds across rows.
std::vector<AblationRow> run_ablation(const ExperimentConfig& base,
                                      const std::vector<LossTermMask>& rows,
                                      const std::vector<uint64_t>& seeds, int jobs = 1);

std::vector<LossTermMask> default_ablation_rows(MixSite site);

}  // namespace vmt
