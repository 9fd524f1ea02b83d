#include "vmt/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vmt/checkpoint.hpp"
#include "vmt/config.hpp"
#include "vmt/errors.hpp"
#include "vmt/run_io.hpp"
#include "vmt/trainer.hpp"

namespace vmt {

namespace {

std::vector<uint64_t> parse_list_or_throw(const std::string& text) {
  std::vector<uint64_t> seeds;
  auto parse_one = [](const std::string& tok) {
    size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(tok, &used);
    } catch (const std::exception&) {
      throw ValueError("seeds: '" + tok + "' is not a number");
    }
    if (used != tok.size()) throw ValueError("seeds: '" + tok + "' is not a number");
    return static_cast<uint64_t>(v);
  };

  const size_t dots = text.find("..");
  if (dots != std::string::npos) {
    const uint64_t lo = parse_one(text.substr(0, dots));
    const uint64_t hi = parse_one(text.substr(dots + 2));
    if (hi < lo) throw ValueError("seeds: empty range " + text);
    for (uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
    return seeds;
  }
  size_t pos = 0;
  while (pos <= text.size()) {
    const size_t comma = text.find(',', pos);
    const std::string tok =
        text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    seeds.push_back(parse_one(tok));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return seeds;
}

struct Overrides {
  std::optional<uint64_t> seed;
  std::string mask;
  std::string site;
};

void apply_overrides(ExperimentConfig& cfg, const Overrides& ov) {
  if (ov.seed) cfg.seed = *ov.seed;
  if (!ov.mask.empty()) {
    const MixSite site = cfg.mask.site;
    cfg.mask = mask_from_string(ov.mask);
    cfg.mask.site = site;
  }
  if (!ov.site.empty()) cfg.mask.site = mix_site_from_string(ov.site);
}

std::string default_run_dir(const std::string& kind, const ExperimentConfig& cfg) {
  return out_root() + "/" + kind + "-" + config_hash_hex(cfg) + "-s" + std::to_string(cfg.seed);
}

// Artifacts for one finished (or failed) training-style run.
struct RunFiles {
  RunPaths paths;
  RunManifest manifest;
};

RunFiles begin_run(const std::string& dir, const ExperimentConfig& cfg) {
  RunFiles rf;
  rf.paths.dir = dir;
  ensure_dir(dir);
  rf.manifest.started_at = iso8601_utc_now();
  rf.manifest.config_text = serialize_config(cfg);
  rf.manifest.config_hash = config_hash_hex(cfg);
  write_manifest(rf.paths.manifest(), rf.manifest);
  return rf;
}

void finish_run(RunFiles& rf, const std::string& status, const std::string& error = "") {
  rf.manifest.status = status;
  rf.manifest.error = error;
  rf.manifest.ended_at = iso8601_utc_now();
  write_manifest(rf.paths.manifest(), rf.manifest);
}

// Runs one training (and optional refinement) to completion, writing every
// artifact. Returns the outcome; never throws.
RunOutcome execute_training(const ExperimentConfig& cfg, const std::string& dir, bool refine,
                            const TrainState* init) {
  RunOutcome out;
  out.seed = cfg.seed;
  RunFiles rf = begin_run(dir, cfg);
  try {
    const TaskData data = prepare_data(cfg);
    TrainState state = init != nullptr ? *init : init_state(cfg);
    state = refine ? refine_dirt_t(std::move(state), data, cfg)
                   : train_vmt(std::move(state), data, cfg);

    to_checkpoint(state, cfg).save(rf.paths.checkpoint());
    write_metrics_csv_file(rf.paths.metrics(), state.history);
    write_timing_csv_file(rf.paths.timing(), state.history);
    export_features_file(rf.paths.features(), state.params, WeightSource::ema,
                         {&data.src.train, &data.src.test, &data.tgt.train, &data.tgt.test});
    rf.manifest.outputs = {"checkpoint.bin", "metrics.csv", "timing.csv", "features.csv"};

    const MetricsRecord& last = state.history.back();
    out.tgt_acc = last.tgt_test_acc;
    out.degenerate = last.degenerate;
    out.status = last.degenerate ? "degenerate" : "completed";
    finish_run(rf, out.status);
  } catch (const std::exception& e) {
    out.tgt_acc = std::numeric_limits<double>::quiet_NaN();
    out.status = "failed";
    out.error = e.what();
    finish_run(rf, "failed", e.what());
  }
  return out;
}

int outcome_exit_code(const RunOutcome& out) {
  if (out.status == "failed") {
    std::fprintf(stderr, "error: %s\n", out.error.c_str());
    return 1;
  }
  return out.status == "degenerate" ? 2 : 0;
}

std::vector<LossTermMask> parse_rows(const std::string& text, MixSite site) {
  std::vector<LossTermMask> rows;
  size_t pos = 0;
  while (pos <= text.size()) {
    const size_t semi = text.find(';', pos);
    const std::string tok =
        text.substr(pos, semi == std::string::npos ? std::string::npos : semi - pos);
    LossTermMask mask = mask_from_string(tok);
    mask.site = site;
    rows.push_back(mask);
    if (semi == std::string::npos) break;
    pos = semi + 1;
  }
  return rows;
}

}  // namespace

std::vector<uint64_t> parse_seed_list(const std::string& text) {
  return parse_list_or_throw(text);
}

int run_cli(int argc, char** argv) {
  CLI::App app{"toy lab for adversarial domain adaptation with virtual mixup"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  Overrides ov;
  uint64_t seed_flag = 0;
  // The bound value is only converted while CLI11 runs the option callback,
  // so whether --seed was given is checked after parse() via these handles.
  std::vector<CLI::Option*> seed_opts;

  auto add_common = [&](CLI::App* sub, bool with_overrides) {
    sub->add_option("--config", config_path, "experiment config file")->required();
    sub->add_option("--out", out_dir, "run directory (default: under " + out_root() + ")");
    if (with_overrides) {
      seed_opts.push_back(sub->add_option("--seed", seed_flag, "override the config seed"));
      sub->add_option("--mask", ov.mask, "loss terms to enable, e.g. Lc,Lv,Lm or none");
      sub->add_option("--site", ov.site, "mixup site: logits, probabilities, intermediate");
    }
  };

  CLI::App* train = app.add_subcommand("train", "joint adversarial training");
  add_common(train, true);

  CLI::App* refine = app.add_subcommand("refine", "target-only refinement from a checkpoint");
  std::string init_path;
  refine->add_option("--init", init_path, "checkpoint to refine from")->required();
  add_common(refine, true);

  CLI::App* sweep = app.add_subcommand("sweep", "full runs across a seed list");
  std::string seeds_text = "0..9";
  int jobs = 1;
  sweep->add_option("--seeds", seeds_text, "seed list: 0..9 or 0,4,7");
  sweep->add_option("--jobs", jobs, "concurrent runs");
  add_common(sweep, true);

  CLI::App* ablate = app.add_subcommand("ablate", "loss-term ablation table");
  std::string rows_text = "Lc;Lc,Lv;Lc,Lm;Lc,Lv,Lm";
  ablate->add_option("--rows", rows_text, "semicolon-separated masks");
  ablate->add_option("--seeds", seeds_text, "seed list: 0..9 or 0,4,7");
  ablate->add_option("--jobs", jobs, "concurrent runs");
  add_common(ablate, true);

  CLI::App* probe = app.add_subcommand("probe", "interpolation gradient-norm probe");
  std::string ckpt_path;
  int64_t probe_pairs = 0;
  int64_t probe_lambdas = 0;
  bool full_jacobian = false;
  probe->add_option("--checkpoint", ckpt_path, "checkpoint to probe")->required();
  probe->add_option("--config", config_path, "config override (default: embedded in checkpoint)");
  probe->add_option("--out", out_dir, "run directory");
  probe->add_option("--pairs", probe_pairs, "pairs to draw (default from config)");
  probe->add_option("--lambdas", probe_lambdas, "grid size (default from config)");
  probe->add_flag("--full-jacobian", full_jacobian, "norm of the whole Jacobian");
  seed_opts.push_back(probe->add_option("--seed", seed_flag, "override the probe stream seed"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  for (const CLI::Option* opt : seed_opts) {
    if (opt->count() > 0) ov.seed = seed_flag;
  }

  try {
    if (app.got_subcommand(train)) {
      ExperimentConfig cfg = load_config(config_path);
      apply_overrides(cfg, ov);
      cfg.validate();
      const std::string dir = out_dir.empty() ? default_run_dir("train", cfg) : out_dir;
      return outcome_exit_code(execute_training(cfg, dir, false, nullptr));
    }

    if (app.got_subcommand(refine)) {
      ExperimentConfig cfg = load_config(config_path);
      apply_overrides(cfg, ov);
      cfg.validate();
      const TrainState state = from_checkpoint(Checkpoint::load(init_path));
      if (state.params.spec() != cfg.model) {
        throw ValueError("refine: checkpoint model " + serialize_model_spec(state.params.spec()) +
                         " does not match config model " + serialize_model_spec(cfg.model));
      }
      const std::string dir = out_dir.empty() ? default_run_dir("refine", cfg) : out_dir;
      return outcome_exit_code(execute_training(cfg, dir, true, &state));
    }

    if (app.got_subcommand(sweep)) {
      ExperimentConfig cfg = load_config(config_path);
      apply_overrides(cfg, ov);
      cfg.validate();
      const std::vector<uint64_t> seeds = parse_seed_list(seeds_text);
      if (seeds.empty()) throw ValueError("seeds: empty list");
      const std::string dir = out_dir.empty() ? default_run_dir("sweep", cfg) : out_dir;
      RunFiles rf = begin_run(dir, cfg);

      std::vector<RunOutcome> outcomes(seeds.size());
      const int64_t count = static_cast<int64_t>(seeds.size());
#if defined(_OPENMP)
#pragma omp parallel for schedule(dynamic) num_threads(std::max(jobs, 1)) if (jobs > 1)
#endif
      for (int64_t i = 0; i < count; ++i) {
        ExperimentConfig run_cfg = cfg;
        run_cfg.seed = seeds[static_cast<size_t>(i)];
        outcomes[static_cast<size_t>(i)] = execute_training(
            run_cfg, dir + "/seed" + std::to_string(run_cfg.seed), false, nullptr);
      }

      const SweepSummary summary = summarize(outcomes);
      write_sweep_csv_file(dir + "/sweep.csv", summary);
      rf.manifest.outputs = {"sweep.csv"};
      for (uint64_t s : seeds) rf.manifest.outputs.push_back("seed" + std::to_string(s));
      const bool any_ok = summary.failures < static_cast<int64_t>(seeds.size());
      finish_run(rf, any_ok ? "completed" : "failed",
                 any_ok ? "" : "every run failed");
      if (!any_ok) std::fprintf(stderr, "error: every run failed\n");
      return any_ok ? 0 : 1;
    }

    if (app.got_subcommand(ablate)) {
      ExperimentConfig cfg = load_config(config_path);
      apply_overrides(cfg, ov);
      cfg.validate();
      const std::vector<uint64_t> seeds = parse_seed_list(seeds_text);
      const std::vector<LossTermMask> rows = parse_rows(rows_text, cfg.mask.site);
      const std::string dir = out_dir.empty() ? default_run_dir("ablate", cfg) : out_dir;
      RunFiles rf = begin_run(dir, cfg);

      std::vector<AblationRow> table;
      try {
        table = run_ablation(cfg, rows, seeds, jobs);
      } catch (const std::exception& e) {
        finish_run(rf, "failed", e.what());
        throw;
      }
      write_ablation_csv_file(dir + "/ablation.csv", table);
      rf.manifest.outputs = {"ablation.csv"};
      int64_t ok = 0;
      for (const AblationRow& row : table) {
        ok += static_cast<int64_t>(row.summary.runs.size()) - row.summary.failures;
      }
      finish_run(rf, ok > 0 ? "completed" : "failed", ok > 0 ? "" : "every run failed");
      if (ok == 0) std::fprintf(stderr, "error: every run failed\n");
      return ok > 0 ? 0 : 1;
    }

    if (app.got_subcommand(probe)) {
      const Checkpoint ck = Checkpoint::load(ckpt_path);
      const TrainState state = from_checkpoint(ck);
      ExperimentConfig cfg = config_path.empty() ? parse_config_text(ck.text("config"))
                                                 : load_config(config_path);
      cfg.validate();
      if (state.params.spec() != cfg.model) {
        throw ValueError("probe: checkpoint model " + serialize_model_spec(state.params.spec()) +
                         " does not match config model " + serialize_model_spec(cfg.model));
      }
      const TaskData data = prepare_data(cfg);
      const Tensor& inputs = data.tgt.test.inputs();
      ProbeConfig pc;
      pc.pairs = probe_pairs > 0 ? probe_pairs : cfg.probe_pairs;
      pc.pairs = std::min(pc.pairs, inputs.rows() * (inputs.rows() - 1) / 2);
      pc.lambdas = probe_lambdas > 0 ? probe_lambdas : cfg.probe_lambdas;
      pc.full_jacobian = full_jacobian || cfg.probe_full_jacobian;
      pc.seed = RngStream::derive_seed(ov.seed ? *ov.seed : cfg.seed, "probe");

      const std::string dir = out_dir.empty() ? default_run_dir("probe", cfg) : out_dir;
      RunFiles rf = begin_run(dir, cfg);
      try {
        const ProbeResult res =
            interpolation_grad_norms(state.params, WeightSource::ema, inputs, pc);
        std::ofstream os(rf.paths.probe(), std::ios::trunc);
        if (!os) throw IoError("cannot write '" + rf.paths.probe() + "'");
        write_probe_grid(os, res);
        os.flush();
        if (!os) throw IoError("write failed for '" + rf.paths.probe() + "'");
      } catch (const std::exception& e) {
        finish_run(rf, "failed", e.what());
        throw;
      }
      rf.manifest.outputs = {"probe.csv"};
      finish_run(rf, "completed");
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}

}  // namespace vmt
