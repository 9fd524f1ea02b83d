#include "vmt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <set>
#include <sstream>

#include "vmt/errors.hpp"
#include "vmt/tape.hpp"

namespace vmt {

namespace {

// Hexfloat everywhere in state blobs: round-trips are bit-exact.
std::string fmt_a(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.13a", v);
  return buf;
}

std::string history_to_text(const std::vector<MetricsRecord>& history) {
  std::ostringstream os;
  os << "history 1 " << history.size() << '\n';
  for (const MetricsRecord& r : history) {
    os << r.iteration << ' ' << fmt_a(r.src_test_acc) << ' ' << fmt_a(r.tgt_test_acc) << ' '
       << (r.degenerate ? 1 : 0) << ' ' << fmt_a(r.probe_mean) << ' ' << fmt_a(r.probe_max) << ' '
       << r.components.size();
    for (const auto& [k, v] : r.components) os << ' ' << k << ' ' << fmt_a(v);
    os << ' ' << r.term_seconds.size();
    for (const auto& [k, v] : r.term_seconds) os << ' ' << k << ' ' << fmt_a(v);
    os << '\n';
  }
  return os.str();
}

// istream extraction rejects hexfloat tokens; strtod accepts them.
double read_hex_double(std::istream& is) {
  std::string tok;
  is >> tok;
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (tok.empty() || end != tok.c_str() + tok.size()) {
    throw IoError("checkpoint: malformed history");
  }
  return v;
}

std::vector<MetricsRecord> history_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string tag;
  int version = 0;
  size_t count = 0;
  is >> tag >> version >> count;
  if (!is || tag != "history" || version != 1) throw IoError("checkpoint: malformed history");
  std::vector<MetricsRecord> out(count);
  for (MetricsRecord& r : out) {
    int degenerate = 0;
    is >> r.iteration;
    r.src_test_acc = read_hex_double(is);
    r.tgt_test_acc = read_hex_double(is);
    is >> degenerate;
    r.degenerate = degenerate != 0;
    r.probe_mean = read_hex_double(is);
    r.probe_max = read_hex_double(is);
    for (auto* m : {&r.components, &r.term_seconds}) {
      size_t entries = 0;
      is >> entries;
      if (!is) throw IoError("checkpoint: malformed history");
      for (size_t i = 0; i < entries; ++i) {
        std::string key;
        is >> key;
        (*m)[key] = read_hex_double(is);
      }
    }
    if (!is) throw IoError("checkpoint: malformed history");
  }
  return out;
}

double component(const MetricsRecord& rec, const char* key) {
  const auto it = rec.components.find(key);
  return it == rec.components.end() ? 0.0 : it->second;
}

// The metrics invariant: the logged total must be the weighted sum of the
// logged components. Recomputed with the same association the objective
// builder uses.
void check_weighted_sum(const MetricsRecord& rec, const LossWeights& w, bool refine) {
  if (rec.components.empty()) return;
  double expect = 0.0;
  if (refine) {
    expect = w.lambda_t * (component(rec, "l_m_tgt") + component(rec, "l_v_tgt") +
                           component(rec, "l_c_tgt")) +
             w.beta * component(rec, "kl_teacher");
  } else {
    expect = component(rec, "l_y") + w.lambda_d * component(rec, "l_d_gen") +
             w.lambda_s * (component(rec, "l_m_src") + component(rec, "l_v_src")) +
             w.lambda_t * (component(rec, "l_m_tgt") + component(rec, "l_v_tgt") +
                           component(rec, "l_c_tgt"));
  }
  if (std::fabs(expect - component(rec, "total")) > 1e-12) {
    throw NumericError("metrics: total " + std::to_string(component(rec, "total")) +
                       " diverges from the weighted component sum " + std::to_string(expect));
  }
}

MetricsRecord eval_record(const TrainState& state, const TaskData& data,
                          const ExperimentConfig& cfg, const CombinedResult* last) {
  MetricsRecord rec;
  rec.iteration = state.iter;
  rec.src_test_acc = accuracy(state.params, WeightSource::ema, data.src.test);
  rec.tgt_test_acc = accuracy(state.params, WeightSource::ema, data.tgt.test);
  if (last) {
    rec.components = last->components;
    rec.term_seconds = last->seconds;
  }
  const double entropy =
      mean_prediction_entropy(state.params, WeightSource::ema, data.tgt.test.inputs());
  rec.degenerate = is_degenerate(entropy, rec.tgt_test_acc, data.tgt.test.classes());

  ProbeConfig pc;
  const int64_t n = data.tgt.test.size();
  pc.pairs = std::min(cfg.probe_pairs, n * (n - 1) / 2);
  pc.lambdas = cfg.probe_lambdas;
  pc.full_jacobian = cfg.probe_full_jacobian;
  pc.seed = RngStream::derive_seed(cfg.seed, "probe");
  const ProbeResult probe =
      interpolation_grad_norms(state.params, WeightSource::ema, data.tgt.test.inputs(), pc);
  rec.probe_mean = probe.mean;
  rec.probe_max = probe.max;
  return rec;
}

std::vector<Tensor> snapshot_values(const ModelParams& params) {
  std::vector<Tensor> out;
  out.reserve(params.entries().size());
  for (const Param& p : params.entries()) out.push_back(p.value);
  return out;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  for (int64_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

void check_group_discipline(const ModelParams& params, const std::vector<Tensor>& before,
                            Group allowed, const char* step) {
  const auto& entries = params.entries();
  for (size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].group == allowed) continue;
    if (!bitwise_equal(entries[i].value, before[i])) {
      throw Error(std::string("group discipline: ") + step + " modified " + entries[i].name);
    }
  }
}

}  // namespace

TaskData prepare_data(const ExperimentConfig& cfg) {
  cfg.validate();
  TaskSpec spec = cfg.task;
  spec.seed = RngStream::derive_seed(cfg.seed, "data");
  TaskData data;
  data.src = standardize(gen_source(spec), spec.normalization);
  data.tgt = standardize(gen_target(spec), spec.normalization);
  return data;
}

TrainState init_state(const ExperimentConfig& cfg) {
  cfg.validate();
  TrainState state;
  state.params = ModelParams::init(cfg.model, RngStream::derive_seed(cfg.seed, "init"));
  state.loss_rng = RngStream(RngStream::derive_seed(cfg.seed, "loss"));
  return state;
}

Checkpoint to_checkpoint(const TrainState& state, const ExperimentConfig& cfg) {
  Checkpoint ck;
  ck.put_text("format", "vmtlab-state-1");
  ck.put_text("phase", state.phase);
  ck.put_u64("iter", static_cast<uint64_t>(state.iter));
  ck.put_u64("disc_t", state.disc_t);
  ck.put_u64("gen_t", state.gen_t);
  ck.put_text("rng/loss", state.loss_rng.serialize());
  ck.put_text("batches", state.batch_state);
  ck.put_text("history", history_to_text(state.history));
  ck.put_text("config", serialize_config(cfg));
  ck.put_model("model", state.params);
  if (state.has_teacher) ck.put_model("teacher", state.teacher);
  return ck;
}

TrainState from_checkpoint(const Checkpoint& ck) {
  if (!ck.has_text("format") || ck.text("format") != "vmtlab-state-1") {
    throw IoError("checkpoint: unrecognized state format");
  }
  TrainState state;
  state.phase = ck.text("phase");
  state.iter = static_cast<int64_t>(ck.u64("iter"));
  state.disc_t = ck.u64("disc_t");
  state.gen_t = ck.u64("gen_t");
  state.loss_rng = RngStream::deserialize(ck.text("rng/loss"));
  state.batch_state = ck.text("batches");
  state.history = history_from_text(ck.text("history"));
  state.params = ck.model("model");
  if (ck.has_text("teacher/spec")) {
    state.teacher = ck.model("teacher");
    state.has_teacher = true;
  }
  return state;
}

ModelParams ema_snapshot(const ModelParams& params) {
  ModelParams out = params;
  for (Param& p : out.entries()) {
    p.value = p.ema;
    p.adam_m = Tensor::zeros(p.value.shape());
    p.adam_v = Tensor::zeros(p.value.shape());
  }
  return out;
}

TrainState train_vmt(TrainState state, const TaskData& data, const ExperimentConfig& cfg,
                     const MetricsSink& sink) {
  cfg.validate();
  if (state.phase != "vmt") throw ValueError("train_vmt: state already entered refinement");
  if (state.params.spec() != cfg.model) {
    throw ValueError("train_vmt: state model " + serialize_model_spec(state.params.spec()) +
                     " does not match config model " + serialize_model_spec(cfg.model));
  }
  const std::vector<Group> gen_groups = {Group::encoder_g, Group::head_h};

  BatchIter batches(data.src.train, data.tgt.train, cfg.batch, RngStream(cfg.seed).derive("batch"));
  if (!state.batch_state.empty()) batches.restore(state.batch_state);

  auto record = [&](const CombinedResult* last) {
    MetricsRecord rec = eval_record(state, data, cfg, last);
    check_weighted_sum(rec, cfg.weights, false);
    state.history.push_back(rec);
    if (sink) sink(rec);
  };

  if (state.iter >= cfg.iters) {
    if (state.history.empty()) record(nullptr);
    state.batch_state = batches.serialize();
    return state;
  }

  for (int64_t it = state.iter; it < cfg.iters; ++it) {
    const BatchIter::Batch b = batches.next();
    CombinedResult res;

    // Step A: discriminator only. A zero lambda_d disables the adversarial
    // channel outright, leaving a plain supervised trajectory.
    if (cfg.weights.lambda_d > 0) {
      const std::vector<Tensor> before =
          cfg.debug_checks ? snapshot_values(state.params) : std::vector<Tensor>{};
      try {
        for (int64_t j = 0; j < cfg.disc_steps; ++j) {
          Tape tape;
          BoundModel model(tape, state.params, WeightSource::raw);
          const Tensor d_src = model.discriminate(model.features(b.x_src));
          const Tensor d_tgt = model.discriminate(model.features(b.x_tgt));
          const Tensor disc = domain_losses(tape, d_src, d_tgt).disc;
          const GradList grads =
              model.group_grads(tape.backward(disc), {Group::discriminator_d});
          adam_step(state.params, {Group::discriminator_d}, grads, cfg.adam, ++state.disc_t);
        }
      } catch (const NumericError& e) {
        throw NumericError("iteration " + std::to_string(it + 1) +
                           ": discriminator step: " + e.what());
      }
      if (cfg.debug_checks) {
        check_group_discipline(state.params, before, Group::discriminator_d, "step A");
      }
    }

    // Step B: encoder and head through the combined objective.
    {
      const std::vector<Tensor> before =
          cfg.debug_checks ? snapshot_values(state.params) : std::vector<Tensor>{};
      try {
        Tape tape;
        BoundModel model(tape, state.params, WeightSource::raw);
        res = combined_objective(model, b.x_src, b.y_src, b.x_tgt, cfg.weights, cfg.vat, cfg.mix,
                                 cfg.mask, state.loss_rng);
        const GradList grads = model.group_grads(tape.backward(res.total), gen_groups);
        adam_step(state.params, gen_groups, grads, cfg.adam, ++state.gen_t);
      } catch (const NumericError& e) {
        throw NumericError("iteration " + std::to_string(it + 1) +
                           ": objective step: " + e.what());
      }
      if (cfg.debug_checks) {
        const auto& entries = state.params.entries();
        for (size_t i = 0; i < entries.size(); ++i) {
          if (entries[i].group == Group::discriminator_d &&
              !bitwise_equal(entries[i].value, before[i])) {
            throw Error("group discipline: step B modified " + entries[i].name);
          }
        }
      }
    }

    // Step C: evaluation shadows follow the trajectory.
    ema_update(state.params, cfg.ema_momentum);
    state.iter = it + 1;
    if ((it + 1) % cfg.eval_interval == 0 || it + 1 == cfg.iters) record(&res);
  }
  state.batch_state = batches.serialize();
  return state;
}

TrainState train_vmt(const ExperimentConfig& cfg, const MetricsSink& sink) {
  return train_vmt(init_state(cfg), prepare_data(cfg), cfg, sink);
}

TrainState refine_dirt_t(TrainState state, const TaskData& data, const ExperimentConfig& cfg,
                         const MetricsSink& sink) {
  cfg.validate();
  if (state.params.spec() != cfg.model) {
    throw ValueError("refine: state model " + serialize_model_spec(state.params.spec()) +
                     " does not match config model " + serialize_model_spec(cfg.model));
  }
  if (state.phase != "refine") {
    state.phase = "refine";
    state.iter = 0;
    state.history.clear();
    state.teacher = ema_snapshot(state.params);
    state.has_teacher = true;
    // The student continues from the deployed (EMA) model, not the raw
    // weights it shadows; otherwise the first refinement steps re-track the
    // shadow onto the raw trajectory and the handoff costs accuracy before
    // any refinement happens. Fresh optimizer for the new phase.
    state.params = state.teacher;
    state.gen_t = 0;
    state.loss_rng = RngStream(cfg.seed).derive("refine/loss");
    state.batch_state.clear();
  }
  const std::vector<Group> gen_groups = {Group::encoder_g, Group::head_h};

  CycleIter batches(data.tgt.train, cfg.batch, RngStream(cfg.seed).derive("refine/batch"));
  if (!state.batch_state.empty()) batches.restore(state.batch_state);

  auto record = [&](const CombinedResult* last) {
    MetricsRecord rec = eval_record(state, data, cfg, last);
    check_weighted_sum(rec, cfg.weights, true);
    state.history.push_back(rec);
    if (sink) sink(rec);
  };

  if (state.iter >= cfg.refine_iters) {
    if (state.history.empty()) record(nullptr);
    state.batch_state = batches.serialize();
    return state;
  }

  for (int64_t it = state.iter; it < cfg.refine_iters; ++it) {
    const Tensor x_tgt = batches.next();
    CombinedResult res;
    try {
      Tape tape;
      BoundModel student(tape, state.params, WeightSource::raw);
      res = dirt_t_objective(student, state.teacher, x_tgt, cfg.weights, cfg.vat, cfg.mix,
                             cfg.mask, state.loss_rng);
      const GradList grads = student.group_grads(tape.backward(res.total), gen_groups);
      adam_step(state.params, gen_groups, grads, cfg.adam, ++state.gen_t);
    } catch (const NumericError& e) {
      throw NumericError("refinement iteration " + std::to_string(it + 1) + ": " + e.what());
    }

    ema_update(state.params, cfg.ema_momentum);
    state.iter = it + 1;
    if ((it + 1) % cfg.refine_interval == 0) {
      state.teacher = ema_snapshot(state.params);
    }
    if ((it + 1) % cfg.eval_interval == 0 || it + 1 == cfg.refine_iters) record(&res);
  }
  state.batch_state = batches.serialize();
  return state;
}

TrainState refine_dirt_t(TrainState init, const ExperimentConfig& cfg, const MetricsSink& sink) {
  return refine_dirt_t(std::move(init), prepare_data(cfg), cfg, sink);
}

SweepSummary summarize(std::vector<RunOutcome> runs) {
  SweepSummary s;
  std::vector<double> accs;
  for (const RunOutcome& r : runs) {
    if (r.status == "failed") {
      ++s.failures;
    } else {
      accs.push_back(r.tgt_acc);
    }
  }
  s.runs = std::move(runs);
  if (accs.empty()) {
    s.mean = s.stddev = s.median = s.min = s.max = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  std::sort(accs.begin(), accs.end());
  const size_t n = accs.size();
  s.min = accs.front();
  s.max = accs.back();
  s.median = n % 2 == 1 ? accs[n / 2] : 0.5 * (accs[n / 2 - 1] + accs[n / 2]);
  double mean = 0.0;
  for (double a : accs) mean += a;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double a : accs) var += (a - mean) * (a - mean);
  s.mean = mean;
  s.stddev = std::sqrt(var / static_cast<double>(n));
  return s;
}

namespace {

RunOutcome one_run(ExperimentConfig cfg, uint64_t seed) {
  cfg.seed = seed;
  RunOutcome out;
  out.seed = seed;
  try {
    const TaskData data = prepare_data(cfg);
    const TrainState state = train_vmt(init_state(cfg), data, cfg);
    const MetricsRecord& last = state.history.back();
    out.tgt_acc = last.tgt_test_acc;
    out.degenerate = last.degenerate;
    out.status = last.degenerate ? "degenerate" : "completed";
  } catch (const std::exception& e) {
    out.tgt_acc = std::numeric_limits<double>::quiet_NaN();
    out.status = "failed";
    out.error = e.what();
  }
  return out;
}

}  // namespace

SweepSummary seed_sweep(const ExperimentConfig& cfg, const std::vector<uint64_t>& seeds,
                        int jobs) {
  if (seeds.empty()) throw ValueError("sweep: seed list is empty");
  if (std::set<uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ValueError("sweep: seeds must be distinct");
  }
  std::vector<RunOutcome> outcomes(seeds.size());
  const int64_t count = static_cast<int64_t>(seeds.size());
#if defined(_OPENMP)
#pragma omp parallel for schedule(dynamic) num_threads(std::max(jobs, 1)) if (jobs > 1)
#endif
  for (int64_t i = 0; i < count; ++i) {
    outcomes[static_cast<size_t>(i)] = one_run(cfg, seeds[static_cast<size_t>(i)]);
  }
  (void)jobs;
  return summarize(std::move(outcomes));
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& base,
                                      const std::vector<LossTermMask>& rows,
                                      const std::vector<uint64_t>& seeds, int jobs) {
  if (rows.empty()) throw ValueError("ablation: row list is empty");
  std::vector<AblationRow> out;
  out.reserve(rows.size());
  for (const LossTermMask& mask : rows) {
    ExperimentConfig cfg = base;
    cfg.mask = mask;
    AblationRow row;
    row.mask = mask;
    row.summary = seed_sweep(cfg, seeds, jobs);
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<LossTermMask> default_ablation_rows(MixSite site) {
  std::vector<LossTermMask> rows(4);
  rows[0] = {true, false, false, site};
  rows[1] = {true, true, false, site};
  rows[2] = {true, false, true, site};
  rows[3] = {true, true, true, site};
  return rows;
}

}  // namespace vmt
