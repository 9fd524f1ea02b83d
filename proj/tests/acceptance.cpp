// End-to-end acceptance checks. Each numbered criterion prints exactly one
// PASS/FAIL line; the process exits nonzero if any fail. Training-based
// criteria share the same per-seed arms so the whole suite stays under the
// ctest timeout on one core.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vmt/config.hpp"
#include "vmt/data.hpp"
#include "vmt/eval.hpp"
#include "vmt/grad_check.hpp"
#include "vmt/losses.hpp"
#include "vmt/nn.hpp"
#include "vmt/rng.hpp"
#include "vmt/run_io.hpp"
#include "vmt/tape.hpp"
#include "vmt/tensor.hpp"
#include "vmt/trainer.hpp"

using namespace vmt;

namespace {

bool g_all_ok = true;

void report(int idx, const char* name, bool ok, const std::string& detail) {
  std::printf("%s — %2d. %s (%s)\n", ok ? "PASS" : "FAIL", idx, name, detail.c_str());
  std::fflush(stdout);
  g_all_ok = g_all_ok && ok;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::string config_dir() {
  const char* dir = std::getenv("VMT_CONFIG_DIR");
  return dir != nullptr && *dir != '\0' ? dir : "configs";
}

Tensor normal_matrix(int64_t n, int64_t d, RngStream& rng) {
  Tensor t = Tensor::zeros({n, d});
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

Tensor onehot_rows(int64_t n, int64_t classes, RngStream& rng) {
  Tensor t = Tensor::zeros({n, classes});
  for (int64_t i = 0; i < n; ++i) t.at(i, rng.uniform_int(classes)) = 1.0;
  return t;
}

double row_kl(const Tensor& p, const Tensor& q, int64_t row) {
  double kl = 0.0;
  for (int64_t k = 0; k < p.cols(); ++k) {
    const double pk = p.at(row, k);
    if (pk > 0.0) kl += pk * (std::log(pk) - std::log(std::max(q.at(row, k), 1e-30)));
  }
  return kl;
}

double mean_kl(const ModelParams& a, const ModelParams& b, const Tensor& x) {
  const Tensor p = forward_classifier(a, WeightSource::raw, x).probs;
  const Tensor q = forward_classifier(b, WeightSource::raw, x).probs;
  double sum = 0.0;
  for (int64_t i = 0; i < x.rows(); ++i) sum += row_kl(p, q, i);
  return sum / static_cast<double>(x.rows());
}

// 1. Tape gradients of the full training objective against central
// differences, over every parameter of all three groups.
void check_gradient_fidelity() {
  const double t0 = now_s();
  ModelSpec spec;
  spec.g_widths = {16, 16};
  spec.d_widths = {16};
  const LossWeights weights = {0.01, 1.0, 0.1, 10.0};
  const VatConfig vat;
  const MixupConfig mix;
  const LossTermMask mask;

  double worst = 0.0;
  bool ok = true;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    RngStream ds(RngStream::derive_seed(seed, "fd/data"));
    const Tensor x_src = normal_matrix(8, 2, ds);
    const Tensor y_src = onehot_rows(8, 2, ds);
    const Tensor x_tgt = normal_matrix(8, 2, ds);
    ModelParams params = ModelParams::init(spec, RngStream::derive_seed(seed, "fd/init"));
    const uint64_t rng_seed = RngStream::derive_seed(seed, "fd/rng");
    const std::vector<Group> all = {Group::encoder_g, Group::head_h, Group::discriminator_d};

    FrozenObjective frozen;  // first call captures the draws, the rest replay
    Tensor grad_flat = Tensor::zeros({params.values_flat().size()});
    {
      Tape tape;
      BoundModel model(tape, params, WeightSource::raw);
      RngStream rng(rng_seed);
      const CombinedResult res =
          combined_objective(model, x_src, y_src, x_tgt, weights, vat, mix, mask, rng, &frozen);
      const GradList grads = model.group_grads(tape.backward(res.total), all);
      int64_t offset = 0;
      for (size_t i = 0; i < params.entries().size(); ++i) {
        const int64_t len = params.entries()[i].value.size();
        for (const auto& [idx, g] : grads) {
          if (idx == i) {
            for (int64_t j = 0; j < len; ++j) grad_flat[offset + j] = g[j];
          }
        }
        offset += len;
      }
    }

    const auto fn = [&](const Tensor& flat) {
      ModelParams p = params;
      p.set_values_flat(flat);
      Tape tape;
      BoundModel model(tape, p, WeightSource::raw);
      RngStream rng(rng_seed);
      return combined_objective(model, x_src, y_src, x_tgt, weights, vat, mix, mask, rng, &frozen)
          .total.item();
    };
    const FdReport rep = finite_diff_check(fn, params.values_flat(), grad_flat, 1e-5, 1e-4);
    worst = std::max(worst, rep.max_rel_err);
    ok = ok && rep.pass;
  }
  const double secs = now_s() - t0;
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "max rel err %.3e over 5 seeds, tol 1e-4; %.1fs", worst, secs);
  report(1, "gradient fidelity of the combined objective", ok && secs < 60.0, detail);
}

// 2. With affine logits, mixing logits commutes with the network exactly, so
// the mixup penalty collapses to KL of a distribution with itself.
void check_affine_logits_identity() {
  ModelSpec spec;
  spec.g_widths = {8, 8};
  spec.d_widths = {4};
  spec.hidden_act = Activation::identity;
  const ModelParams params = ModelParams::init(spec, 7);
  MixupConfig mix;
  mix.per_sample_lambda = true;  // fresh lambda for every row
  RngStream rng(RngStream::derive_seed(0, "lemma"));

  double worst = 0.0;
  for (int call = 0; call < 10; ++call) {
    const Tensor x = normal_matrix(100, 2, rng);
    Tape tape;
    BoundModel model(tape, params, WeightSource::raw);
    worst = std::max(worst, vmt_loss(model, x, mix, MixSite::logits, rng).item());
  }
  char detail[120];
  std::snprintf(detail, sizeof(detail), "max loss %.3e over 1000 pair/lambda draws, tol 1e-10",
                worst);
  report(2, "affine-logits mixup identity", worst < 1e-10, detail);
}

// 3. KL building block: nonnegative, zero on identical rows, two hand values.
void check_kl_suite() {
  RngStream rng(RngStream::derive_seed(0, "kl"));
  double min_kl = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const int64_t k = 2 + rng.uniform_int(7);
    Tensor p = Tensor::zeros({1, k}), q = Tensor::zeros({1, k});
    double ps = 0.0, qs = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      p[j] = rng.uniform(1e-6, 1.0);
      q[j] = rng.uniform(1e-6, 1.0);
      ps += p[j];
      qs += q[j];
    }
    for (int64_t j = 0; j < k; ++j) {
      p[j] /= ps;
      q[j] /= qs;
    }
    Tape tape;
    min_kl = std::min(min_kl, kl_divergence(tape, p, q).item());
    Tape tape2;
    const double self = std::fabs(kl_divergence(tape2, p, p).item());
    min_kl = self > 1e-12 ? -1.0 : min_kl;  // identical rows must give ~0
  }

  Tape tape;
  const double hand1 =
      kl_divergence(tape, Tensor({1, 2}, {0.5, 0.5}), Tensor({1, 2}, {0.25, 0.75})).item();
  const double hand2 =
      kl_divergence(tape, Tensor({1, 2}, {1.0, 0.0}), Tensor({1, 2}, {0.5, 0.5})).item();
  const double want1 = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);  // ~0.1438410
  const bool ok = min_kl >= -1e-9 && std::fabs(hand1 - want1) <= 1e-6 &&
                  std::fabs(hand2 - std::log(2.0)) <= 1e-9;
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "min %.1e on 10000 pairs; KL([.5,.5]||[.25,.75])=%.6f; KL([1,0]||[.5,.5])-ln2=%.1e",
                min_kl, hand1, hand2 - std::log(2.0));
  report(3, "kl divergence suite", ok, detail);
}

// 4. The adversarial perturbation has exact norm epsilon and raises KL more
// than a random direction of the same norm on a trained model.
void check_vat_contract(const ExperimentConfig& toy) {
  ExperimentConfig cfg = toy;
  cfg.task.n = 1400;
  cfg.iters = 300;
  cfg.eval_interval = 300;
  cfg.probe_pairs = 10;
  cfg.probe_lambdas = 3;
  const TaskData data = prepare_data(cfg);
  const TrainState state = train_vmt(init_state(cfg), data, cfg);

  const int64_t n = 1000;
  Tensor x = Tensor::zeros({n, 2});
  const Tensor& pool = data.tgt.train.inputs();
  for (int64_t i = 0; i < n; ++i) {
    x.at(i, 0) = pool.at(i % pool.rows(), 0);
    x.at(i, 1) = pool.at(i % pool.rows(), 1);
  }

  VatConfig vat;
  vat.epsilon = 0.02;
  RngStream rng(RngStream::derive_seed(0, "vatdir"));
  FrozenVat frozen;
  {
    Tape tape;
    BoundModel model(tape, state.params, WeightSource::ema);
    vat_loss(model, x, vat, rng, &frozen);
  }

  double norm_err = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double norm = std::hypot(frozen.r.at(i, 0), frozen.r.at(i, 1));
    norm_err = std::max(norm_err, std::fabs(norm - vat.epsilon));
  }

  Tensor x_adv = x, x_rnd = x;
  for (int64_t i = 0; i < n; ++i) {
    double g0 = rng.normal(), g1 = rng.normal();
    const double g = std::hypot(g0, g1);
    x_adv.at(i, 0) += frozen.r.at(i, 0);
    x_adv.at(i, 1) += frozen.r.at(i, 1);
    x_rnd.at(i, 0) += vat.epsilon * g0 / g;
    x_rnd.at(i, 1) += vat.epsilon * g1 / g;
  }
  const Tensor p = forward_classifier(state.params, WeightSource::ema, x).probs;
  const Tensor q_adv = forward_classifier(state.params, WeightSource::ema, x_adv).probs;
  const Tensor q_rnd = forward_classifier(state.params, WeightSource::ema, x_rnd).probs;
  int64_t wins = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (row_kl(p, q_adv, i) > row_kl(p, q_rnd, i)) ++wins;
  }

  char detail[120];
  std::snprintf(detail, sizeof(detail), "max |norm-eps| %.2e; adversarial wins %lld/1000",
                norm_err, static_cast<long long>(wins));
  report(4, "vat perturbation contract", norm_err <= 1e-6 && wins >= 950, detail);
}

// 5. Beta(1,1) must be uniform.
void check_beta_sampler() {
  RngStream rng(RngStream::derive_seed(0, "beta"));
  const int64_t n = 10000;
  std::vector<double> draws(n);
  for (double& d : draws) d = rng.beta_symmetric(1.0);
  std::sort(draws.begin(), draws.end());
  double sup = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double lo = static_cast<double>(i) / n, hi = static_cast<double>(i + 1) / n;
    sup = std::max(sup, std::max(std::fabs(draws[i] - lo), std::fabs(hi - draws[i])));
  }
  char detail[80];
  std::snprintf(detail, sizeof(detail), "ECDF sup deviation %.4f, tol 0.02", sup);
  report(5, "beta(1,1) sampler uniformity", sup < 0.02, detail);
}

struct Arms {
  std::vector<double> full_acc, src_acc, lc_acc, lclv_probe, full_probe;
  std::vector<TrainState> full_states;
  double max_run_s = 0.0;
};

Arms run_arms(const ExperimentConfig& toy) {
  Arms a;
  for (uint64_t s = 0; s < 10; ++s) {
    ExperimentConfig cfg = toy;
    cfg.seed = s;
    const TaskData data = prepare_data(cfg);

    const double t0 = now_s();
    TrainState full = train_vmt(init_state(cfg), data, cfg);
    a.max_run_s = std::max(a.max_run_s, now_s() - t0);
    a.full_acc.push_back(full.history.back().tgt_test_acc);
    a.full_probe.push_back(full.history.back().probe_mean);
    a.full_states.push_back(std::move(full));

    ExperimentConfig src = cfg;
    src.weights.lambda_d = src.weights.lambda_s = src.weights.lambda_t = 0.0;
    a.src_acc.push_back(train_vmt(init_state(src), data, src).history.back().tgt_test_acc);

    ExperimentConfig lc = cfg;
    lc.mask.use_lv = lc.mask.use_lm = false;
    a.lc_acc.push_back(train_vmt(init_state(lc), data, lc).history.back().tgt_test_acc);

    ExperimentConfig lclv = cfg;
    lclv.mask.use_lm = false;
    a.lclv_probe.push_back(
        train_vmt(init_state(lclv), data, lclv).history.back().probe_mean);
  }
  return a;
}

// 6. Adaptation beats source-only with a wide margin, and dropping terms from
// the target objective never helps.
void check_adaptation_ordering(const Arms& a) {
  int gap_hits = 0;
  for (size_t s = 0; s < 10; ++s) {
    if (a.full_acc[s] - a.src_acc[s] >= 10.0) ++gap_hits;
  }
  const double med_full = median_of(a.full_acc);
  const double med_src = median_of(a.src_acc);
  const double med_lc = median_of(a.lc_acc);
  const bool ok =
      med_src < med_full && gap_hits >= 8 && med_lc <= med_full && a.max_run_s < 120.0;
  char detail[180];
  std::snprintf(detail, sizeof(detail),
                "medians: source-only %.1f < full %.1f; gap>=10 on %d/10 seeds; "
                "{Lc} median %.1f <= %.1f; slowest run %.0fs",
                med_src, med_full, gap_hits, med_lc, med_full, a.max_run_s);
  report(6, "adaptation ordering", ok, detail);
}

// 7. Mixup flattens the model between target points: the full stack's mean
// interpolation gradient norm sits below the no-mixup stack's.
void check_interpolation_smoothing(const Arms& a) {
  int hits = 0;
  for (size_t s = 0; s < 10; ++s) {
    if (a.full_probe[s] < a.lclv_probe[s]) ++hits;
  }
  char detail[120];
  std::snprintf(detail, sizeof(detail),
                "full < {Lc,Lv} probe mean on %d/10 paired seeds (e.g. %.3f vs %.3f)", hits,
                a.full_probe[0], a.lclv_probe[0]);
  report(7, "interpolation smoothing from mixup", hits >= 8, detail);
}

// 8. Probability-site mixing is the less stable variant on the hard task;
// any NaN abort may only come from that arm, and both reports still land.
void check_mix_site_stability(const ExperimentConfig& hard) {
  const std::vector<uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  ExperimentConfig logits_cfg = hard;
  logits_cfg.mask.site = MixSite::logits;
  ExperimentConfig prob_cfg = hard;
  prob_cfg.mask.site = MixSite::probabilities;

  const SweepSummary logits_sum = seed_sweep(logits_cfg, seeds);
  const SweepSummary prob_sum = seed_sweep(prob_cfg, seeds);

  std::filesystem::create_directories("acceptance_tmp");
  write_sweep_csv_file("acceptance_tmp/hard_logits.csv", logits_sum);
  write_sweep_csv_file("acceptance_tmp/hard_probabilities.csv", prob_sum);
  const bool reports_emitted = std::filesystem::file_size("acceptance_tmp/hard_logits.csv") > 0 &&
                               std::filesystem::file_size("acceptance_tmp/hard_probabilities.csv") > 0;

  const bool ok = prob_sum.stddev >= logits_sum.stddev && logits_sum.failures == 0 &&
                  reports_emitted;
  char detail[180];
  std::snprintf(detail, sizeof(detail),
                "acc std probabilities %.2f >= logits %.2f; aborts: logits %lld, prob %lld; "
                "both reports written",
                prob_sum.stddev, logits_sum.stddev, static_cast<long long>(logits_sum.failures),
                static_cast<long long>(prob_sum.failures));
  report(8, "mix-site stability ordering", ok, detail);
}

// 9. Refinement never costs more than a point on most seeds, and a huge
// anchor weight pins the student to the teacher.
void check_refinement_safety(const ExperimentConfig& toy, const Arms& a) {
  int hits = 0;
  double worst_drop = 0.0;
  for (uint64_t s = 0; s < 10; ++s) {
    ExperimentConfig cfg = toy;
    cfg.seed = s;
    const TaskData data = prepare_data(cfg);
    const TrainState refined = refine_dirt_t(a.full_states[s], data, cfg);
    const double post = refined.history.back().tgt_test_acc;
    const double pre = a.full_acc[s];
    worst_drop = std::max(worst_drop, pre - post);
    if (post >= pre - 1.0) ++hits;
  }

  ExperimentConfig pin = toy;
  pin.seed = 0;
  pin.weights.beta = 1e6;
  pin.refine_iters = 200;
  pin.refine_interval = 1000;  // teacher never refreshes
  pin.eval_interval = 200;
  const TaskData data0 = prepare_data(pin);
  const TrainState pinned = refine_dirt_t(a.full_states[0], data0, pin);
  const double kl = mean_kl(pinned.teacher, pinned.params, data0.tgt.train.inputs());

  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "acc >= pre-1.0 on %d/10 seeds (worst drop %.2f); beta=1e6 mean KL %.2e", hits,
                worst_drop, kl);
  report(9, "refinement safety", hits >= 8 && kl <= 1e-3, detail);
}

// 10. EMA follows its defining recurrence bit for bit, and the CLI is
// deterministic end to end.
void check_ema_and_determinism(const ExperimentConfig& toy) {
  ModelSpec spec;
  spec.g_widths = {8, 8};
  spec.d_widths = {4};
  ModelParams params = ModelParams::init(spec, 3);
  RngStream rng(RngStream::derive_seed(0, "ema"));
  for (Param& p : params.entries()) {
    for (int64_t i = 0; i < p.ema.size(); ++i) p.ema[i] = p.value[i] + rng.normal();
  }
  std::vector<std::vector<double>> expect;
  for (const Param& p : params.entries()) {
    expect.emplace_back(p.ema.data(), p.ema.data() + p.ema.size());
  }

  const double momentum = 0.998;
  bool bitwise = true;
  double contraction_err = 0.0;
  for (int step = 0; step < 10; ++step) {
    ema_update(params, momentum);
    for (size_t pi = 0; pi < params.entries().size(); ++pi) {
      const Param& p = params.entries()[pi];
      for (int64_t i = 0; i < p.ema.size(); ++i) {
        const double want = momentum * expect[pi][i] + (1.0 - momentum) * p.value[i];
        const double got = p.ema[i];
        bitwise = bitwise && std::memcmp(&want, &got, sizeof(double)) == 0;
        expect[pi][i] = want;
      }
    }
  }
  // Distance to the frozen values contracts by the momentum factor per step.
  {
    const Param& p = params.entries()[0];
    RngStream r2(RngStream::derive_seed(0, "ema"));
    const double d0 = r2.normal();  // initial offset of coordinate 0
    const double dk = p.ema[0] - p.value[0];
    contraction_err = std::fabs(dk / (d0 * std::pow(momentum, 10)) - 1.0);
  }

  bool cli_ok = false;
  std::string cli_note = "VMT_CLI not set";
  if (const char* cli = std::getenv("VMT_CLI")) {
    ExperimentConfig small = toy;
    small.task.n = 200;
    small.iters = 50;
    small.eval_interval = 25;
    small.probe_pairs = 10;
    small.probe_lambdas = 3;
    std::filesystem::create_directories("acceptance_tmp");
    std::ofstream("acceptance_tmp/small.cfg") << serialize_config(small);
    const std::string base = std::string(cli) +
                             " train --config acceptance_tmp/small.cfg --out acceptance_tmp/";
    const int rc1 = std::system((base + "d1 >/dev/null 2>&1").c_str());
    const int rc2 = std::system((base + "d2 >/dev/null 2>&1").c_str());
    const auto slurp = [](const char* path) {
      std::ostringstream os;
      os << std::ifstream(path, std::ios::binary).rdbuf();
      return os.str();
    };
    const std::string m1 = slurp("acceptance_tmp/d1/metrics.csv");
    const std::string m2 = slurp("acceptance_tmp/d2/metrics.csv");
    cli_ok = rc1 != -1 && WEXITSTATUS(rc1) == 0 && rc2 != -1 && WEXITSTATUS(rc2) == 0 &&
             !m1.empty() && m1 == m2;
    cli_note = cli_ok ? "two cli runs byte-identical" : "cli metrics differ";
  }

  char detail[160];
  std::snprintf(detail, sizeof(detail), "recurrence bitwise over 10 steps; contraction err %.1e; %s",
                contraction_err, cli_note.c_str());
  report(10, "ema contraction and cli determinism", bitwise && contraction_err < 1e-12 && cli_ok,
         detail);
}

// 11. The mixup term costs less than the adversarial term per update.
void check_term_timing(const ExperimentConfig& toy) {
  const ModelParams params = ModelParams::init(toy.model, 11);
  RngStream rng(RngStream::derive_seed(0, "timing"));
  const Tensor x = normal_matrix(toy.batch, 2, rng);
  const TermTiming t = time_loss_terms(params, x, toy.vat, toy.mix, toy.mask.site, 120,
                                       RngStream::derive_seed(0, "timing/run"));
  char detail[120];
  std::snprintf(detail, sizeof(detail), "mean L_m %.3es < mean L_v %.3es over %lld reps",
                t.lm_mean_s, t.lv_mean_s, static_cast<long long>(t.reps));
  report(11, "loss term timing", t.lm_mean_s < t.lv_mean_s && t.reps >= 100, detail);
}

}  // namespace

int main() {
  std::filesystem::remove_all("acceptance_tmp");
  const ExperimentConfig toy = load_config(config_dir() + "/toy.cfg");
  const ExperimentConfig hard = load_config(config_dir() + "/toy_hard.cfg");

  check_gradient_fidelity();
  check_affine_logits_identity();
  check_kl_suite();
  check_vat_contract(toy);
  check_beta_sampler();

  const Arms arms = run_arms(toy);
  check_adaptation_ordering(arms);
  check_interpolation_smoothing(arms);
  check_mix_site_stability(hard);
  check_refinement_safety(toy, arms);
  check_ema_and_determinism(toy);
  check_term_timing(toy);

  std::printf("%s\n", g_all_ok ? "all criteria passed" : "SOME CRITERIA FAILED");
  return g_all_ok ? 0 : 1;
}
