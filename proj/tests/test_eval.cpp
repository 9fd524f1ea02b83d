#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>
#include <utility>
#include <vector>

#include "vmt/errors.hpp"
#include "vmt/eval.hpp"
#include "vmt/rng.hpp"
#include "vmt/tape.hpp"

using namespace vmt;

namespace {

// Affine passthrough: identity weights and zero biases everywhere, so
// logits == x and every gradient has a closed form.
ModelParams identity_model() {
  ModelSpec spec;
  spec.g_widths = {2, 2};
  spec.hidden_act = Activation::identity;
  ModelParams params = ModelParams::init(spec, 0);
  const Tensor eye({2, 2}, {1.0, 0.0, 0.0, 1.0});
  for (const char* name : {"g.w0", "g.w1", "h.w"}) {
    Param& p = params.entries()[params.index_of(name)];
    p.value = eye;
    p.ema = eye;
  }
  return params;
}

// Constant classifier: zero head weights force probs = (1/2, 1/2).
ModelParams constant_model() {
  ModelParams params = identity_model();
  Param& p = params.entries()[params.index_of("h.w")];
  p.value = Tensor::zeros({2, 2});
  p.ema = p.value;
  return params;
}

Tensor one_hot2(const std::vector<int64_t>& y) {
  Tensor t = Tensor::zeros({static_cast<int64_t>(y.size()), 2});
  for (size_t i = 0; i < y.size(); ++i) t.at(static_cast<int64_t>(i), y[i]) = 1.0;
  return t;
}

DomainDataset labeled_set(Tensor x, const std::vector<int64_t>& y) {
  return DomainDataset::make(Domain::source, Split::test, std::move(x), Tensor(), one_hot2(y), 2);
}

Tensor random_inputs(int64_t n, uint64_t seed) {
  RngStream rng(seed);
  Tensor x = Tensor::zeros({n, 2});
  for (int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-2.0, 2.0);
  return x;
}

// Per-row softmax of an affine-identity model at x.
void softmax2(double x0, double x1, double* p0, double* p1) {
  const double m = std::max(x0, x1);
  const double e0 = std::exp(x0 - m);
  const double e1 = std::exp(x1 - m);
  *p0 = e0 / (e0 + e1);
  *p1 = e1 / (e0 + e1);
}

// Gradient norm of one row's predicted-class probability at the raw input,
// computed with a fresh single-row tape.
double plain_grad_norm(const ModelParams& params, WeightSource source, const Tensor& inputs,
                       int64_t row) {
  Tape tape;
  BoundModel model(tape, params, source);
  Tensor x0 = Tensor::zeros({1, inputs.cols()});
  for (int64_t c = 0; c < inputs.cols(); ++c) x0.at(0, c) = inputs.at(row, c);
  const Tensor x = tape.leaf(x0);
  const Tensor probs = model.classify(x).probs;
  int64_t best = 0;
  for (int64_t c = 1; c < probs.cols(); ++c) {
    if (probs.at(0, c) > probs.at(0, best)) best = c;
  }
  Tensor mask = Tensor::zeros({1, probs.cols()});
  mask.at(0, best) = 1.0;
  const Gradients g = tape.backward(tape.sum(tape.mul(probs, mask)));
  const Tensor& gx = g.at(x);
  double sq = 0.0;
  for (int64_t c = 0; c < gx.size(); ++c) sq += gx[c] * gx[c];
  return std::sqrt(sq);
}

}  // namespace

TEST_CASE("accuracy matches hand-scored predictions") {
  const ModelParams params = identity_model();
  const Tensor x({4, 2}, {2.0, 0.0, 0.0, 2.0, -1.0, 1.0, 0.3, 0.3});

  SUBCASE("all correct, ties break toward class 0") {
    const DomainDataset ds = labeled_set(x, {0, 1, 1, 0});
    CHECK(accuracy(params, WeightSource::raw, ds) == 100.0);
  }
  SUBCASE("one wrong out of four") {
    const DomainDataset ds = labeled_set(x, {0, 1, 1, 1});  // tie row predicts 0
    CHECK(accuracy(params, WeightSource::raw, ds) == 75.0);
  }
  SUBCASE("constant classifier scores chance on a balanced set") {
    const DomainDataset ds = labeled_set(x, {0, 1, 0, 1});
    CHECK(accuracy(constant_model(), WeightSource::raw, ds) == 50.0);
  }
  SUBCASE("row order never matters") {
    const Tensor rev({4, 2}, {0.3, 0.3, -1.0, 1.0, 0.0, 2.0, 2.0, 0.0});
    const double a = accuracy(params, WeightSource::raw, labeled_set(x, {0, 1, 1, 0}));
    const double b = accuracy(params, WeightSource::raw, labeled_set(rev, {0, 1, 1, 0}));
    CHECK(a == b);
  }
  SUBCASE("an empty dataset is an error") {
    const DomainDataset empty = DomainDataset::make(Domain::source, Split::test,
                                                    Tensor::zeros({0, 2}), Tensor(), Tensor(), 2);
    CHECK_THROWS_AS(accuracy(params, WeightSource::raw, empty), ValueError);
  }
}

TEST_CASE("accuracy reads the requested weight source") {
  ModelParams params = identity_model();
  Param& h = params.entries()[params.index_of("h.w")];
  h.ema = Tensor({2, 2}, {0.0, 1.0, 1.0, 0.0});  // EMA head swaps the classes

  const Tensor x({2, 2}, {2.0, 0.0, 0.0, 2.0});
  const DomainDataset ds = labeled_set(x, {0, 1});
  CHECK(accuracy(params, WeightSource::raw, ds) == 100.0);
  CHECK(accuracy(params, WeightSource::ema, ds) == 0.0);
}

TEST_CASE("prediction entropy and the collapse detector") {
  const Tensor x = random_inputs(8, 21);
  CHECK(std::abs(mean_prediction_entropy(constant_model(), WeightSource::raw, x) -
                 std::log(2.0)) < 1e-12);
  CHECK_THROWS_AS(
      mean_prediction_entropy(identity_model(), WeightSource::raw, Tensor::zeros({0, 2})),
      ValueError);

  // K = 2: entropy below 0.01 ln 2 and accuracy below 75%.
  CHECK(is_degenerate(0.001, 50.0, 2));
  CHECK_FALSE(is_degenerate(0.001, 80.0, 2));
  CHECK_FALSE(is_degenerate(0.01, 50.0, 2));
  // K = 10: the accuracy gate tightens to 15%.
  CHECK(is_degenerate(0.001, 12.0, 10));
  CHECK_FALSE(is_degenerate(0.001, 20.0, 10));
}

TEST_CASE("a constant classifier has exactly zero probe norms") {
  const Tensor x = random_inputs(10, 5);
  ProbeConfig cfg;
  cfg.pairs = 6;
  cfg.lambdas = 4;
  const ProbeResult res = interpolation_grad_norms(constant_model(), WeightSource::raw, x, cfg);
  for (int64_t i = 0; i < res.norms.size(); ++i) CHECK(res.norms[i] == 0.0);
  CHECK(res.mean == 0.0);
  CHECK(res.max == 0.0);
}

TEST_CASE("probe norms match the affine closed form") {
  // logits == x, so d p_c / d x has norm sqrt(2) p0 p1 for either class, and
  // the full Jacobian Frobenius norm is exactly 2 p0 p1.
  const ModelParams params = identity_model();
  const Tensor x = random_inputs(12, 9);
  ProbeConfig cfg;
  cfg.pairs = 10;
  cfg.lambdas = 5;
  cfg.seed = 3;

  const ProbeResult res = interpolation_grad_norms(params, WeightSource::raw, x, cfg);
  ProbeConfig jac = cfg;
  jac.full_jacobian = true;
  const ProbeResult full = interpolation_grad_norms(params, WeightSource::raw, x, jac);

  double mean = 0.0;
  double mx = 0.0;
  for (int64_t p = 0; p < cfg.pairs; ++p) {
    const int64_t i = res.pair_i[static_cast<size_t>(p)];
    const int64_t j = res.pair_j[static_cast<size_t>(p)];
    for (int64_t k = 0; k < cfg.lambdas; ++k) {
      const double lam = res.grid[static_cast<size_t>(k)];
      const double x0 = lam * x.at(i, 0) + (1.0 - lam) * x.at(j, 0);
      const double x1 = lam * x.at(i, 1) + (1.0 - lam) * x.at(j, 1);
      double p0 = 0.0, p1 = 0.0;
      softmax2(x0, x1, &p0, &p1);
      const double expect = std::sqrt(2.0) * p0 * p1;
      CHECK(res.norms.at(p, k) == doctest::Approx(expect).epsilon(1e-9));
      CHECK(full.norms.at(p, k) == doctest::Approx(2.0 * p0 * p1).epsilon(1e-9));
      mean += res.norms.at(p, k);
      mx = std::max(mx, res.norms.at(p, k));
    }
  }
  CHECK(res.mean == doctest::Approx(mean / static_cast<double>(cfg.pairs * cfg.lambdas))
                        .epsilon(1e-12));
  CHECK(res.max == mx);
}

TEST_CASE("probe endpoints equal plain input-gradient norms") {
  ModelSpec spec;
  spec.g_widths = {8, 8};
  ModelParams params = ModelParams::init(spec, 17);  // generic relu model
  const Tensor x = random_inputs(9, 33);
  ProbeConfig cfg;
  cfg.pairs = 8;
  cfg.lambdas = 3;
  cfg.seed = 7;
  const ProbeResult res = interpolation_grad_norms(params, WeightSource::raw, x, cfg);
  for (int64_t p = 0; p < cfg.pairs; ++p) {
    const double at0 = plain_grad_norm(params, WeightSource::raw, x,
                                       res.pair_j[static_cast<size_t>(p)]);
    const double at1 = plain_grad_norm(params, WeightSource::raw, x,
                                       res.pair_i[static_cast<size_t>(p)]);
    CHECK(std::abs(res.norms.at(p, 0) - at0) <= 1e-12);
    CHECK(std::abs(res.norms.at(p, cfg.lambdas - 1) - at1) <= 1e-12);
  }
}

TEST_CASE("probes are deterministic in the seed and reject bad setups") {
  const ModelParams params = identity_model();
  const Tensor x = random_inputs(8, 2);
  ProbeConfig cfg;
  cfg.pairs = 5;
  cfg.lambdas = 4;
  cfg.seed = 11;

  const ProbeResult a = interpolation_grad_norms(params, WeightSource::raw, x, cfg);
  const ProbeResult b = interpolation_grad_norms(params, WeightSource::raw, x, cfg);
  CHECK(a.pair_i == b.pair_i);
  CHECK(a.pair_j == b.pair_j);
  for (int64_t i = 0; i < a.norms.size(); ++i) CHECK(a.norms[i] == b.norms[i]);

  ProbeConfig other = cfg;
  other.seed = 12;
  const ProbeResult c = interpolation_grad_norms(params, WeightSource::raw, x, other);
  CHECK((a.pair_i != c.pair_i || a.pair_j != c.pair_j));

  // Pairs are distinct rows and never repeat as unordered pairs.
  std::set<std::pair<int64_t, int64_t>> seen;
  for (size_t p = 0; p < a.pair_i.size(); ++p) {
    CHECK(a.pair_i[p] != a.pair_j[p]);
    CHECK(seen.insert({std::min(a.pair_i[p], a.pair_j[p]),
                       std::max(a.pair_i[p], a.pair_j[p])}).second);
  }

  ProbeConfig bad = cfg;
  bad.pairs = 8 * 7 / 2 + 1;
  CHECK_THROWS_WITH_AS(interpolation_grad_norms(params, WeightSource::raw, x, bad),
                       doctest::Contains("28"), ValueError);
  bad = cfg;
  bad.lambdas = 1;
  CHECK_THROWS_AS(interpolation_grad_norms(params, WeightSource::raw, x, bad), ValueError);
  bad = cfg;
  bad.pairs = 0;
  CHECK_THROWS_AS(interpolation_grad_norms(params, WeightSource::raw, x, bad), ValueError);
  CHECK_THROWS_AS(
      interpolation_grad_norms(params, WeightSource::raw, Tensor::zeros({1, 2}), cfg), ValueError);
}

TEST_CASE("exhaustive pair draw covers every unordered pair") {
  const ModelParams params = identity_model();
  const Tensor x = random_inputs(4, 6);
  ProbeConfig cfg;
  cfg.pairs = 6;  // all of them
  cfg.lambdas = 2;
  const ProbeResult res = interpolation_grad_norms(params, WeightSource::raw, x, cfg);
  std::set<std::pair<int64_t, int64_t>> seen;
  for (size_t p = 0; p < res.pair_i.size(); ++p) {
    seen.insert({std::min(res.pair_i[p], res.pair_j[p]),
                 std::max(res.pair_i[p], res.pair_j[p])});
  }
  CHECK(seen.size() == 6);
}

TEST_CASE("probe grids serialize one row per pair-lambda cell") {
  const ModelParams params = identity_model();
  const Tensor x = random_inputs(6, 4);
  ProbeConfig cfg;
  cfg.pairs = 4;
  cfg.lambdas = 3;
  const ProbeResult res = interpolation_grad_norms(params, WeightSource::raw, x, cfg);
  std::ostringstream os;
  write_probe_grid(os, res);
  std::istringstream is(os.str());
  std::string line;
  REQUIRE(std::getline(is, line));
  CHECK(line == "pair,lambda,grad_norm");
  int64_t rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 12);
}

TEST_CASE("feature export is stable and labels only when known") {
  const ModelParams params = identity_model();
  const Tensor xs({2, 2}, {1.5, -0.25, 0.0, 1.0});
  const DomainDataset src = DomainDataset::make(Domain::source, Split::train, xs, one_hot2({0, 1}),
                                                one_hot2({0, 1}), 2);
  const DomainDataset tgt = DomainDataset::make(Domain::target, Split::train,
                                                Tensor({1, 2}, {2.0, 0.0}), Tensor(), Tensor(), 2);
  const DomainDataset empty = DomainDataset::make(Domain::target, Split::test,
                                                  Tensor::zeros({0, 2}), Tensor(), Tensor(), 2);

  std::ostringstream os;
  export_features(os, params, WeightSource::raw, {&src, &tgt, &empty});
  std::istringstream is(os.str());
  std::string line;
  REQUIRE(std::getline(is, line));
  CHECK(line == "domain,split,label,f0,f1,pred");
  REQUIRE(std::getline(is, line));
  CHECK(line == "source,train,0,1.5,-0.25,0");  // identity encoder: features == x
  REQUIRE(std::getline(is, line));
  CHECK(line == "source,train,1,0,1,1");
  REQUIRE(std::getline(is, line));
  CHECK(line == "target,train,,2,0,0");  // no label on the target train split
  CHECK_FALSE(std::getline(is, line));

  std::ostringstream again;
  export_features(again, params, WeightSource::raw, {&src, &tgt, &empty});
  CHECK(os.str() == again.str());
}

TEST_CASE("loss-term timing validates reps and orders the terms") {
  ModelSpec spec;
  spec.g_widths = {16, 16};
  const ModelParams params = ModelParams::init(spec, 1);
  const Tensor x = random_inputs(64, 8);
  const VatConfig vat1;
  const MixupConfig mix;

  CHECK_THROWS_AS(time_loss_terms(params, x, vat1, mix, MixSite::logits, 9, 0), ValueError);

  const TermTiming t1 = time_loss_terms(params, x, vat1, mix, MixSite::logits, 12, 0);
  CHECK(t1.reps == 12);
  CHECK(t1.lm_mean_s > 0.0);
  CHECK(t1.lv_mean_s > 0.0);
  CHECK(t1.lv_over_lm == doctest::Approx(t1.lv_mean_s / t1.lm_mean_s));

  VatConfig vat2 = vat1;
  vat2.power_iters = 2;
  const TermTiming t2 = time_loss_terms(params, x, vat2, mix, MixSite::logits, 12, 0);
  CHECK(t2.lv_mean_s > t1.lv_mean_s);
}
