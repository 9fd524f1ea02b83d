#include "vmt/eval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>

#include "vmt/errors.hpp"
#include "vmt/rng.hpp"
#include "vmt/tape.hpp"

namespace vmt {

namespace {

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

int64_t argmax_row(const Tensor& m, int64_t row) {
  int64_t best = 0;
  for (int64_t c = 1; c < m.cols(); ++c) {
    if (m.at(row, c) > m.at(row, best)) best = c;  // ties keep the lowest index
  }
  return best;
}

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

double accuracy(const ModelParams& params, WeightSource source, const DomainDataset& ds) {
  if (ds.size() == 0) throw ValueError("accuracy: empty dataset");
  const Tensor& labels = ds.eval_labels();
  const ClassifierOut out = forward_classifier(params, source, ds.inputs());
  int64_t correct = 0;
  for (int64_t i = 0; i < ds.size(); ++i) {
    if (argmax_row(out.probs, i) == argmax_row(labels, i)) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
}

double mean_prediction_entropy(const ModelParams& params, WeightSource source, const Tensor& x) {
  if (x.rows() == 0) throw ValueError("entropy probe: empty input");
  const ClassifierOut out = forward_classifier(params, source, x);
  double total = 0.0;
  for (int64_t i = 0; i < out.probs.rows(); ++i) {
    for (int64_t c = 0; c < out.probs.cols(); ++c) {
      const double p = out.probs.at(i, c);
      if (p > 0.0) total -= p * std::log(p);
    }
  }
  return total / static_cast<double>(x.rows());
}

bool is_degenerate(double mean_entropy, double accuracy_pct, int64_t classes) {
  const double k = static_cast<double>(classes);
  return mean_entropy < 0.01 * std::log(k) && accuracy_pct < 150.0 / k;
}

ProbeResult interpolation_grad_norms(const ModelParams& params, WeightSource source,
                                     const Tensor& inputs, const ProbeConfig& cfg) {
  if (inputs.rank() != 2 || inputs.rows() < 2) {
    throw ValueError("probe: need at least 2 input rows");
  }
  if (cfg.pairs < 1) throw ValueError("probe: pairs must be at least 1");
  if (cfg.lambdas < 2) throw ValueError("probe: the lambda grid needs at least the endpoints");
  const int64_t n = inputs.rows();
  const int64_t d = inputs.cols();
  const int64_t max_pairs = n * (n - 1) / 2;
  if (cfg.pairs > max_pairs) {
    throw ValueError("probe: " + std::to_string(cfg.pairs) + " distinct pairs requested but only " +
                     std::to_string(max_pairs) + " exist");
  }

  ProbeResult res;
  RngStream rng = RngStream(cfg.seed).derive("probe/pairs");
  std::set<std::pair<int64_t, int64_t>> used;
  while (static_cast<int64_t>(res.pair_i.size()) < cfg.pairs) {
    const int64_t i = rng.uniform_int(n);
    const int64_t j = rng.uniform_int(n);
    if (i == j) continue;
    if (!used.insert({std::min(i, j), std::max(i, j)}).second) continue;
    res.pair_i.push_back(i);
    res.pair_j.push_back(j);
  }

  res.grid.resize(static_cast<size_t>(cfg.lambdas));
  for (int64_t k = 0; k < cfg.lambdas; ++k) {
    res.grid[static_cast<size_t>(k)] =
        static_cast<double>(k) / static_cast<double>(cfg.lambdas - 1);
  }

  res.norms = Tensor::zeros({cfg.pairs, cfg.lambdas});
  res.mean = 0.0;
  res.max = 0.0;
  for (int64_t k = 0; k < cfg.lambdas; ++k) {
    const double lam = res.grid[static_cast<size_t>(k)];
    Tensor mixed = Tensor::zeros({cfg.pairs, d});
    for (int64_t p = 0; p < cfg.pairs; ++p) {
      for (int64_t c = 0; c < d; ++c) {
        mixed.at(p, c) = lam * inputs.at(res.pair_i[static_cast<size_t>(p)], c) +
                         (1.0 - lam) * inputs.at(res.pair_j[static_cast<size_t>(p)], c);
      }
    }

    Tape tape;
    BoundModel model(tape, params, source);
    const Tensor x = tape.leaf(mixed);
    const Tensor probs = model.classify(x).probs;

    // Rows are independent, so one backward from a row-sum recovers every
    // per-row input gradient at once.
    std::vector<double> sq(static_cast<size_t>(cfg.pairs), 0.0);
    auto accumulate = [&](const Tensor& mask) {
      const Tensor picked = tape.mul(probs, mask);
      const Gradients g = tape.backward(tape.sum(picked));
      const Tensor& gx = g.at(x);
      for (int64_t p = 0; p < cfg.pairs; ++p) {
        for (int64_t c = 0; c < d; ++c) {
          sq[static_cast<size_t>(p)] += gx.at(p, c) * gx.at(p, c);
        }
      }
    };

    if (cfg.full_jacobian) {
      for (int64_t cls = 0; cls < probs.cols(); ++cls) {
        Tensor mask = Tensor::zeros({cfg.pairs, probs.cols()});
        for (int64_t p = 0; p < cfg.pairs; ++p) mask.at(p, cls) = 1.0;
        accumulate(mask);
      }
    } else {
      Tensor mask = Tensor::zeros({cfg.pairs, probs.cols()});
      for (int64_t p = 0; p < cfg.pairs; ++p) mask.at(p, argmax_row(probs, p)) = 1.0;
      accumulate(mask);
    }

    for (int64_t p = 0; p < cfg.pairs; ++p) {
      const double norm = std::sqrt(sq[static_cast<size_t>(p)]);
      res.norms.at(p, k) = norm;
      res.mean += norm;
      res.max = std::max(res.max, norm);
    }
  }
  res.mean /= static_cast<double>(cfg.pairs * cfg.lambdas);
  return res;
}

void write_probe_grid(std::ostream& os, const ProbeResult& probe) {
  os << "pair,lambda,grad_norm\n";
  for (int64_t p = 0; p < probe.norms.rows(); ++p) {
    for (int64_t k = 0; k < probe.norms.cols(); ++k) {
      os << p << ',' << fmt_g(probe.grid[static_cast<size_t>(k)]) << ','
         << fmt_g(probe.norms.at(p, k)) << '\n';
    }
  }
  if (!os) throw IoError("probe: write failed");
}

void export_features(std::ostream& os, const ModelParams& params, WeightSource source,
                     const std::vector<const DomainDataset*>& sets) {
  const int64_t width = params.spec().feature_dim();
  os << "domain,split,label";
  for (int64_t c = 0; c < width; ++c) os << ",f" << c;
  os << ",pred\n";
  for (const DomainDataset* ds : sets) {
    if (ds->size() == 0) continue;
    const ClassifierOut out = forward_classifier(params, source, ds->inputs());
    for (int64_t i = 0; i < ds->size(); ++i) {
      os << domain_name(ds->domain()) << ',' << split_name(ds->split()) << ',';
      if (ds->has_eval_labels()) os << argmax_row(ds->eval_labels(), i);
      for (int64_t c = 0; c < width; ++c) os << ',' << fmt_g(out.features.at(i, c));
      os << ',' << argmax_row(out.probs, i) << '\n';
    }
  }
  if (!os) throw IoError("export_features: write failed");
}

void export_features_file(const std::string& path, const ModelParams& params, WeightSource source,
                          const std::vector<const DomainDataset*>& sets) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("export_features: cannot write '" + path + "'");
  export_features(os, params, source, sets);
  os.flush();
  if (!os) throw IoError("export_features: write failed for '" + path + "'");
}

TermTiming time_loss_terms(const ModelParams& params, const Tensor& x, const VatConfig& vat,
                           const MixupConfig& mix, MixSite site, int64_t reps, uint64_t seed) {
  if (reps < 10) throw ValueError("time_loss_terms: repetitions must be at least 10");
  TermTiming out;
  out.reps = reps;
  for (int64_t r = 0; r < reps; ++r) {
    // Fresh stream per repetition: every repetition times identical work.
    {
      RngStream rng = RngStream(seed).derive("timing/lm");
      Tape tape;
      BoundModel model(tape, params, WeightSource::raw);
      const double t0 = now_s();
      const Tensor loss = vmt_loss(model, x, mix, site, rng);
      const Gradients g = tape.backward(loss);
      out.lm_mean_s += now_s() - t0;
      (void)g;
    }
    {
      RngStream rng = RngStream(seed).derive("timing/lv");
      Tape tape;
      BoundModel model(tape, params, WeightSource::raw);
      const double t0 = now_s();
      const Tensor loss = vat_loss(model, x, vat, rng);
      const Gradients g = tape.backward(loss);
      out.lv_mean_s += now_s() - t0;
      (void)g;
    }
  }
  out.lm_mean_s /= static_cast<double>(reps);
  out.lv_mean_s /= static_cast<double>(reps);
  out.lv_over_lm = out.lm_mean_s > 0.0 ? out.lv_mean_s / out.lm_mean_s : 0.0;
  return out;
}

}  // namespace vmt
