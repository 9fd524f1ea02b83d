#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "vmt/data.hpp"
#include "vmt/losses.hpp"
#include "vmt/nn.hpp"

namespace vmt {

// One evaluation snapshot along a training run. Wall times are the only
// nondeterministic fields and stay out of the reproducible metrics stream.
struct MetricsRecord {
  int64_t iteration = 0;
  double src_test_acc = 0.0;  // percent
  double tgt_test_acc = 0.0;
  std::map<std::string, double> components;
  bool degenerate = false;
  double probe_mean = 0.0;
  double probe_max = 0.0;
  std::map<std::string, double> term_seconds;
};

// Percent correct under argmax with ties broken toward the lowest class
// index. Reads the evaluation-only labels.
double accuracy(const ModelParams& params, WeightSource source, const DomainDataset& ds);

// Mean prediction entropy in nats, for the degenerate-solution flag.
double mean_prediction_entropy(const ModelParams& params, WeightSource source, const Tensor& x);

// Collapse detector: confidently constant predictions at near-chance
// accuracy. entropy < 0.01 ln K and accuracy below 1.5x chance.
bool is_degenerate(double mean_entropy, double accuracy_pct, int64_t classes);

struct ProbeConfig {
  int64_t pairs = 200;
  int64_t lambdas = 11;  // evenly spaced grid on [0, 1], endpoints included
  bool full_jacobian = false;
  uint64_t seed = 0;
};

struct ProbeResult {
  std::vector<int64_t> pair_i;
  std::vector<int64_t> pair_j;
  std::vector<double> grid;
  Tensor norms;  // [pairs, lambdas]
  double mean = 0.0;
  double max = 0.0;
};

// Input-gradient norms along mixed points x~ = lambda x_i + (1-lambda) x_j.
// Differentiates the predicted-class probability at x~ (or, with
// full_jacobian, the Frobenius norm of the whole dprobs/dx~). Pairs are
// distinct rows, never repeated, deterministic per seed.
ProbeResult interpolation_grad_norms(const ModelParams& params, WeightSource source,
                                     const Tensor& inputs, const ProbeConfig& cfg);

// Columns: pair, lambda, grad_norm.
void write_probe_grid(std::ostream& os, const ProbeResult& probe);

// One row per sample: domain, split, label-or-empty, g(x), predicted class.
// Re-export of the same state is byte-identical.
void export_features(std::ostream& os, const ModelParams& params, WeightSource source,
                     const std::vector<const DomainDataset*>& sets);
void export_features_file(const std::string& path, const ModelParams& params, WeightSource source,
                          const std::vector<const DomainDataset*>& sets);

struct TermTiming {
  double lm_mean_s = 0.0;
  double lv_mean_s = 0.0;
  double lv_over_lm = 0.0;
  int64_t reps = 0;
};

// Times forward+backward of the mixup term and the adversarial term in
// isolation, alternating over identical batches. reps >= 10.
TermTiming time_loss_terms(const ModelParams& params, const Tensor& x, const VatConfig& vat,
                           const MixupConfig& mix, MixSite site, int64_t reps, uint64_t seed);

}  // namespace vmt
