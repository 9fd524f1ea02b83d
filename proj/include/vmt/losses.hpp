#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vmt/nn.hpp"
#include "vmt/rng.hpp"
#include "vmt/tape.hpp"
#include "vmt/tensor.hpp"

namespace vmt {

// Where the virtual label of a mixed pair is formed: convex combination of
// output probabilities, of logits (then softmax), or of encoder features
// (then head + softmax).
enum class MixSite : uint8_t { logits, probabilities, intermediate };

const char* mix_site_name(MixSite s);
MixSite mix_site_from_string(const std::string& s);

struct LossTermMask {
  bool use_lc = true;
  bool use_lv = true;
  bool use_lm = true;
  MixSite site = MixSite::logits;
  bool operator==(const LossTermMask&) const = default;
};

struct LossWeights {
  double lambda_d = 0.01;
  double lambda_s = 1.0;
  double lambda_t = 0.1;
  double beta = 0.01;
  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct VatConfig {
  double epsilon = 1.0;
  double xi = 0.0;  // 0 picks 1e-6 * sqrt(input_dim)
  int power_iters = 1;
  void validate() const;
  bool operator==(const VatConfig&) const = default;
};

struct MixupConfig {
  double alpha = 1.0;
  bool per_sample_lambda = false;
  bool sever_virtual = true;
  void validate() const;
  bool operator==(const MixupConfig&) const = default;
};

// Mean over rows of sum_k p_k (ln p_k - ln q_k). Both operands clamped at
// 1e-30 inside the logarithm; p_k = 0 contributes exactly zero. Rows of both
// operands must sum to 1 within 1e-9.
Tensor kl_divergence(Tape& tape, const Tensor& p, const Tensor& q);

// Mean negative log-probability of the true class; labels are one-hot rows.
Tensor classification_loss(Tape& tape, const Tensor& probs, const Tensor& onehot);

struct DomainLossPair {
  Tensor disc;  // -mean ln d(src) - mean ln(1 - d(tgt)), minimized over d
  Tensor gen;   // -mean ln d(tgt), non-saturating, minimized over the encoder
};
DomainLossPair domain_losses(Tape& tape, const Tensor& d_src, const Tensor& d_tgt);

// -mean over rows of sum_k p_k ln p_k; lies in [0, ln K].
Tensor conditional_entropy(Tape& tape, const Tensor& probs);

struct MixupDraw {
  std::vector<double> lambda;    // size 1 (shared) or batch size
  std::vector<int64_t> partner;  // uniform permutation; self-pairing allowed
  double lambda_for(int64_t row) const { return lambda.size() == 1 ? lambda[0] : lambda[row]; }
};

MixupDraw draw_mixup(int64_t batch, const MixupConfig& cfg, RngStream& rng);
Tensor mix_rows(const Tensor& t, const MixupDraw& draw);

struct MixedBatch {
  Tensor x;
  Tensor aux;
  MixupDraw draw;
};
MixedBatch mixup_batch(const Tensor& x, const Tensor& aux, const MixupConfig& cfg, RngStream& rng);

struct FrozenVat {
  bool captured = false;
  Tensor p_hat;
  Tensor r;
};

// Virtual adversarial loss. The reference distribution f(x) and the
// perturbation r are constants; gradients reach the parameters only through
// f(x + r). The perturbation direction comes from power iteration on the
// KL curvature, started from a random unit direction; a vanishing gradient
// falls back to that start with a logged warning. ||r||_2 = epsilon per row.
Tensor vat_loss(BoundModel& model, const Tensor& x, const VatConfig& cfg, RngStream& rng,
                FrozenVat* frozen = nullptr);

struct FrozenVmt {
  bool captured = false;
  MixupDraw draw;
  Tensor x_mixed;
  Tensor ytilde;
};

// Virtual mixup loss: KL(ytilde || f(x_mixed)), with ytilde built at `site`
// from the model's own predictions. Virtual labels are severed from the
// graph unless cfg.sever_virtual is false.
Tensor vmt_loss(BoundModel& model, const Tensor& x, const MixupConfig& cfg, MixSite site,
                RngStream& rng, FrozenVmt* frozen = nullptr);

struct FrozenObjective {
  bool captured = false;
  FrozenVmt vmt_src, vmt_tgt;
  FrozenVat vat_src, vat_tgt;
};

struct CombinedResult {
  Tensor total;
  std::map<std::string, double> components;
  std::map<std::string, double> seconds;
};

// total = l_y + lambda_d * l_d_gen
//       + lambda_s * (l_m + l_v on source)
//       + lambda_t * (l_m + l_v + l_c on target)
// Terms that are masked off or carry a zero weight are skipped outright and
// reported as exact zeros.
CombinedResult combined_objective(BoundModel& model, const Tensor& x_src, const Tensor& y_src,
                                  const Tensor& x_tgt, const LossWeights& weights,
                                  const VatConfig& vat, const MixupConfig& mix,
                                  const LossTermMask& mask, RngStream& rng,
                                  FrozenObjective* frozen = nullptr);

struct FrozenDirt {
  bool captured = false;
  FrozenVmt vmt;
  FrozenVat vat;
  Tensor teacher_probs;
};

// Refinement objective: lambda_t * (l_m + l_v + l_c on target) plus
// beta * KL(teacher || student). The teacher is a frozen snapshot evaluated
// out of graph.
CombinedResult dirt_t_objective(BoundModel& student, const ModelParams& teacher,
                                const Tensor& x_tgt, const LossWeights& weights,
                                const VatConfig& vat, const MixupConfig& mix,
                                const LossTermMask& mask, RngStream& rng,
                                FrozenDirt* frozen = nullptr);

}  // namespace vmt
