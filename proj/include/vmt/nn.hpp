#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vmt/tape.hpp"
#include "vmt/tensor.hpp"

namespace vmt {

enum class Group : uint8_t { encoder_g, head_h, discriminator_d };
enum class Activation : uint8_t { relu, identity };
enum class WeightSource : uint8_t { raw, ema };

const char* group_name(Group g);

// Classifier f = softmax . h . g plus a feature-space discriminator d.
// Hidden layers use hidden_act; each stack's final layer is linear (the
// discriminator applies a sigmoid on top of its linear output).
struct ModelSpec {
  int64_t input_dim = 2;
  int64_t classes = 2;
  std::vector<int64_t> g_widths = {64, 64};  // widths after input; last is the feature dim
  std::vector<int64_t> d_widths = {64};      // hidden widths between features and the logit
  Activation hidden_act = Activation::relu;

  int64_t feature_dim() const { return g_widths.back(); }
  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

struct Param {
  std::string name;
  Group group;
  Tensor value;
  Tensor adam_m;
  Tensor adam_v;
  Tensor ema;
};

class ModelParams {
 public:
  // He-normal weights (std sqrt(2/fan_in)), zero biases, shadows equal to
  // the fresh weights. Each parameter draws from its own labeled stream, so
  // the values for one layer never depend on the rest of the architecture.
  static ModelParams init(const ModelSpec& spec, uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  std::vector<Param>& entries() { return params_; }
  const std::vector<Param>& entries() const { return params_; }
  const std::vector<size_t>& group_indices(Group g) const;
  size_t index_of(const std::string& name) const;

  // Flat view of parameter values in entry order; used by gradient checks.
  Tensor values_flat() const;
  void set_values_flat(const Tensor& flat);

  friend bool operator==(const ModelParams&, const ModelParams&);

 private:
  ModelSpec spec_;
  std::vector<Param> params_;
  std::vector<size_t> by_group_[3];

  void rebuild_group_index();
  friend class Checkpoint;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const AdamConfig&) const = default;
};

using GradList = std::vector<std::pair<size_t, Tensor>>;

// One bias-corrected Adam update restricted to `groups`. The gradient list
// must cover exactly the parameters of those groups; anything else is an
// error so cross-group leakage cannot pass silently. t is 1-based.
void adam_step(ModelParams& params, const std::vector<Group>& groups, const GradList& grads,
               const AdamConfig& cfg, uint64_t t);

// shadow <- momentum * shadow + (1 - momentum) * value, for every parameter.
void ema_update(ModelParams& params, double momentum);

struct ClassifierOut {
  Tensor features;
  Tensor logits;
  Tensor probs;
};

// Parameters registered as leaves on one tape for one forward/backward step.
class BoundModel {
 public:
  BoundModel(Tape& tape, const ModelParams& params, WeightSource source);

  ClassifierOut classify(const Tensor& x) const;
  Tensor features(const Tensor& x) const;
  Tensor logits_from_features(const Tensor& f) const;
  Tensor discriminate(const Tensor& features) const;  // sigmoid clamped to [1e-7, 1-1e-7]

  // Gradients for every parameter of the given groups; parameters the root
  // never reached get zeros.
  GradList group_grads(const Gradients& g, const std::vector<Group>& groups) const;

  Tape& tape() const { return *tape_; }
  const ModelParams& params() const { return *params_; }
  WeightSource source() const { return source_; }

 private:
  Tape* tape_;
  const ModelParams* params_;
  WeightSource source_;
  std::vector<Tensor> leaves_;

  Tensor run_stack(const Tensor& x, Group group, const char* what) const;
};

// Untracked forward pass: fresh throwaway tape, detached outputs.
ClassifierOut forward_classifier(const ModelParams& params, WeightSource source, const Tensor& x);
Tensor forward_discriminator(const ModelParams& params, WeightSource source, const Tensor& x);

}  // namespace vmt
