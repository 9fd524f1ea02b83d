#include "vmt/nn.hpp"

#include <cmath>

#include "vmt/errors.hpp"
#include "vmt/rng.hpp"

namespace vmt {

const char* group_name(Group g) {
  switch (g) {
    case Group::encoder_g: return "encoder_g";
    case Group::head_h: return "head_h";
    case Group::discriminator_d: return "discriminator_d";
  }
  return "?";
}

void ModelSpec::validate() const {
  if (input_dim <= 0) throw ValueError("model: input_dim must be positive");
  if (classes < 2) throw ValueError("model: need at least 2 classes");
  if (g_widths.size() < 2) {
    throw ValueError("model: encoder needs at least one hidden layer plus the feature layer");
  }
  if (d_widths.empty()) {
    throw ValueError("model: discriminator needs at least one hidden layer");
  }
  for (int64_t w : g_widths) {
    if (w <= 0) throw ValueError("model: non-positive encoder width");
  }
  for (int64_t w : d_widths) {
    if (w <= 0) throw ValueError("model: non-positive discriminator width");
  }
}

namespace {

Tensor he_weights(int64_t fan_in, int64_t fan_out, uint64_t seed, const std::string& name) {
  RngStream rng(RngStream::derive_seed(seed, "init/" + name));
  Tensor w = Tensor::zeros({fan_in, fan_out});
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < w.size(); ++i) w[i] = std_dev * rng.normal();
  return w;
}

void push_layer(std::vector<Param>& out, Group group, const std::string& wname,
                const std::string& bname, int64_t fan_in, int64_t fan_out, uint64_t seed) {
  Tensor w = he_weights(fan_in, fan_out, seed, wname);
  Tensor b = Tensor::zeros({fan_out});
  out.push_back(Param{wname, group, w, Tensor::zeros(w.shape()), Tensor::zeros(w.shape()), w});
  out.push_back(Param{bname, group, b, Tensor::zeros(b.shape()), Tensor::zeros(b.shape()), b});
}

}  // namespace

ModelParams ModelParams::init(const ModelSpec& spec, uint64_t seed) {
  spec.validate();
  ModelParams p;
  p.spec_ = spec;

  int64_t in = spec.input_dim;
  for (size_t i = 0; i < spec.g_widths.size(); ++i) {
    const std::string idx = std::to_string(i);
    push_layer(p.params_, Group::encoder_g, "g.w" + idx, "g.b" + idx, in, spec.g_widths[i], seed);
    in = spec.g_widths[i];
  }
  push_layer(p.params_, Group::head_h, "h.w", "h.b", spec.feature_dim(), spec.classes, seed);

  in = spec.feature_dim();
  for (size_t i = 0; i <= spec.d_widths.size(); ++i) {
    const int64_t out = i < spec.d_widths.size() ? spec.d_widths[i] : 1;
    const std::string idx = std::to_string(i);
    push_layer(p.params_, Group::discriminator_d, "d.w" + idx, "d.b" + idx, in, out, seed);
    in = out;
  }

  p.rebuild_group_index();
  return p;
}

void ModelParams::rebuild_group_index() {
  for (auto& v : by_group_) v.clear();
  for (size_t i = 0; i < params_.size(); ++i) {
    by_group_[static_cast<size_t>(params_[i].group)].push_back(i);
  }
}

const std::vector<size_t>& ModelParams::group_indices(Group g) const {
  return by_group_[static_cast<size_t>(g)];
}

size_t ModelParams::index_of(const std::string& name) const {
  for (size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw ValueError("model: no parameter named " + name);
}

Tensor ModelParams::values_flat() const {
  int64_t total = 0;
  for (const Param& p : params_) total += p.value.size();
  Tensor flat = Tensor::zeros({total});
  int64_t at = 0;
  for (const Param& p : params_) {
    for (int64_t i = 0; i < p.value.size(); ++i) flat[at++] = p.value[i];
  }
  return flat;
}

void ModelParams::set_values_flat(const Tensor& flat) {
  int64_t at = 0;
  for (Param& p : params_) at += p.value.size();
  if (flat.size() != at) {
    throw ShapeError("model: flat vector length " + std::to_string(flat.size()) +
                     " does not match parameter count " + std::to_string(at));
  }
  at = 0;
  for (Param& p : params_) {
    for (int64_t i = 0; i < p.value.size(); ++i) p.value[i] = flat[at++];
  }
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (!(a.spec_ == b.spec_) || a.params_.size() != b.params_.size()) return false;
  for (size_t i = 0; i < a.params_.size(); ++i) {
    const Param& x = a.params_[i];
    const Param& y = b.params_[i];
    if (x.name != y.name || x.group != y.group) return false;
    if (x.value.values() != y.value.values() || x.adam_m.values() != y.adam_m.values() ||
        x.adam_v.values() != y.adam_v.values() || x.ema.values() != y.ema.values()) {
      return false;
    }
  }
  return true;
}

void adam_step(ModelParams& params, const std::vector<Group>& groups, const GradList& grads,
               const AdamConfig& cfg, uint64_t t) {
  if (t < 1) throw ValueError("adam_step: t is 1-based");
  auto in_groups = [&](Group g) {
    for (Group x : groups) {
      if (x == g) return true;
    }
    return false;
  };

  size_t expected = 0;
  for (Group g : groups) expected += params.group_indices(g).size();
  if (grads.size() != expected) {
    throw ValueError("adam_step: got " + std::to_string(grads.size()) + " gradients, group set has " +
                     std::to_string(expected) + " parameters");
  }

  std::vector<char> seen(params.entries().size(), 0);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));

  for (const auto& [idx, grad] : grads) {
    if (idx >= params.entries().size()) throw ValueError("adam_step: parameter index out of range");
    Param& p = params.entries()[idx];
    if (!in_groups(p.group)) {
      throw ValueError("adam_step: gradient for " + p.name + " lies outside group set (" +
                       group_name(p.group) + ")");
    }
    if (seen[idx]) throw ValueError("adam_step: duplicate gradient for " + p.name);
    seen[idx] = 1;
    if (!grad.same_shape(p.value)) {
      throw ShapeError("adam_step: gradient shape " + grad.shape_str() + " for " + p.name +
                       " does not match parameter shape " + p.value.shape_str());
    }
    for (int64_t i = 0; i < grad.size(); ++i) {
      const double g = grad[i];
      p.adam_m[i] = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * g;
      p.adam_v[i] = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = p.adam_m[i] / bc1;
      const double vhat = p.adam_v[i] / bc2;
      p.value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    if (!p.value.all_finite()) {
      throw NumericError("adam_step: non-finite update for " + p.name);
    }
  }
}

void ema_update(ModelParams& params, double momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ValueError("ema_update: momentum must lie in [0, 1)");
  }
  for (Param& p : params.entries()) {
    for (int64_t i = 0; i < p.value.size(); ++i) {
      p.ema[i] = momentum * p.ema[i] + (1.0 - momentum) * p.value[i];
    }
  }
}

BoundModel::BoundModel(Tape& tape, const ModelParams& params, WeightSource source)
    : tape_(&tape), params_(&params), source_(source) {
  leaves_.reserve(params.entries().size());
  for (const Param& p : params.entries()) {
    leaves_.push_back(tape.leaf(source == WeightSource::raw ? p.value : p.ema));
  }
}

Tensor BoundModel::run_stack(const Tensor& x, Group group, const char* what) const {
  const auto& idx = params_->group_indices(group);
  Tensor h = x;
  if (h.rank() != 2) {
    throw ShapeError(std::string(what) + ": input must be rank-2, got shape " + h.shape_str());
  }
  const size_t layers = idx.size() / 2;
  for (size_t l = 0; l < layers; ++l) {
    const Tensor& w = leaves_[idx[2 * l]];
    const Tensor& b = leaves_[idx[2 * l + 1]];
    if (l == 0 && h.cols() != w.rows()) {
      throw ShapeError(std::string(what) + ": input width " + std::to_string(h.cols()) +
                       " does not match expected " + std::to_string(w.rows()));
    }
    h = tape_->add_bias(tape_->matmul(h, w), b);
    const bool hidden = l + 1 < layers;
    if (hidden && params_->spec().hidden_act == Activation::relu) {
      h = tape_->relu(h);
    }
  }
  return h;
}

Tensor BoundModel::features(const Tensor& x) const {
  return run_stack(x, Group::encoder_g, "encoder");
}

Tensor BoundModel::logits_from_features(const Tensor& f) const {
  return run_stack(f, Group::head_h, "head");
}

ClassifierOut BoundModel::classify(const Tensor& x) const {
  ClassifierOut out;
  out.features = features(x);
  out.logits = logits_from_features(out.features);
  out.probs = tape_->softmax(out.logits);
  return out;
}

Tensor BoundModel::discriminate(const Tensor& features) const {
  Tensor z = run_stack(features, Group::discriminator_d, "discriminator");
  return tape_->clamp(tape_->sigmoid(z), 1e-7, 1.0 - 1e-7);
}

GradList BoundModel::group_grads(const Gradients& g, const std::vector<Group>& groups) const {
  GradList out;
  for (Group grp : groups) {
    for (size_t idx : params_->group_indices(grp)) {
      const Tensor& lf = leaves_[idx];
      if (g.has(lf)) {
        out.emplace_back(idx, g.at(lf));
      } else {
        out.emplace_back(idx, Tensor::zeros(lf.shape()));
      }
    }
  }
  return out;
}

ClassifierOut forward_classifier(const ModelParams& params, WeightSource source, const Tensor& x) {
  Tape tape;
  BoundModel m(tape, params, source);
  ClassifierOut out = m.classify(x);
  return ClassifierOut{out.features.detached(), out.logits.detached(), out.probs.detached()};
}

Tensor forward_discriminator(const ModelParams& params, WeightSource source, const Tensor& x) {
  Tape tape;
  BoundModel m(tape, params, source);
  return m.discriminate(m.features(x)).detached();
}

}  // namespace vmt
