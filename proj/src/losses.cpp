#include "vmt/losses.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>

#include "vmt/errors.hpp"
#include "vmt/kernels.hpp"

namespace vmt {

namespace {

constexpr double kLogClamp = 1e-30;

void warn(const std::string& msg) { std::fprintf(stderr, "[vmtlab] warning: %s\n", msg.c_str()); }

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void require_rows_sum_to_one(const Tensor& t, const char* what) {
  const int64_t n = t.rows(), k = t.cols();
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < k; ++j) s += t.at(i, j);
    if (std::fabs(s - 1.0) > 1e-9) {
      throw ValueError(std::string("kl_divergence: ") + what + " row " + std::to_string(i) +
                       " sums to " + std::to_string(s) + ", not 1");
    }
  }
}

Tensor ln_guarded(Tape& tape, const Tensor& t) {
  return tape.log(tape.clamp_min(t, kLogClamp));
}

// Normalizes each row to unit L2 norm. Rows with norm below 1e-12 are
// replaced by the matching fallback row; returns how many needed it.
int64_t normalize_rows(Tensor& t, const Tensor* fallback) {
  const int64_t n = t.rows(), d = t.cols();
  int64_t fell_back = 0;
  for (int64_t i = 0; i < n; ++i) {
    double* row = t.data() + i * d;
    double norm = 0.0;
    for (int64_t j = 0; j < d; ++j) norm += row[j] * row[j];
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      if (fallback) {
        const double* src = fallback->data() + i * d;
        for (int64_t j = 0; j < d; ++j) row[j] = src[j];
        ++fell_back;
        continue;
      }
      row[0] = 1.0;
      for (int64_t j = 1; j < d; ++j) row[j] = 0.0;
      continue;
    }
    for (int64_t j = 0; j < d; ++j) row[j] /= norm;
  }
  return fell_back;
}

Tensor lambda_matrix(const MixupDraw& draw, int64_t n, int64_t k, bool one_minus) {
  Tensor m = Tensor::zeros({n, k});
  for (int64_t i = 0; i < n; ++i) {
    const double l = one_minus ? 1.0 - draw.lambda_for(i) : draw.lambda_for(i);
    for (int64_t j = 0; j < k; ++j) m[i * k + j] = l;
  }
  return m;
}

// Virtual label for a mixed pair, computed out of graph.
Tensor virtual_label(const ModelParams& params, WeightSource source, const ClassifierOut& fwd,
                     const MixupDraw& draw, MixSite site) {
  switch (site) {
    case MixSite::probabilities:
      return mix_rows(fwd.probs, draw);
    case MixSite::logits:
      return softmax_rows(mix_rows(fwd.logits, draw));
    case MixSite::intermediate: {
      Tape tape;
      BoundModel head(tape, params, source);
      return softmax_rows(head.logits_from_features(mix_rows(fwd.features, draw)).detached());
    }
  }
  throw ValueError("vmt_loss: unknown mixup site");
}

}  // namespace

const char* mix_site_name(MixSite s) {
  switch (s) {
    case MixSite::logits: return "logits";
    case MixSite::probabilities: return "probabilities";
    case MixSite::intermediate: return "intermediate";
  }
  return "?";
}

MixSite mix_site_from_string(const std::string& s) {
  if (s == "logits") return MixSite::logits;
  if (s == "probabilities" || s == "prob") return MixSite::probabilities;
  if (s == "intermediate" || s == "inter") return MixSite::intermediate;
  throw ConfigError("unknown mixup site '" + s + "' (accepted: logits, probabilities, intermediate)");
}

void LossWeights::validate() const {
  const std::pair<const char*, double> fields[] = {
      {"lambda_d", lambda_d}, {"lambda_s", lambda_s}, {"lambda_t", lambda_t}, {"beta", beta}};
  for (const auto& [name, v] : fields) {
    if (v < 0) {
      throw ValueError(std::string("loss weights: ") + name + " must be nonnegative, got " +
                       std::to_string(v));
    }
  }
}

void VatConfig::validate() const {
  if (epsilon < 0) throw ValueError("vat: epsilon must be nonnegative");
  if (xi < 0) throw ValueError("vat: xi must be nonnegative");
  if (power_iters < 1) throw ValueError("vat: power_iters must be at least 1");
}

void MixupConfig::validate() const {
  if (!(alpha > 0)) throw ValueError("mixup: alpha must be positive");
}

Tensor kl_divergence(Tape& tape, const Tensor& p, const Tensor& q) {
  if (p.rank() != 2 || q.rank() != 2 || !p.same_shape(q)) {
    throw ShapeError("kl_divergence: operand shapes " + p.shape_str() + " vs " + q.shape_str());
  }
  if (p.cols() < 1) throw ShapeError("kl_divergence: empty class axis");
  require_rows_sum_to_one(p, "p");
  require_rows_sum_to_one(q, "q");
  Tensor diff = tape.sub(ln_guarded(tape, p), ln_guarded(tape, q));
  Tensor per_element = tape.mul(p, diff);
  return tape.scale(tape.sum(per_element), 1.0 / static_cast<double>(p.rows()));
}

Tensor classification_loss(Tape& tape, const Tensor& probs, const Tensor& onehot) {
  if (probs.rank() != 2 || !probs.same_shape(onehot)) {
    throw ShapeError("classification_loss: probs " + probs.shape_str() + " vs labels " +
                     onehot.shape_str());
  }
  const int64_t n = onehot.rows(), k = onehot.cols();
  for (int64_t i = 0; i < n; ++i) {
    int64_t ones = 0;
    for (int64_t j = 0; j < k; ++j) {
      const double v = onehot.at(i, j);
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        throw ValueError("classification_loss: labels must be one-hot, row " + std::to_string(i));
      }
    }
    if (ones != 1) {
      throw ValueError("classification_loss: labels must be one-hot, row " + std::to_string(i));
    }
  }
  Tensor picked = tape.mul(onehot, ln_guarded(tape, probs));
  return tape.scale(tape.sum(picked), -1.0 / static_cast<double>(n));
}

DomainLossPair domain_losses(Tape& tape, const Tensor& d_src, const Tensor& d_tgt) {
  for (const Tensor* t : {&d_src, &d_tgt}) {
    if (t->rank() != 2 || t->cols() != 1) {
      throw ShapeError("domain_losses: discriminator output must be [n,1], got " +
                       t->shape_str());
    }
    for (int64_t i = 0; i < t->size(); ++i) {
      const double v = (*t)[i];
      if (v <= 0.0 || v >= 1.0) {
        throw ValueError("domain_losses: discriminator output " + std::to_string(v) +
                         " outside (0, 1)");
      }
    }
  }
  Tensor ones = Tensor::full(d_tgt.shape(), 1.0);
  Tensor one_minus_tgt = tape.add(ones, tape.neg(d_tgt));
  DomainLossPair out;
  out.disc = tape.add(tape.neg(tape.mean(tape.log(d_src))),
                      tape.neg(tape.mean(tape.log(one_minus_tgt))));
  out.gen = tape.neg(tape.mean(tape.log(d_tgt)));
  return out;
}

Tensor conditional_entropy(Tape& tape, const Tensor& probs) {
  if (probs.rank() != 2) {
    throw ShapeError("conditional_entropy: operand must be rank-2, got " + probs.shape_str());
  }
  if (probs.cols() < 1) throw ShapeError("conditional_entropy: empty class axis");
  require_rows_sum_to_one(probs, "probs");
  Tensor plogp = tape.mul(probs, ln_guarded(tape, probs));
  return tape.scale(tape.sum(plogp), -1.0 / static_cast<double>(probs.rows()));
}

MixupDraw draw_mixup(int64_t batch, const MixupConfig& cfg, RngStream& rng) {
  cfg.validate();
  if (batch < 2) throw ValueError("mixup: batch must contain at least 2 samples");
  MixupDraw draw;
  const int64_t n_lambda = cfg.per_sample_lambda ? batch : 1;
  draw.lambda.reserve(static_cast<size_t>(n_lambda));
  for (int64_t i = 0; i < n_lambda; ++i) draw.lambda.push_back(rng.beta_symmetric(cfg.alpha));
  draw.partner = rng.permutation(batch);
  return draw;
}

Tensor mix_rows(const Tensor& t, const MixupDraw& draw) {
  if (t.rank() != 2) throw ShapeError("mixup: operand must be rank-2, got " + t.shape_str());
  const int64_t n = t.rows(), k = t.cols();
  if (static_cast<int64_t>(draw.partner.size()) != n) {
    throw ShapeError("mixup: draw covers " + std::to_string(draw.partner.size()) +
                     " rows, tensor has " + std::to_string(n));
  }
  Tensor out = Tensor::zeros(t.shape());
  for (int64_t i = 0; i < n; ++i) {
    const double l = draw.lambda_for(i);
    kernels::axpby_serial(k, l, t.data() + i * k, 1.0 - l, t.data() + draw.partner[i] * k,
                          out.data() + i * k);
  }
  return out;
}

MixedBatch mixup_batch(const Tensor& x, const Tensor& aux, const MixupConfig& cfg,
                       RngStream& rng) {
  if (x.rank() != 2 || aux.rank() != 2 || x.rows() != aux.rows()) {
    throw ShapeError("mixup: x " + x.shape_str() + " and aux " + aux.shape_str() +
                     " must be rank-2 with matching rows");
  }
  MixedBatch out;
  out.draw = draw_mixup(x.rows(), cfg, rng);
  out.x = mix_rows(x, out.draw);
  out.aux = mix_rows(aux, out.draw);
  return out;
}

Tensor vat_loss(BoundModel& model, const Tensor& x, const VatConfig& cfg, RngStream& rng,
                FrozenVat* frozen) {
  cfg.validate();
  if (x.rank() != 2) throw ShapeError("vat_loss: x must be rank-2, got " + x.shape_str());
  if (cfg.epsilon == 0.0) {
    return model.tape().leaf(Tensor::scalar(0.0));
  }

  const int64_t n = x.rows(), d = x.cols();
  Tensor p_hat, r;
  if (frozen && frozen->captured) {
    p_hat = frozen->p_hat;
    r = frozen->r;
  } else {
    p_hat = forward_classifier(model.params(), model.source(), x).probs;
    const double xi = cfg.xi > 0 ? cfg.xi : 1e-6 * std::sqrt(static_cast<double>(d));

    Tensor u = Tensor::zeros({n, d});
    for (int64_t i = 0; i < u.size(); ++i) u[i] = rng.normal();
    normalize_rows(u, nullptr);
    const Tensor u0 = u;

    for (int iter = 0; iter < cfg.power_iters; ++iter) {
      Tape probe;
      BoundModel sub(probe, model.params(), model.source());
      Tensor u_leaf = probe.leaf(u);
      Tensor x_pert = probe.add(probe.leaf(x.detached()), probe.scale(u_leaf, xi));
      Tensor kl = kl_divergence(probe, p_hat, sub.classify(x_pert).probs);
      Gradients g = probe.backward(kl);
      u = g.at(u_leaf).detached();
      // The raw gradient scales like xi^2 times the local curvature; rescale
      // to curvature units so the degeneracy threshold below is scale-free.
      for (int64_t i = 0; i < u.size(); ++i) u[i] /= xi * xi;
      const int64_t fell_back = normalize_rows(u, &u0);
      if (fell_back > 0) {
        // Routine during the first few iterations of training; cap the noise.
        static std::atomic<int> reports{0};
        const int seen = ++reports;
        if (seen <= 5) {
          warn("vat_loss: " + std::to_string(fell_back) +
               " row(s) had a vanishing curvature gradient; kept the random start direction");
        } else if (seen == 6) {
          warn("vat_loss: suppressing further vanishing-curvature reports");
        }
      }
    }

    r = Tensor::zeros({n, d});
    for (int64_t i = 0; i < r.size(); ++i) r[i] = cfg.epsilon * u[i];
    if (frozen) {
      frozen->p_hat = p_hat;
      frozen->r = r;
      frozen->captured = true;
    }
  }

  Tensor x_adv = x.detached();
  for (int64_t i = 0; i < x_adv.size(); ++i) x_adv[i] += r[i];
  Tensor q = model.classify(x_adv).probs;
  return kl_divergence(model.tape(), p_hat, q);
}

Tensor vmt_loss(BoundModel& model, const Tensor& x, const MixupConfig& cfg, MixSite site,
                RngStream& rng, FrozenVmt* frozen) {
  cfg.validate();
  if (x.rank() != 2) throw ShapeError("vmt_loss: x must be rank-2, got " + x.shape_str());

  MixupDraw draw;
  Tensor x_mixed, ytilde;
  const bool replay = frozen && frozen->captured;
  if (replay) {
    draw = frozen->draw;
    x_mixed = frozen->x_mixed;
    ytilde = frozen->ytilde;
  } else {
    draw = draw_mixup(x.rows(), cfg, rng);
    x_mixed = mix_rows(x.detached(), draw);
    if (cfg.sever_virtual) {
      ClassifierOut fwd = forward_classifier(model.params(), model.source(), x);
      ytilde = virtual_label(model.params(), model.source(), fwd, draw, site);
    }
    if (frozen) {
      frozen->draw = draw;
      frozen->x_mixed = x_mixed;
      frozen->ytilde = ytilde;
      frozen->captured = true;
    }
  }

  Tape& tape = model.tape();
  Tensor q = model.classify(x_mixed).probs;
  if (cfg.sever_virtual) {
    return kl_divergence(tape, ytilde, q);
  }

  // Study mode: virtual labels stay in the graph, so their gradient flows
  // back into the predictions being mixed.
  ClassifierOut fwd = model.classify(x);
  Tensor yt;
  switch (site) {
    case MixSite::probabilities: {
      Tensor lam = lambda_matrix(draw, x.rows(), fwd.probs.cols(), false);
      Tensor lam1m = lambda_matrix(draw, x.rows(), fwd.probs.cols(), true);
      yt = tape.add(tape.mul(fwd.probs, lam),
                    tape.mul(tape.gather_rows(fwd.probs, draw.partner), lam1m));
      break;
    }
    case MixSite::logits: {
      Tensor lam = lambda_matrix(draw, x.rows(), fwd.logits.cols(), false);
      Tensor lam1m = lambda_matrix(draw, x.rows(), fwd.logits.cols(), true);
      yt = tape.softmax(tape.add(tape.mul(fwd.logits, lam),
                                 tape.mul(tape.gather_rows(fwd.logits, draw.partner), lam1m)));
      break;
    }
    case MixSite::intermediate: {
      Tensor lam = lambda_matrix(draw, x.rows(), fwd.features.cols(), false);
      Tensor lam1m = lambda_matrix(draw, x.rows(), fwd.features.cols(), true);
      Tensor mixed_f = tape.add(tape.mul(fwd.features, lam),
                                tape.mul(tape.gather_rows(fwd.features, draw.partner), lam1m));
      yt = tape.softmax(model.logits_from_features(mixed_f));
      break;
    }
  }
  return kl_divergence(tape, yt, q);
}

namespace {

// Shared scaffolding for the two composite objectives: timed term
// construction with the failing term named in any numeric error.
class TermBuilder {
 public:
  explicit TermBuilder(CombinedResult& out) : out_(out) {}

  template <class Fn>
  Tensor build(const std::string& key, Fn&& fn) {
    const double t0 = now_seconds();
    try {
      Tensor v = fn();
      out_.seconds[key] = now_seconds() - t0;
      out_.components[key] = v.item();
      return v;
    } catch (const NumericError& e) {
      throw NumericError(key + ": " + e.what());
    }
  }

  void skip(const std::string& key) {
    out_.components[key] = 0.0;
    out_.seconds[key] = 0.0;
  }

 private:
  CombinedResult& out_;
};

}  // namespace

CombinedResult combined_objective(BoundModel& model, const Tensor& x_src, const Tensor& y_src,
                                  const Tensor& x_tgt, const LossWeights& weights,
                                  const VatConfig& vat, const MixupConfig& mix,
                                  const LossTermMask& mask, RngStream& rng,
                                  FrozenObjective* frozen) {
  weights.validate();
  Tape& tape = model.tape();
  CombinedResult out;
  TermBuilder term(out);

  ClassifierOut src_fwd = model.classify(x_src);
  Tensor total = term.build("l_y", [&] {
    return classification_loss(tape, src_fwd.probs, y_src);
  });

  const bool want_gen = weights.lambda_d > 0;
  const bool want_tgt = weights.lambda_t > 0 &&
                        (mask.use_lm || mask.use_lv || mask.use_lc);
  std::optional<ClassifierOut> tgt_fwd;
  if (want_gen || want_tgt) tgt_fwd = model.classify(x_tgt);

  if (want_gen) {
    Tensor gen = term.build("l_d_gen", [&] {
      Tensor d_tgt = model.discriminate(tgt_fwd->features);
      return tape.neg(tape.mean(tape.log(d_tgt)));
    });
    total = tape.add(total, tape.scale(gen, weights.lambda_d));
  } else {
    term.skip("l_d_gen");
  }

  // Draw order is fixed: source mixup, source VAT, target mixup, target VAT.
  // Skipped terms draw nothing.
  if (weights.lambda_s > 0 && (mask.use_lm || mask.use_lv)) {
    std::optional<Tensor> src_reg;
    if (mask.use_lm) {
      Tensor lm = term.build("l_m_src", [&] {
        return vmt_loss(model, x_src, mix, mask.site, rng, frozen ? &frozen->vmt_src : nullptr);
      });
      src_reg = lm;
    } else {
      term.skip("l_m_src");
    }
    if (mask.use_lv) {
      Tensor lv = term.build("l_v_src", [&] {
        return vat_loss(model, x_src, vat, rng, frozen ? &frozen->vat_src : nullptr);
      });
      src_reg = src_reg ? tape.add(*src_reg, lv) : lv;
    } else {
      term.skip("l_v_src");
    }
    total = tape.add(total, tape.scale(*src_reg, weights.lambda_s));
  } else {
    term.skip("l_m_src");
    term.skip("l_v_src");
  }

  if (want_tgt) {
    std::optional<Tensor> tgt_reg;
    if (mask.use_lm) {
      Tensor lm = term.build("l_m_tgt", [&] {
        return vmt_loss(model, x_tgt, mix, mask.site, rng, frozen ? &frozen->vmt_tgt : nullptr);
      });
      tgt_reg = lm;
    } else {
      term.skip("l_m_tgt");
    }
    if (mask.use_lv) {
      Tensor lv = term.build("l_v_tgt", [&] {
        return vat_loss(model, x_tgt, vat, rng, frozen ? &frozen->vat_tgt : nullptr);
      });
      tgt_reg = tgt_reg ? tape.add(*tgt_reg, lv) : lv;
    } else {
      term.skip("l_v_tgt");
    }
    if (mask.use_lc) {
      Tensor lc = term.build("l_c_tgt", [&] { return conditional_entropy(tape, tgt_fwd->probs); });
      tgt_reg = tgt_reg ? tape.add(*tgt_reg, lc) : lc;
    } else {
      term.skip("l_c_tgt");
    }
    total = tape.add(total, tape.scale(*tgt_reg, weights.lambda_t));
  } else {
    term.skip("l_m_tgt");
    term.skip("l_v_tgt");
    term.skip("l_c_tgt");
  }

  if (frozen) frozen->captured = true;
  out.total = total;
  out.components["total"] = total.item();
  return out;
}

CombinedResult dirt_t_objective(BoundModel& student, const ModelParams& teacher,
                                const Tensor& x_tgt, const LossWeights& weights,
                                const VatConfig& vat, const MixupConfig& mix,
                                const LossTermMask& mask, RngStream& rng, FrozenDirt* frozen) {
  weights.validate();
  if (!(teacher.spec() == student.params().spec())) {
    throw ValueError("refinement: teacher and student architectures differ");
  }
  Tape& tape = student.tape();
  CombinedResult out;
  TermBuilder term(out);

  ClassifierOut stu_fwd = student.classify(x_tgt);

  std::optional<Tensor> reg;
  if (mask.use_lm) {
    Tensor lm = term.build("l_m_tgt", [&] {
      return vmt_loss(student, x_tgt, mix, mask.site, rng, frozen ? &frozen->vmt : nullptr);
    });
    reg = lm;
  } else {
    term.skip("l_m_tgt");
  }
  if (mask.use_lv) {
    Tensor lv = term.build("l_v_tgt", [&] {
      return vat_loss(student, x_tgt, vat, rng, frozen ? &frozen->vat : nullptr);
    });
    reg = reg ? tape.add(*reg, lv) : lv;
  } else {
    term.skip("l_v_tgt");
  }
  if (mask.use_lc) {
    Tensor lc = term.build("l_c_tgt", [&] { return conditional_entropy(tape, stu_fwd.probs); });
    reg = reg ? tape.add(*reg, lc) : lc;
  } else {
    term.skip("l_c_tgt");
  }

  Tensor teacher_probs;
  if (frozen && frozen->captured) {
    teacher_probs = frozen->teacher_probs;
  } else {
    teacher_probs = forward_classifier(teacher, WeightSource::raw, x_tgt).probs;
    if (frozen) frozen->teacher_probs = teacher_probs;
  }
  Tensor anchor = term.build("kl_teacher", [&] {
    return kl_divergence(tape, teacher_probs, stu_fwd.probs);
  });

  Tensor total = tape.scale(anchor, weights.beta);
  if (reg) total = tape.add(tape.scale(*reg, weights.lambda_t), total);
  if (frozen) frozen->captured = true;
  out.total = total;
  out.components["total"] = total.item();
  return out;
}

}  // namespace vmt
