#include "vmt/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vmt/errors.hpp"
#include "vmt/kernels.hpp"

namespace vmt {

const char* prim_name(Prim p) {
  switch (p) {
    case Prim::leaf: return "leaf";
    case Prim::matmul: return "matmul";
    case Prim::add: return "add";
    case Prim::mul: return "mul";
    case Prim::relu: return "relu";
    case Prim::exp_: return "exp";
    case Prim::log_: return "log";
    case Prim::neg: return "neg";
    case Prim::sum: return "sum";
    case Prim::mean: return "mean";
    case Prim::add_bias: return "add_bias";
    case Prim::scale: return "scale";
    case Prim::clamp: return "clamp";
    case Prim::sigmoid: return "sigmoid";
    case Prim::softmax: return "softmax";
    case Prim::concat_rows: return "concat_rows";
    case Prim::slice_rows: return "slice_rows";
    case Prim::gather_rows: return "gather_rows";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_fail(Prim p, const std::string& detail) {
  throw ShapeError(std::string(prim_name(p)) + ": " + detail);
}

void require_rank2(Prim p, const Tensor& t, const char* which) {
  if (t.rank() != 2) {
    shape_fail(p, std::string(which) + " operand must be rank-2, got shape " + t.shape_str());
  }
}

double sigmoid_stable(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void softmax_rows_inplace(Tensor& t) {
  if (t.rank() != 2) throw ShapeError("softmax: operand must be rank-2, got shape " + t.shape_str());
  const int64_t n = t.rows(), k = t.cols();
  if (k == 0) throw ShapeError("softmax: empty class axis in shape " + t.shape_str());
  double* d = t.data();
  for (int64_t i = 0; i < n; ++i) {
    double* row = d + i * k;
    double m = row[0];
    for (int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      row[j] = std::exp(row[j] - m);
      z += row[j];
    }
    for (int64_t j = 0; j < k; ++j) row[j] /= z;
  }
}

Tensor softmax_rows(const Tensor& t) {
  Tensor out = t.detached();
  softmax_rows_inplace(out);
  return out;
}

const Tensor& Gradients::at(const Tensor& t) const {
  if (t.node() < 0) throw ValueError("gradients: tensor is not tracked on a tape");
  return at_id(t.node());
}

bool Gradients::has_id(int node) const {
  return node >= 0 && node < static_cast<int>(touched_.size()) &&
         touched_[static_cast<size_t>(node)];
}

const Tensor& Gradients::at_id(int node) const {
  if (!has_id(node)) {
    throw ValueError("gradients: node " + std::to_string(node) + " has no gradient entry");
  }
  return adj_[static_cast<size_t>(node)];
}

int Tape::track(const Tensor& t) {
  if (t.node() >= 0) {
    if (t.tape_tag() != this) throw ValueError("tape: tensor belongs to a different tape");
    if (t.node() >= static_cast<int>(nodes_.size())) {
      throw ValueError("tape: stale node id " + std::to_string(t.node()));
    }
    return t.node();
  }
  const Tensor& reg = leaf(t);
  return reg.node();
}

Tensor Tape::leaf(const Tensor& t) {
  if (!t.all_finite()) throw NumericError("leaf: non-finite input values");
  Node n;
  n.prim = Prim::leaf;
  n.val = t.detached();
  nodes_.push_back(std::move(n));
  Tensor out = nodes_.back().val;
  out.node_ = static_cast<int>(nodes_.size()) - 1;
  out.tape_ = this;
  return out;
}

Tensor& Tape::record(Prim p, std::vector<int> in, Tensor val, PrimAttrs attrs) {
  if (!val.all_finite()) {
    throw NumericError(std::string(prim_name(p)) + ": non-finite output (shape " +
                       val.shape_str() + ")");
  }
  Node n;
  n.prim = p;
  n.in = std::move(in);
  n.val = std::move(val);
  n.attrs = std::move(attrs);
  nodes_.push_back(std::move(n));
  Node& stored = nodes_.back();
  stored.val.node_ = static_cast<int>(nodes_.size()) - 1;
  stored.val.tape_ = this;
  return stored.val;
}

const Tensor& Tape::value(int node) const {
  if (node < 0 || node >= static_cast<int>(nodes_.size())) {
    throw ValueError("tape: no node " + std::to_string(node));
  }
  return nodes_[static_cast<size_t>(node)].val;
}

Tensor Tape::apply(Prim p, const std::vector<Tensor>& inputs, PrimAttrs attrs) {
  auto unary = [&](const char*) -> const Tensor& {
    if (inputs.size() != 1) {
      throw ValueError(std::string(prim_name(p)) + ": expects 1 input, got " +
                       std::to_string(inputs.size()));
    }
    return inputs[0];
  };
  auto binary = [&]() -> std::pair<const Tensor&, const Tensor&> {
    if (inputs.size() != 2) {
      throw ValueError(std::string(prim_name(p)) + ": expects 2 inputs, got " +
                       std::to_string(inputs.size()));
    }
    return {inputs[0], inputs[1]};
  };

  switch (p) {
    case Prim::leaf: {
      return leaf(unary("x"));
    }

    case Prim::matmul: {
      auto [a, b] = binary();
      require_rank2(p, a, "left");
      require_rank2(p, b, "right");
      if (a.cols() != b.rows()) {
        shape_fail(p, "incompatible shapes " + a.shape_str() + " x " + b.shape_str());
      }
      const int ia = track(a), ib = track(b);
      Tensor out = Tensor::zeros({a.rows(), b.cols()});
      kernels::matmul(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
      return record(p, {ia, ib}, std::move(out), {});
    }

    case Prim::add:
    case Prim::mul: {
      auto [a, b] = binary();
      if (!a.same_shape(b)) {
        shape_fail(p, "operand shapes differ: " + a.shape_str() + " vs " + b.shape_str());
      }
      const int ia = track(a), ib = track(b);
      Tensor out = Tensor::zeros(a.shape());
      if (p == Prim::add) {
        kernels::zip(a.size(), a.data(), b.data(), out.data(),
                     [](double x, double y) { return x + y; });
      } else {
        kernels::zip(a.size(), a.data(), b.data(), out.data(),
                     [](double x, double y) { return x * y; });
      }
      return record(p, {ia, ib}, std::move(out), {});
    }

    case Prim::relu:
    case Prim::exp_:
    case Prim::log_:
    case Prim::neg:
    case Prim::sigmoid: {
      const Tensor& a = unary("x");
      const int ia = track(a);
      Tensor out = Tensor::zeros(a.shape());
      switch (p) {
        case Prim::relu:
          kernels::map(a.size(), a.data(), out.data(),
                       [](double x) { return x > 0.0 ? x : 0.0; });
          break;
        case Prim::exp_:
          kernels::map(a.size(), a.data(), out.data(), [](double x) { return std::exp(x); });
          break;
        case Prim::log_:
          kernels::map(a.size(), a.data(), out.data(), [](double x) { return std::log(x); });
          break;
        case Prim::neg:
          kernels::map(a.size(), a.data(), out.data(), [](double x) { return -x; });
          break;
        default:
          kernels::map(a.size(), a.data(), out.data(), sigmoid_stable);
          break;
      }
      return record(p, {ia}, std::move(out), {});
    }

    case Prim::sum:
    case Prim::mean: {
      const Tensor& a = unary("x");
      if (p == Prim::mean && a.size() == 0) {
        throw ValueError("mean: empty tensor has no mean");
      }
      const int ia = track(a);
      // Serial accumulation: reduction order is part of the reproducibility
      // contract.
      double acc = 0.0;
      const double* d = a.data();
      for (int64_t i = 0; i < a.size(); ++i) acc += d[i];
      if (p == Prim::mean) acc /= static_cast<double>(a.size());
      return record(p, {ia}, Tensor::scalar(acc), {});
    }

    case Prim::add_bias: {
      auto [x, bias] = binary();
      require_rank2(p, x, "left");
      if (bias.rank() != 1 || bias.size() != x.cols()) {
        shape_fail(p, "bias shape " + bias.shape_str() + " does not match trailing axis of " +
                       x.shape_str());
      }
      const int ix = track(x), ib = track(bias);
      Tensor out = Tensor::zeros(x.shape());
      const int64_t n = x.rows(), k = x.cols();
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < k; ++j) out[i * k + j] = x[i * k + j] + bias[j];
      }
      return record(p, {ix, ib}, std::move(out), {});
    }

    case Prim::scale: {
      const Tensor& a = unary("x");
      if (!std::isfinite(attrs.a)) throw NumericError("scale: non-finite factor");
      const int ia = track(a);
      Tensor out = Tensor::zeros(a.shape());
      const double f = attrs.a;
      kernels::map(a.size(), a.data(), out.data(), [f](double x) { return f * x; });
      return record(p, {ia}, std::move(out), std::move(attrs));
    }

    case Prim::clamp: {
      const Tensor& a = unary("x");
      if (std::isnan(attrs.a) || std::isnan(attrs.b) || attrs.a > attrs.b) {
        throw ValueError("clamp: invalid bounds");
      }
      const int ia = track(a);
      Tensor out = Tensor::zeros(a.shape());
      const double lo = attrs.a, hi = attrs.b;
      kernels::map(a.size(), a.data(), out.data(),
                   [lo, hi](double x) { return std::min(std::max(x, lo), hi); });
      return record(p, {ia}, std::move(out), std::move(attrs));
    }

    case Prim::softmax: {
      const Tensor& a = unary("x");
      const int ia = track(a);
      Tensor out = a.detached();
      softmax_rows_inplace(out);
      return record(p, {ia}, std::move(out), {});
    }

    case Prim::concat_rows: {
      if (inputs.empty()) throw ValueError("concat_rows: expects at least 1 input");
      int64_t total = 0;
      for (const Tensor& t : inputs) {
        require_rank2(p, t, "every");
        if (t.cols() != inputs[0].cols()) {
          shape_fail(p, "column mismatch: " + inputs[0].shape_str() + " vs " + t.shape_str());
        }
        total += t.rows();
      }
      std::vector<int> ids;
      ids.reserve(inputs.size());
      for (const Tensor& t : inputs) ids.push_back(track(t));
      const int64_t k = inputs[0].cols();
      Tensor out = Tensor::zeros({total, k});
      int64_t r = 0;
      for (const Tensor& t : inputs) {
        std::copy(t.data(), t.data() + t.size(), out.data() + r * k);
        r += t.rows();
      }
      return record(p, std::move(ids), std::move(out), {});
    }

    case Prim::slice_rows: {
      const Tensor& a = unary("x");
      require_rank2(p, a, "the");
      const int64_t begin = static_cast<int64_t>(attrs.a), end = static_cast<int64_t>(attrs.b);
      if (begin < 0 || end < begin || end > a.rows()) {
        shape_fail(p, "row range [" + std::to_string(begin) + "," + std::to_string(end) +
                       ") out of bounds for shape " + a.shape_str());
      }
      const int ia = track(a);
      const int64_t k = a.cols();
      Tensor out = Tensor::zeros({end - begin, k});
      std::copy(a.data() + begin * k, a.data() + end * k, out.data());
      return record(p, {ia}, std::move(out), std::move(attrs));
    }

    case Prim::gather_rows: {
      const Tensor& a = unary("x");
      require_rank2(p, a, "the");
      for (int64_t idx : attrs.indices) {
        if (idx < 0 || idx >= a.rows()) {
          shape_fail(p, "row index " + std::to_string(idx) + " out of bounds for shape " +
                         a.shape_str());
        }
      }
      const int ia = track(a);
      const int64_t k = a.cols();
      Tensor out = Tensor::zeros({static_cast<int64_t>(attrs.indices.size()), k});
      for (size_t r = 0; r < attrs.indices.size(); ++r) {
        const int64_t src = attrs.indices[r];
        std::copy(a.data() + src * k, a.data() + (src + 1) * k,
                  out.data() + static_cast<int64_t>(r) * k);
      }
      return record(p, {ia}, std::move(out), std::move(attrs));
    }
  }
  throw ValueError("apply: unknown primitive");
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) { return apply(Prim::matmul, {a, b}); }
Tensor Tape::add(const Tensor& a, const Tensor& b) { return apply(Prim::add, {a, b}); }
Tensor Tape::mul(const Tensor& a, const Tensor& b) { return apply(Prim::mul, {a, b}); }
Tensor Tape::relu(const Tensor& a) { return apply(Prim::relu, {a}); }
Tensor Tape::exp(const Tensor& a) { return apply(Prim::exp_, {a}); }
Tensor Tape::log(const Tensor& a) { return apply(Prim::log_, {a}); }
Tensor Tape::neg(const Tensor& a) { return apply(Prim::neg, {a}); }
Tensor Tape::sum(const Tensor& a) { return apply(Prim::sum, {a}); }
Tensor Tape::mean(const Tensor& a) { return apply(Prim::mean, {a}); }
Tensor Tape::add_bias(const Tensor& x, const Tensor& bias) {
  return apply(Prim::add_bias, {x, bias});
}
Tensor Tape::scale(const Tensor& a, double factor) {
  PrimAttrs at;
  at.a = factor;
  return apply(Prim::scale, {a}, std::move(at));
}
Tensor Tape::clamp(const Tensor& a, double lo, double hi) {
  PrimAttrs at;
  at.a = lo;
  at.b = hi;
  return apply(Prim::clamp, {a}, std::move(at));
}
Tensor Tape::clamp_min(const Tensor& a, double lo) {
  return clamp(a, lo, std::numeric_limits<double>::infinity());
}
Tensor Tape::sigmoid(const Tensor& a) { return apply(Prim::sigmoid, {a}); }
Tensor Tape::softmax(const Tensor& a) { return apply(Prim::softmax, {a}); }
Tensor Tape::concat_rows(const std::vector<Tensor>& parts) {
  return apply(Prim::concat_rows, parts);
}
Tensor Tape::slice_rows(const Tensor& a, int64_t begin, int64_t end) {
  PrimAttrs at;
  at.a = static_cast<double>(begin);
  at.b = static_cast<double>(end);
  return apply(Prim::slice_rows, {a}, std::move(at));
}
Tensor Tape::gather_rows(const Tensor& a, std::vector<int64_t> rows) {
  PrimAttrs at;
  at.indices = std::move(rows);
  return apply(Prim::gather_rows, {a}, std::move(at));
}

Gradients Tape::backward(const Tensor& root) const {
  if (root.node() < 0 || root.tape_tag() != this) {
    throw ValueError("backward: root is not on this tape");
  }
  if (root.size() != 1) {
    throw ValueError("backward: root must be scalar, got shape " + root.shape_str());
  }

  Gradients g;
  g.adj_.resize(nodes_.size());
  g.touched_.assign(nodes_.size(), 0);

  auto touch = [&](int id, const std::vector<int64_t>& shape) -> Tensor& {
    if (!g.touched_[static_cast<size_t>(id)]) {
      g.adj_[static_cast<size_t>(id)] = Tensor::zeros(shape);
      g.touched_[static_cast<size_t>(id)] = 1;
    }
    return g.adj_[static_cast<size_t>(id)];
  };

  const int root_id = root.node();
  touch(root_id, nodes_[static_cast<size_t>(root_id)].val.shape())[0] = 1.0;

  for (int i = root_id; i >= 0; --i) {
    if (!g.touched_[static_cast<size_t>(i)]) continue;
    const Node& n = nodes_[static_cast<size_t>(i)];
    const Tensor& d = g.adj_[static_cast<size_t>(i)];

    switch (n.prim) {
      case Prim::leaf:
        break;

      case Prim::matmul: {
        const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].val;
        const Tensor& b = nodes_[static_cast<size_t>(n.in[1])].val;
        Tensor& da = touch(n.in[0], a.shape());
        Tensor& db = touch(n.in[1], b.shape());
        Tensor tmp_a = Tensor::zeros(a.shape());
        kernels::matmul(d.data(), b.data(), tmp_a.data(), a.rows(), b.cols(), a.cols(), false,
                        true);
        for (int64_t t = 0; t < da.size(); ++t) da[t] += tmp_a[t];
        Tensor tmp_b = Tensor::zeros(b.shape());
        kernels::matmul(a.data(), d.data(), tmp_b.data(), a.cols(), a.rows(), b.cols(), true,
                        false);
        for (int64_t t = 0; t < db.size(); ++t) db[t] += tmp_b[t];
        break;
      }

      case Prim::add: {
        const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].val;
        const Tensor& b = nodes_[static_cast<size_t>(n.in[1])].val;
        Tensor& da = touch(n.in[0], a.shape());
        Tensor& db = touch(n.in[1], b.shape());
        for (int64_t t = 0; t < d.size(); ++t) da[t] += d[t];
        for (int64_t t = 0; t < d.size(); ++t) db[t] += d[t];
        break;
      }

      case Prim::mul: {
        const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].val;
        const Tensor& b = nodes_[static_cast<size_t>(n.in[1])].val;
        Tensor& da = touch(n.in[0], a.shape());
        Tensor& db = touch(n.in[1], b.shape());
        for (int64_t t = 0; t < d.size(); ++t) da[t] += d[t] * b[t];
        for (int64_t t = 0; t < d.size(); ++t) db[t] += d[t] * a[t];
        break;
      }

      case Prim::relu: {
        const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].val;
        Tensor& da = touch(n.in[0], a.shape());
        for (int64_t t = 0; t < d.size(); ++t) {
          if (a[t] > 0.0) da[t] += d[t];
        }
        break;
      }

      case Prim::exp_: {
        Tensor& da = touch(n.in[0], n.val.shape());
        for (int64_t t = 0; t < d.size(); ++t) da[t] += d[t] * n.val[t];
        break;
      }

      case Prim::log_: {
        const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].val;
        Tensor& da = touch(n.in[0], a.shape());
        for (int64_t t = 0; t < d.size(); ++t) da[t] += d[t] / a[t];
        break;
      }

      case Prim::neg: {
        Tensor& da = touch(n.in[0], n.val.shape());
        for (int64_t t = 0; t < d.size(); ++t) da[t] -= d[t];
        break;
      }

      case Prim::sum: {
        const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].val;
        Tensor& da = touch(n.in[0], a.shape());
        const double s = d[0];
        for (int64_t t = 0; t < da.size(); ++t) da[t] += s;
        break;
      }

      case Prim::mean: {
        const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].val;
        Tensor& da = touch(n.in[0], a.shape());
        const double s = d[0] / static_cast<double>(a.size());
        for (int64_t t = 0; t < da.size(); ++t) da[t] += s;
        break;
      }

      case Prim::add_bias: {
        const Tensor& x = nodes_[static_cast<size_t>(n.in[0])].val;
        const Tensor& bias = nodes_[static_cast<size_t>(n.in[1])].val;
        Tensor& dx = touch(n.in[0], x.shape());
        Tensor& db = touch(n.in[1], bias.shape());
        const int64_t rows = x.rows(), k = x.cols();
        for (int64_t t = 0; t < d.size(); ++t) dx[t] += d[t];
        for (int64_t r = 0; r < rows; ++r) {
          for (int64_t j = 0; j < k; ++j) db[j] += d[r * k + j];
        }
        break;
      }

      case Prim::scale: {
        Tensor& da = touch(n.in[0], n.val.shape());
        const double f = n.attrs.a;
        for (int64_t t = 0; t < d.size(); ++t) da[t] += f * d[t];
        break;
      }

      case Prim::clamp: {
        const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].val;
        Tensor& da = touch(n.in[0], a.shape());
        const double lo = n.attrs.a, hi = n.attrs.b;
        for (int64_t t = 0; t < d.size(); ++t) {
          if (a[t] > lo && a[t] < hi) da[t] += d[t];
        }
        break;
      }

      case Prim::sigmoid: {
        Tensor& da = touch(n.in[0], n.val.shape());
        for (int64_t t = 0; t < d.size(); ++t) da[t] += d[t] * n.val[t] * (1.0 - n.val[t]);
        break;
      }

      case Prim::softmax: {
        const Tensor& p = n.val;
        Tensor& da = touch(n.in[0], p.shape());
        const int64_t rows = p.rows(), k = p.cols();
        for (int64_t r = 0; r < rows; ++r) {
          const double* prow = p.data() + r * k;
          const double* drow = d.data() + r * k;
          double dot = 0.0;
          for (int64_t j = 0; j < k; ++j) dot += drow[j] * prow[j];
          double* out = da.data() + r * k;
          for (int64_t j = 0; j < k; ++j) out[j] += prow[j] * (drow[j] - dot);
        }
        break;
      }

      case Prim::concat_rows: {
        int64_t r = 0;
        const int64_t k = n.val.cols();
        for (int in_id : n.in) {
          const Tensor& part = nodes_[static_cast<size_t>(in_id)].val;
          Tensor& dp = touch(in_id, part.shape());
          const double* src = d.data() + r * k;
          for (int64_t t = 0; t < part.size(); ++t) dp[t] += src[t];
          r += part.rows();
        }
        break;
      }

      case Prim::slice_rows: {
        const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].val;
        Tensor& da = touch(n.in[0], a.shape());
        const int64_t begin = static_cast<int64_t>(n.attrs.a);
        const int64_t k = a.cols();
        double* dst = da.data() + begin * k;
        for (int64_t t = 0; t < d.size(); ++t) dst[t] += d[t];
        break;
      }

      case Prim::gather_rows: {
        const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].val;
        Tensor& da = touch(n.in[0], a.shape());
        const int64_t k = a.cols();
        for (size_t r = 0; r < n.attrs.indices.size(); ++r) {
          const int64_t dst = n.attrs.indices[r];
          const double* src = d.data() + static_cast<int64_t>(r) * k;
          double* out = da.data() + dst * k;
          for (int64_t j = 0; j < k; ++j) out[j] += src[j];
        }
        break;
      }
    }
  }

  return g;
}

}  // namespace vmt
