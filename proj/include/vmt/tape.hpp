#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vmt/tensor.hpp"

namespace vmt {

enum class Prim : uint8_t {
  leaf,
  matmul,
  add,
  mul,
  relu,
  exp_,
  log_,
  neg,
  sum,
  mean,
  add_bias,     // [n,k] + [k], broadcast over rows
  scale,        // x * attrs.a
  clamp,        // clamp to [attrs.a, attrs.b]
  sigmoid,
  softmax,      // row-wise, max-subtracted
  concat_rows,
  slice_rows,   // rows [attrs.a, attrs.b)
  gather_rows,  // rows picked by attrs.indices
};

const char* prim_name(Prim p);

struct PrimAttrs {
  double a = 0.0;
  double b = 0.0;
  std::vector<int64_t> indices;
};

// Gradients of one backward pass, keyed by tape node id. Nodes the root does
// not reach have no entry.
class Gradients {
 public:
  bool has(const Tensor& t) const { return has_id(t.node()); }
  const Tensor& at(const Tensor& t) const;
  bool has_id(int node) const;
  const Tensor& at_id(int node) const;

 private:
  std::vector<Tensor> adj_;
  std::vector<char> touched_;
  friend class Tape;
};

// Record of one forward computation. Operations append nodes in execution
// order, which is already topological; backward walks the record once in
// reverse, accumulating adjoints across fan-out.
//
// Tapes are single-threaded by design; concurrency belongs at the level of
// whole runs. Kernels inside a primitive may still parallelize internally.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers an input; gradients can be read for it after backward().
  Tensor leaf(const Tensor& t);

  // Generic entry point; the named wrappers below are thin sugar over it.
  // Plain (untracked) input tensors are registered as leaves automatically.
  Tensor apply(Prim p, const std::vector<Tensor>& inputs, PrimAttrs attrs = {});

  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor relu(const Tensor& a);
  Tensor exp(const Tensor& a);
  Tensor log(const Tensor& a);
  Tensor neg(const Tensor& a);
  Tensor sum(const Tensor& a);
  Tensor mean(const Tensor& a);
  Tensor add_bias(const Tensor& x, const Tensor& bias);
  Tensor scale(const Tensor& a, double factor);
  Tensor clamp(const Tensor& a, double lo, double hi);
  Tensor clamp_min(const Tensor& a, double lo);
  Tensor sigmoid(const Tensor& a);
  Tensor softmax(const Tensor& a);
  Tensor concat_rows(const std::vector<Tensor>& parts);
  Tensor slice_rows(const Tensor& a, int64_t begin, int64_t end);
  Tensor gather_rows(const Tensor& a, std::vector<int64_t> rows);

  // Reverse pass from a scalar root. Each node is visited exactly once.
  Gradients backward(const Tensor& root) const;

  size_t num_nodes() const { return nodes_.size(); }
  const Tensor& value(int node) const;

 private:
  struct Node {
    Prim prim;
    std::vector<int> in;
    Tensor val;
    PrimAttrs attrs;
  };

  std::vector<Node> nodes_;

  int track(const Tensor& t);
  Tensor& record(Prim p, std::vector<int> in, Tensor val, PrimAttrs attrs);
};

// Row-wise max-subtracted softmax on plain values; the softmax primitive and
// every untracked evaluation route through this one implementation.
void softmax_rows_inplace(Tensor& t);
Tensor softmax_rows(const Tensor& t);

}  // namespace vmt
