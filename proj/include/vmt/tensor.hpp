#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vmt {

int64_t shape_size(const std::vector<int64_t>& shape);
std::string shape_to_string(const std::vector<int64_t>& shape);

// Dense row-major array of doubles. Rank 0 is a scalar.
// A tensor may carry the id of the tape node that produced it; plain data
// tensors have node() == -1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<int64_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<int64_t> shape);
  static Tensor full(std::vector<int64_t> shape, double value);
  static Tensor scalar(double value);

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  int64_t rows() const;
  int64_t cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  double& at(int64_t r, int64_t c);
  double at(int64_t r, int64_t c) const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  double item() const;

  int node() const { return node_; }
  const void* tape_tag() const { return tape_; }
  Tensor detached() const;

  std::string shape_str() const { return shape_to_string(shape_); }

 private:
  std::vector<int64_t> shape_;
  std::vector<double> data_;
  int node_ = -1;
  const void* tape_ = nullptr;

  friend class Tape;
};

}  // namespace vmt
