#include "vmt/tensor.hpp"

#include <cmath>
#include <sstream>

#include "vmt/errors.hpp"

namespace vmt {

int64_t shape_size(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (int64_t d : shape_) {
    if (d < 0) throw ShapeError("tensor: negative extent in shape " + shape_to_string(shape_));
  }
  if (shape_size(shape_) != static_cast<int64_t>(data_.size())) {
    throw ShapeError("tensor: shape " + shape_to_string(shape_) + " does not match data length " +
                     std::to_string(data_.size()));
  }
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
  int64_t n = shape_size(shape);
  if (n < 0) throw ShapeError("tensor: negative extent in shape " + shape_to_string(shape));
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
  int64_t n = shape_size(shape);
  if (n < 0) throw ShapeError("tensor: negative extent in shape " + shape_to_string(shape));
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

int64_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("tensor: rows() on rank-" + std::to_string(rank()) + " tensor");
  return shape_[0];
}

int64_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("tensor: cols() on rank-" + std::to_string(rank()) + " tensor");
  return shape_[1];
}

double& Tensor::at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
double Tensor::at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("tensor: item() on non-scalar shape " + shape_str());
  return data_[0];
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.node_ = -1;
  t.tape_ = nullptr;
  return t;
}

}  // namespace vmt
