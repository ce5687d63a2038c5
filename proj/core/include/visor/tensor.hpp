#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "visor/error.hpp"

namespace visor {

// All tensor arithmetic runs in one fixed precision.
using Scalar = double;

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

// Dense row-major tensor. The element buffer is shared between copies
// (cheap handle semantics, like a view); use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);                       // zero-filled
  Tensor(Shape shape, std::vector<Scalar> values);

  static Tensor scalar(Scalar v);
  static Tensor full(Shape shape, Scalar v);
  static Tensor randn(Shape shape, std::mt19937_64& rng, Scalar stddev);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t size() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }
  bool empty() const { return size() == 0; }

  Scalar* data() { return data_->data(); }
  const Scalar* data() const { return data_->data(); }
  Scalar& at(std::int64_t i) { return (*data_)[static_cast<std::size_t>(i)]; }
  Scalar at(std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }

  // Value of a single-element tensor.
  Scalar item() const;

  Tensor clone() const;
  Tensor reshaped(Shape new_shape) const;  // shares the buffer

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

 private:
  Shape shape_;
  std::shared_ptr<std::vector<Scalar>> data_;
};

// Throws Error naming `op` if t contains NaN or Inf.
void ensure_finite(const Tensor& t, const char* op);

}  // namespace visor
