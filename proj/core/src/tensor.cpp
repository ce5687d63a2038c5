#include "visor/tensor.hpp"

#include <cmath>
#include <sstream>

namespace visor {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) {
    if (e <= 0) throw Error("tensor shape has non-positive extent " + shape_str(s));
    n *= e;
  }
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_ = std::make_shared<std::vector<Scalar>>(static_cast<std::size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<Scalar> values) : shape_(std::move(shape)) {
  if (shape_numel(shape_) != static_cast<std::int64_t>(values.size())) {
    throw Error("tensor data length " + std::to_string(values.size()) +
                " does not match shape " + shape_str(shape_));
  }
  data_ = std::make_shared<std::vector<Scalar>>(std::move(values));
}

Tensor Tensor::scalar(Scalar v) { return Tensor({1}, {v}); }

Tensor Tensor::full(Shape shape, Scalar v) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t.at(i) = v;
  return t;
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, Scalar stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<Scalar> dist(0.0, stddev);
  for (std::int64_t i = 0; i < t.size(); ++i) t.at(i) = dist(rng);
  return t;
}

Scalar Tensor::item() const {
  if (size() != 1) throw Error("item() on tensor of shape " + shape_str(shape_));
  return at(0);
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = data_ ? std::make_shared<std::vector<Scalar>>(*data_) : nullptr;
  return t;
}

Tensor Tensor::reshaped(Shape new_shape) const {
  if (shape_numel(new_shape) != size()) {
    throw Error("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(new_shape));
  }
  Tensor t;
  t.shape_ = std::move(new_shape);
  t.data_ = data_;
  return t;
}

bool Tensor::all_finite() const {
  for (std::int64_t i = 0; i < size(); ++i) {
    if (!std::isfinite(at(i))) return false;
  }
  return true;
}

void ensure_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) {
    throw Error(std::string("non-finite value produced by op '") + op + "'");
  }
}

}  // namespace visor
