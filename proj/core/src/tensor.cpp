#include "ildm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ildm/error.hpp"

namespace ildm {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ContractError("negative dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_numel(shape_)) {
    throw ContractError("tensor payload of " + std::to_string(data_.size()) + " values does not match shape " +
                        shape_string(shape_));
  }
}

Tensor Tensor::randn(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (auto& v : t.data_) v = normal(rng);
  return t;
}

int Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw ContractError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (shape_numel(shape) != data_.size()) {
    throw ContractError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

Tensor Tensor::slice0(int begin, int end) const {
  if (rank() == 0 || begin < 0 || end > shape_[0] || begin > end) {
    throw ContractError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                        shape_string(shape_));
  }
  const std::size_t row = shape_[0] ? data_.size() / shape_[0] : 0;
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s), std::vector<float>(data_.begin() + begin * row, data_.begin() + end * row));
}

Tensor Tensor::index0(int index) const {
  Tensor t = slice0(index, index + 1);
  Shape s(shape_.begin() + 1, shape_.end());
  return std::move(t).reshaped(std::move(s));
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what) {
  if (!a.same_shape(b)) {
    throw ContractError(what + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()),
                        what);
  }
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("stack of zero tensors");
  Shape s = parts.front().shape();
  s.insert(s.begin(), static_cast<int>(parts.size()));
  std::vector<float> values;
  values.reserve(shape_numel(s));
  for (const auto& p : parts) {
    require_same_shape(parts.front(), p, "stack");
    values.insert(values.end(), p.storage().begin(), p.storage().end());
  }
  return Tensor(std::move(s), std::move(values));
}

Tensor operator+(const Tensor& a, const Tensor& b) { return axpby(1.0f, a, 1.0f, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return axpby(1.0f, a, -1.0f, b); }

Tensor operator*(const Tensor& a, float s) {
  Tensor out = a;
  for (auto& v : out.storage()) v *= s;
  return out;
}

Tensor axpby(float alpha, const Tensor& a, float beta, const Tensor& b) {
  require_same_shape(a, b, "axpby");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = alpha * a[i] + beta * b[i];
  return out;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  float m = 0.0f;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double mean_squared_error(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mean_squared_error");
  if (a.numel() == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.numel());
}

}  // namespace ildm
