#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ildm {

using Shape = std::vector<int>;
using Rng = std::mt19937_64;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major float tensor with value semantics. Image-like tensors are
/// laid out NCHW (or CHW for a single sample).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor randn(const Shape& shape, Rng& rng);
  static Tensor like(const Tensor& other, float fill = 0.0f) { return Tensor(other.shape(), fill); }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int axis) const;
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  std::vector<float>& storage() noexcept { return data_; }
  const std::vector<float>& storage() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Same data, new shape; element counts must agree.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  /// Rows [begin, end) along axis 0.
  Tensor slice0(int begin, int end) const;
  /// Row `index` along axis 0 with the leading axis dropped.
  Tensor index0(int index) const;

  void fill(float value);
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Throws ContractError naming `what` when shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what);

/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);

// Elementwise helpers on plain tensors (no autograd).
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, float s);
Tensor axpby(float alpha, const Tensor& a, float beta, const Tensor& b);
float max_abs_diff(const Tensor& a, const Tensor& b);
double mean_squared_error(const Tensor& a, const Tensor& b);

}  // namespace ildm
