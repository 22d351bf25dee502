#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace bayesformer {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

// Dense row-major float32 array. Most of the library works on rank-2
// tensors; vectors are stored as 1 x n rows.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor matrix(std::initializer_list<std::initializer_list<float>> rows);
  static Tensor row(std::initializer_list<float> values);
  static Tensor scalar(float value) { return Tensor({1, 1}, {value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Rank-2 accessors.
  std::size_t rows() const;
  std::size_t cols() const;
  float& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  std::span<float> row_span(std::size_t r);
  std::span<const float> row_span(std::size_t r) const;

  // Scalar value of a single-element tensor.
  float item() const;

  void fill(float value);
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Plain kernels. The graph ops in graph.hpp wrap these with backward rules.
Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T without materializing the transpose.
Tensor matmul_bt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);

// Max-subtracted softmax along `axis` (any rank).
Tensor softmax(const Tensor& x, std::size_t axis);

// Normalizes the last axis using the population variance, then gamma * xhat + beta.
inline constexpr float kLayerNormEps = 1e-5f;
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps = kLayerNormEps);

float gelu(float x);
float gelu_derivative(float x);

// Largest |a - b| / max(|a|, |b|, floor) over all elements.
double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-12);

}  // namespace bayesformer
