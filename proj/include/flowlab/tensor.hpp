#pragma once

#include <cstddef>
#include <vector>

namespace flowlab {

// Dense row-major tensor of 64-bit floats. Rank 0 (scalar), 1 (vector) and
// 2 (matrix) are the only ranks the library uses.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);
  static Tensor zeros_like(const Tensor& other);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t i) { return data[i]; }
  double at(std::size_t i) const { return data[i]; }
  double& at2(std::size_t r, std::size_t c);
  double at2(std::size_t r, std::size_t c) const;

  // Value of a single-element tensor.
  double item() const;

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
  void fill(double v);
};

std::size_t numel(const std::vector<std::size_t>& shape);
bool operator==(const Tensor& a, const Tensor& b);
bool operator!=(const Tensor& a, const Tensor& b);

// Debug-mode guard: NaN/Inf anywhere in a tensor is an error state, not a
// value to propagate. Compiled out in release builds.
#ifndef NDEBUG
void assert_finite(const Tensor& t, const char* where);
#else
inline void assert_finite(const Tensor&, const char*) {}
#endif

}  // namespace flowlab
