#include "flowlab/tensor.hpp"

#include <cmath>
#include <string>

#include "flowlab/errors.hpp"

namespace flowlab {

std::size_t numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> s, double fill)
    : shape(std::move(s)), data(numel(shape), fill) {}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.shape = {};
  t.data = {v};
  return t;
}

Tensor Tensor::vector(std::vector<double> v) {
  Tensor t;
  t.shape = {v.size()};
  t.data = std::move(v);
  return t;
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  require(v.size() == rows * cols, "E_SHAPE", "matrix data size does not match rows*cols");
  Tensor t;
  t.shape = {rows, cols};
  t.data = std::move(v);
  return t;
}

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.shape, 0.0); }

std::size_t Tensor::rows() const {
  require(rank() == 2, "E_SHAPE", "rows() on non-matrix");
  return shape[0];
}

std::size_t Tensor::cols() const {
  require(rank() == 2, "E_SHAPE", "cols() on non-matrix");
  return shape[1];
}

double& Tensor::at2(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
double Tensor::at2(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

double Tensor::item() const {
  require(size() == 1, "E_SHAPE", "item() on tensor with " + std::to_string(size()) + " elements");
  return data[0];
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::fill(double v) {
  for (double& x : data) x = v;
}

bool operator==(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape && a.data == b.data;
}

bool operator!=(const Tensor& a, const Tensor& b) { return !(a == b); }

#ifndef NDEBUG
void assert_finite(const Tensor& t, const char* where) {
  if (!t.all_finite()) fail("E_NONFINITE", std::string("non-finite value in ") + where);
}
#endif

}  // namespace flowlab
