#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace distfl {

// Dense row-major tensor of 64-bit floats. The networks here only ever need
// 1-D vectors and 2-D matrices, so the accessors are specialized for those.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != data.size()) {
      throw std::invalid_argument("Tensor: shape/data length mismatch");
    }
  }

  static Tensor zeros(std::vector<std::size_t> s) {
    const std::size_t n = numel_of(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }

  static Tensor full(std::vector<std::size_t> s, double value) {
    const std::size_t n = numel_of(s);
    return Tensor(std::move(s), std::vector<double>(n, value));
  }

  std::size_t numel() const { return data.size(); }

  std::size_t rows() const {
    if (shape.size() != 2) throw std::invalid_argument("Tensor: rows() needs a 2-D tensor");
    return shape[0];
  }

  std::size_t cols() const {
    if (shape.size() != 2) throw std::invalid_argument("Tensor: cols() needs a 2-D tensor");
    return shape[1];
  }

  double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void require_finite(const std::string& what) const {
    if (!all_finite()) {
      throw std::runtime_error("non-finite value in " + what);
    }
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t e : s) {
      if (e == 0) throw std::invalid_argument("Tensor: zero extent");
      n *= e;
    }
    return n;
  }
};

}  // namespace distfl
