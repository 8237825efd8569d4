#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fedvid/error.hpp"

namespace fedvid {

// Dense row-major tensor of 64-bit floats.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {}

  static Tensor zeros(std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (std::size_t dim : shape) n *= dim;
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }

  std::size_t size() const { return data.size(); }

  bool shape_equals(const Tensor& other) const { return shape == other.shape; }
};

inline std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t dim : shape) n *= dim;
  return n;
}

inline bool tensor_consistent(const Tensor& t) {
  return shape_product(t.shape) == t.data.size();
}

inline bool all_finite(const Tensor& t) {
  for (double v : t.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

inline std::string shape_to_string(const std::vector<std::size_t>& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(shape[i]);
  }
  out += "]";
  return out;
}

}  // namespace fedvid
