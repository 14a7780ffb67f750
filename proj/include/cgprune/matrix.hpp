#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cgprune {

// Dense row-major matrix of doubles; one row per sample.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  void append_row(std::span<const double> values) {
    if (rows == 0 && cols == 0) cols = values.size();
    data.insert(data.end(), values.begin(), values.end());
    ++rows;
  }
};

}  // namespace cgprune
