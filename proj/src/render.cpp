#include "hymamba/render.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace hym::data {

Tensor render_matrix(std::size_t bands) {
  if (bands == 0) throw ConfigError("render_matrix: bands must be positive");
  const double c = static_cast<double>(bands);
  const double centres[3] = {c / 6.0, c / 2.0, 5.0 * c / 6.0};
  const double width = c / 6.0;
  std::vector<double> m(3 * bands);
  for (std::size_t r = 0; r < 3; ++r) {
    double total = 0.0;
    for (std::size_t b = 0; b < bands; ++b) {
      const double u = (static_cast<double>(b) + 0.5 - centres[r]) / width;
      m[r * bands + b] = std::exp(-0.5 * u * u);
      total += m[r * bands + b];
    }
    for (std::size_t b = 0; b < bands; ++b) m[r * bands + b] /= total;
  }
  return Tensor({3, bands}, std::move(m));
}

void validate_render_matrix(const Tensor& m) {
  if (m.ndim() != 2 || m.rows() != 3) {
    throw ConfigError("render matrix must be 3×C, got " + shape_str(m.shape()));
  }
  for (std::size_t r = 0; r < 3; ++r) {
    double total = 0.0;
    for (std::size_t b = 0; b < m.cols(); ++b) {
      const double v = m.at(r, b);
      if (!(v >= 0.0)) {
        throw ConfigError("render matrix entry (" + std::to_string(r) + ", " + std::to_string(b) +
                          ") is negative");
      }
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw ConfigError("render matrix row " + std::to_string(r) + " sums to " +
                        std::to_string(total) + ", expected 1");
    }
  }
}

Tensor false_color_render(const Tensor& cube, const Tensor& m, bool clamp) {
  validate_render_matrix(m);
  if (cube.ndim() != 3 || cube.dim(2) != m.cols()) {
    throw DimensionError("false_color_render: cube " + shape_str(cube.shape()) +
                         " vs matrix " + shape_str(m.shape()));
  }
  const std::size_t pixels = cube.dim(0) * cube.dim(1), bands = m.cols();
  const auto src = cube.values();
  const auto w = m.values();
  std::vector<double> out(pixels * 3);
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* px = src.data() + p * bands;
    for (std::size_t r = 0; r < 3; ++r) {
      double acc = 0.0;
      for (std::size_t b = 0; b < bands; ++b) acc += w[r * bands + b] * px[b];
      out[p * 3 + r] = clamp ? std::clamp(acc, 0.0, 1.0) : acc;
    }
  }
  return Tensor({cube.dim(0), cube.dim(1), 3}, std::move(out));
}

}  // namespace hym::data
