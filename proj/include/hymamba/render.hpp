#pragma once

// False-colour rendering of hyperspectral cubes through a fixed 3×C band
// weighting matrix.

#include <cstddef>

#include "hymamba/tensor.hpp"

namespace hym::data {

// Three Gaussian responses over band index centred at C/6, C/2 and 5C/6 with
// width C/6 (band b sits at b + 0.5), each row normalised to sum 1.
Tensor render_matrix(std::size_t bands);

// Throws ConfigError unless every entry is ≥ 0 and each row sums to 1.
void validate_render_matrix(const Tensor& m);

// cube [H×W×C], m [3×C] → [H×W×3]. Not recorded on any tape.
Tensor false_color_render(const Tensor& cube, const Tensor& m, bool clamp = true);

}  // namespace hym::data
