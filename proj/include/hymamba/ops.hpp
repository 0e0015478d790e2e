#pragma once

// Differentiable primitives. Matrices are 2-D row-major tensors; vectors are
// 1-D. Every op checks shapes and throws DimensionError naming the operands.

#include <cstddef>
#include <vector>

#include "hymamba/tensor.hpp"

namespace hym {

Tensor matmul(const Tensor& a, const Tensor& b);     // [m×k]·[k×p]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m×k]·[p×k]ᵀ
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // xW + b

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor add_row(const Tensor& x, const Tensor& row);  // row broadcast over x's rows
Tensor repeat_rows(const Tensor& row, std::size_t count);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);

Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor relu(const Tensor& x);

Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps = 1e-6);
Tensor softmax_rows(const Tensor& x);

Tensor sum(const Tensor& x);   // scalar
Tensor mean(const Tensor& x);  // scalar

Tensor transpose(const Tensor& x);
Tensor reverse_rows(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

// [S×S×ch] image → [(S/p)²×(p·p·ch)]; patches in raster order, each flattened
// as (row-in-patch, col-in-patch, channel).
Tensor patchify(const Tensor& image, std::size_t patch);

// Depthwise causal convolution over rows: y[t,c] = b[c] + Σ_j w[j,c]·x[t-(k-1)+j, c],
// zero padding before the first row. w is [k×ch], b is [ch].
Tensor conv1d_causal(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace hym
