#pragma once

// Differentiable state-space scans built on the raw kernels.
//
// Hidden state is diagonal: each of the `ch` channels carries its own n-wide
// state, and A[c,k] = −exp(a_log[c,k]) < 0 so every discrete ā lies in (0,1).

#include <cstddef>
#include <string>

#include "hymamba/nn.hpp"
#include "hymamba/scan_kernels.hpp"
#include "hymamba/tensor.hpp"

namespace hym::ssm {

struct SsmParams {
  Tensor a_log;   // [ch×n]
  Tensor d_skip;  // [ch]
  // Selective mode: Δ = softplus(x·Wδ + bδ) per channel, B and C per row.
  Linear delta_proj;  // ch → ch
  Linear b_proj;      // ch → n
  Linear c_proj;      // ch → n
  // Static mode: Δ, B, C are the same for every row (constant-parameter SSM).
  bool static_mode = false;
  Tensor static_delta;  // [ch], > 0
  Tensor static_b;      // [n]
  Tensor static_c;      // [n]

  // a_log[c,k] = log(k+1), D = 1, projections per Linear::init.
  static SsmParams init(std::size_t channels, std::size_t state_len, Rng& rng);
  static SsmParams make_static(Tensor a_log, Tensor d_skip, Tensor delta, Tensor b, Tensor c);

  std::size_t channels() const { return a_log.rows(); }
  std::size_t state_len() const { return a_log.cols(); }
  Tensor a() const;  // −exp(a_log)
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct ScanState {
  Tensor h;  // [ch×n]
  static ScanState zeros(std::size_t channels, std::size_t state_len) {
    return {Tensor::zeros({channels, state_len})};
  }
};

struct ScanResult {
  Tensor y;  // [L×ch]
  ScanState final_state;
};

enum class Kernel { reference, parallel, blocked };

// Δ, B, C for each row of x under p (selective or static).
struct Coefficients {
  Tensor delta;  // [L×ch]
  Tensor b;      // [L×n]
  Tensor c;      // [L×n]
};
Coefficients coefficients(const Tensor& x, const SsmParams& p);

// Differentiable in every tensor argument, including h0.
ScanResult selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b,
                          const Tensor& c, const Tensor& d, const Tensor& h0,
                          Kernel kernel = Kernel::reference, std::size_t block = 64);

ScanResult scan_forward(const Tensor& x, const SsmParams& p, const ScanState& h0);
// Scan over reversed rows; output rows are flipped back. The final state is
// the state after the original first row.
ScanResult scan_backward(const Tensor& x, const SsmParams& p, const ScanState& h0);
// Scan along the feature axis: token positions act as channels, so p has
// x.rows() channels and h0 is [L×n].
ScanResult scan_spectral(const Tensor& x, const SsmParams& p, const ScanState& h0);
ScanResult scan_forward_blocked(const Tensor& x, const SsmParams& p, const ScanState& h0,
                                std::size_t block);

}  // namespace hym::ssm
