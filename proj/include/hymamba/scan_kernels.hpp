#pragma once

// Raw selective-scan kernels over plain f64 buffers.
//
// Per channel c and state slot k, with z = Δ[t,c]·A[c,k]:
//   ā = exp(z),  b̄ = (exp(z) − 1)/A[c,k] · B[t,k]       (zero-order hold)
//   h[t] = ā·h[t−1] + b̄·x[t,c]
//   y[t,c] = Σ_k C[t,k]·h[t,k] + D[c]·x[t,c]
//
// Three interchangeable kernels share this contract:
//   scan_reference  serial, the ground truth the others are tested against
//   scan_parallel   OpenMP over channels (recurrence stays sequential in t)
//   scan_blocked    splits t into blocks, composes each block's affine map
//                   h ↦ P·h + S, prefixes those maps, then replays blocks in
//                   parallel from their true starting state
// Each output element is computed by exactly one thread with a fixed
// operation order, so results do not depend on the thread count.

#include <cstddef>
#include <span>

namespace hym::kernels {

struct ScanView {
  std::size_t len = 0;       // sequence length L
  std::size_t channels = 0;  // ch
  std::size_t state = 0;     // n
  std::span<const double> x;      // [L×ch]
  std::span<const double> delta;  // [L×ch], strictly positive
  std::span<const double> a;      // [ch×n], strictly negative
  std::span<const double> b;      // [L×n]
  std::span<const double> c;      // [L×n]
  std::span<const double> d;      // [ch]
  std::span<const double> h0;     // [ch×n]

  // Throws DimensionError when a span length disagrees with len/channels/state.
  void validate() const;
};

struct ZohCoefficients {
  double a_bar;
  double b_bar;
};

// |delta·A| below this uses the series expansion of (e^z − 1)/A.
inline constexpr double kZohSeriesThreshold = 1e-8;

ZohCoefficients zoh(double a, double b, double delta);

// (e^z − 1)/z and its derivative, accurate near z = 0.
double phi1(double z);
double phi1_prime(double z);

// y: [L×ch], h_final: [ch×n]
void scan_reference(const ScanView& v, std::span<double> y, std::span<double> h_final);
void scan_parallel(const ScanView& v, std::span<double> y, std::span<double> h_final);
void scan_blocked(const ScanView& v, std::size_t block, std::span<double> y,
                  std::span<double> h_final);

// Reverse-mode adjoint of scan_reference. Gradient outputs are accumulated
// (+=) and may be empty spans to skip that input.
struct ScanGrads {
  std::span<double> x, delta, a, b, c, d, h0;
};
void scan_reference_backward(const ScanView& v, std::span<const double> grad_y,
                             std::span<const double> grad_h_final, const ScanGrads& out);

}  // namespace hym::kernels
