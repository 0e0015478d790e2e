#pragma once

// Independent reference computations used as test oracles. None of these call
// into the library's numeric kernels; they restate each quantity from its
// definition in the most direct (and slowest) way.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "hymamba/nn.hpp"
#include "hymamba/tracking.hpp"

namespace oracle {

// Sequential zero-order-hold recurrence with per-row coefficients.
// x, delta: [L×ch]; a: [ch×n]; b, c: [L×n]; d: [ch]; h0: [ch×n].
struct ScanOut {
  std::vector<double> y;  // [L×ch]
  std::vector<double> h;  // [ch×n]
};
ScanOut naive_scan(std::size_t len, std::size_t ch, std::size_t n, const std::vector<double>& x,
                   const std::vector<double>& delta, const std::vector<double>& a,
                   const std::vector<double>& b, const std::vector<double>& c,
                   const std::vector<double>& d, const std::vector<double>& h0);

// Same recurrence with Δ[ch], B[n], C[n] held constant over rows.
ScanOut naive_static_scan(std::size_t len, std::size_t ch, std::size_t n,
                          const std::vector<double>& x, const std::vector<double>& delta,
                          const std::vector<double>& a_log, const std::vector<double>& b,
                          const std::vector<double>& c, const std::vector<double>& d,
                          const std::vector<double>& h0);

// max|got − want| / max(max|want|, floor): normwise relative error.
double rel_err(const std::vector<double>& got, const std::vector<double>& want,
               double floor = 1e-300);
double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b);

// Central-difference gradient check over every entry (or every `stride`-th
// entry) of each named parameter. The loss closure is evaluated untaped for
// the perturbed points and once under a tape for the autodiff gradient.
struct GroupCheck {
  std::string name;
  std::size_t entries = 0;
  double max_abs_diff = 0;
  double scale = 0;    // max(max|autodiff|, max|fd|, floor)
  double rel = 0;      // max_abs_diff / scale
};
std::vector<GroupCheck> gradient_check(hym::NamedParams params,
                                       const std::function<hym::Tensor()>& loss, double h = 1e-5,
                                       std::size_t stride = 1, double floor = 1e-8);

// Network module a parameter belongs to: the first name component, or
// `layer<i>.<block>` for per-layer weights.
std::string module_of(const std::string& param_name);
// Merges per-tensor checks into per-module groups (max diff over max scale).
std::vector<GroupCheck> by_module(const std::vector<GroupCheck>& checks);

// Elementwise variant for small primitive checks: every entry must satisfy
// |a − f| ≤ tol·max(|a|, |f|, floor).
double elementwise_grad_err(std::vector<hym::Tensor> inputs,
                            const std::function<hym::Tensor()>& loss, double h = 1e-5,
                            double floor = 1e-8);

// Bilinear sample of an [H×W×C] image at continuous (x, y) in pixel units with
// pixel centres at half-integers, computed as a tent-weighted sum over all
// pixels; zero outside the image.
double tent_sample(const std::vector<double>& img, std::size_t h, std::size_t w, std::size_t c,
                   double x, double y, std::size_t channel);

// Reads a head's three maps and returns (cx, cy, w, h, conf, cell).
struct DecodeOut {
  double cx, cy, w, h, conf;
  std::size_t cell;
};
DecodeOut decode(const std::vector<double>& score, const std::vector<double>& size,
                 const std::vector<double>& offset, std::size_t grid, std::size_t patch);

// Penalty-reduced focal loss (α=2, β=4) normalised by the count of cells whose
// target is exactly 1; scores clamped to [1e-7, 1 − 1e-7].
double focal(const std::vector<double>& score, const std::vector<double>& target);

// GIoU of two centre/size boxes via explicit corners.
double giou(double ax, double ay, double aw, double ah, double bx, double by, double bw,
            double bh);

// Success curve by brute force: for each of 21 thresholds count IoU > τ.
std::vector<double> success_curve(const std::vector<double>& ious);

// y = M·v for a 3×C matrix stored row-major.
std::vector<double> matvec3(const std::vector<double>& m, const std::vector<double>& v);

}  // namespace oracle
