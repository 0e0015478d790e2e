#include "hymamba/scan_kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hymamba/errors.hpp"

namespace hym::kernels {

namespace {

void check_len(std::span<const double> s, std::size_t want, const char* name) {
  if (s.size() != want) {
    throw DimensionError(std::string("scan: ") + name + " holds " + std::to_string(s.size()) +
                         " values, expected " + std::to_string(want));
  }
}

// b̄ / B, i.e. (e^z − 1)/A with z = Δ·A.
inline double input_gain(double z, double a, double delta) {
  if (std::abs(z) < kZohSeriesThreshold) return delta * (1.0 + 0.5 * z);
  return std::expm1(z) / a;
}

// One channel of the serial recurrence over rows [t0, t1), starting from h.
inline void run_channel(const ScanView& v, std::size_t ch, std::size_t t0, std::size_t t1,
                        double* h, double* y) {
  const std::size_t nch = v.channels, n = v.state;
  const double* a = v.a.data() + ch * n;
  const double dskip = v.d[ch];
  for (std::size_t t = t0; t < t1; ++t) {
    const double xt = v.x[t * nch + ch];
    const double dt = v.delta[t * nch + ch];
    const double* bt = v.b.data() + t * n;
    const double* ct = v.c.data() + t * n;
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double z = dt * a[k];
      h[k] = std::exp(z) * h[k] + input_gain(z, a[k], dt) * bt[k] * xt;
      acc += ct[k] * h[k];
    }
    if (y != nullptr) y[t * nch + ch] = acc + dskip * xt;
  }
}

}  // namespace

void ScanView::validate() const {
  check_len(x, len * channels, "x");
  check_len(delta, len * channels, "delta");
  check_len(a, channels * state, "A");
  check_len(b, len * state, "B");
  check_len(c, len * state, "C");
  check_len(d, channels, "D");
  check_len(h0, channels * state, "h0");
}

ZohCoefficients zoh(double a, double b, double delta) {
  const double z = delta * a;
  return {std::exp(z), input_gain(z, a, delta) * b};
}

double phi1(double z) {
  if (std::abs(z) < kZohSeriesThreshold) return 1.0 + 0.5 * z;
  return std::expm1(z) / z;
}

double phi1_prime(double z) {
  if (std::abs(z) < 1e-2) {
    return 0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z * (1.0 / 30.0 + z / 144.0)));
  }
  return (std::exp(z) * (z - 1.0) + 1.0) / (z * z);
}

void scan_reference(const ScanView& v, std::span<double> y, std::span<double> h_final) {
  v.validate();
  check_len(y, v.len * v.channels, "y");
  check_len(h_final, v.channels * v.state, "h_final");
  const std::size_t n = v.state;
  for (std::size_t ch = 0; ch < v.channels; ++ch) {
    double* h = h_final.data() + ch * n;
    std::copy_n(v.h0.data() + ch * n, n, h);
    run_channel(v, ch, 0, v.len, h, y.data());
  }
}

void scan_parallel(const ScanView& v, std::span<double> y, std::span<double> h_final) {
  v.validate();
  check_len(y, v.len * v.channels, "y");
  check_len(h_final, v.channels * v.state, "h_final");
  const std::size_t n = v.state;
  const auto nch = static_cast<std::ptrdiff_t>(v.channels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ch = 0; ch < nch; ++ch) {
    double* h = h_final.data() + ch * n;
    std::copy_n(v.h0.data() + ch * n, n, h);
    run_channel(v, static_cast<std::size_t>(ch), 0, v.len, h, y.data());
  }
}

void scan_blocked(const ScanView& v, std::size_t block, std::span<double> y,
                  std::span<double> h_final) {
  if (block == 0) throw ContractError("scan_blocked: block must be >= 1");
  v.validate();
  check_len(y, v.len * v.channels, "y");
  check_len(h_final, v.channels * v.state, "h_final");
  const std::size_t n = v.state, nch = v.channels, len = v.len;
  if (len == 0) {
    std::copy(v.h0.begin(), v.h0.end(), h_final.begin());
    return;
  }
  const std::size_t nblocks = (len + block - 1) / block;
  const std::size_t per_block = nch * n;
  // Block j maps an incoming state h to P_j ⊙ h + S_j.
  std::vector<double> prod(nblocks * per_block, 1.0);
  std::vector<double> offs(nblocks * per_block, 0.0);

  const auto nb = static_cast<std::ptrdiff_t>(nblocks);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < nb; ++j) {
    const std::size_t t0 = static_cast<std::size_t>(j) * block;
    const std::size_t t1 = std::min(len, t0 + block);
    double* pj = prod.data() + j * per_block;
    double* sj = offs.data() + j * per_block;
    for (std::size_t ch = 0; ch < nch; ++ch) {
      const double* a = v.a.data() + ch * n;
      for (std::size_t t = t0; t < t1; ++t) {
        const double xt = v.x[t * nch + ch];
        const double dt = v.delta[t * nch + ch];
        const double* bt = v.b.data() + t * n;
        for (std::size_t k = 0; k < n; ++k) {
          const double z = dt * a[k];
          const double abar = std::exp(z);
          pj[ch * n + k] *= abar;
          sj[ch * n + k] = abar * sj[ch * n + k] + input_gain(z, a[k], dt) * bt[k] * xt;
        }
      }
    }
  }

  // Exclusive prefix of the affine maps: starting state of every block.
  std::vector<double> start(nblocks * per_block);
  std::copy(v.h0.begin(), v.h0.end(), start.begin());
  for (std::size_t j = 1; j < nblocks; ++j) {
    const double* prev = start.data() + (j - 1) * per_block;
    const double* pj = prod.data() + (j - 1) * per_block;
    const double* sj = offs.data() + (j - 1) * per_block;
    double* cur = start.data() + j * per_block;
    for (std::size_t i = 0; i < per_block; ++i) cur[i] = pj[i] * prev[i] + sj[i];
  }

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < nb; ++j) {
    const std::size_t t0 = static_cast<std::size_t>(j) * block;
    const std::size_t t1 = std::min(len, t0 + block);
    double* h = start.data() + j * per_block;
    for (std::size_t ch = 0; ch < nch; ++ch) run_channel(v, ch, t0, t1, h + ch * n, y.data());
  }
  const double* last = start.data() + (nblocks - 1) * per_block;
  std::copy_n(last, per_block, h_final.begin());
}

void scan_reference_backward(const ScanView& v, std::span<const double> grad_y,
                             std::span<const double> grad_h_final, const ScanGrads& out) {
  v.validate();
  const std::size_t len = v.len, nch = v.channels, n = v.state;
  const bool has_gy = !grad_y.empty();
  const bool has_gh = !grad_h_final.empty();
  if (has_gy) check_len(grad_y, len * nch, "grad_y");
  if (has_gh) check_len(grad_h_final, nch * n, "grad_h_final");

  // Replay the forward pass to recover every intermediate state of one channel.
  std::vector<double> hist((len + 1) * n);
  std::vector<double> gh(n);
  for (std::size_t ch = 0; ch < nch; ++ch) {
    const double* a = v.a.data() + ch * n;
    std::copy_n(v.h0.data() + ch * n, n, hist.data());
    for (std::size_t t = 0; t < len; ++t) {
      const double xt = v.x[t * nch + ch];
      const double dt = v.delta[t * nch + ch];
      const double* bt = v.b.data() + t * n;
      const double* hp = hist.data() + t * n;
      double* hn = hist.data() + (t + 1) * n;
      for (std::size_t k = 0; k < n; ++k) {
        const double z = dt * a[k];
        hn[k] = std::exp(z) * hp[k] + input_gain(z, a[k], dt) * bt[k] * xt;
      }
    }

    for (std::size_t k = 0; k < n; ++k) gh[k] = has_gh ? grad_h_final[ch * n + k] : 0.0;
    const double dskip = v.d[ch];
    for (std::size_t t = len; t-- > 0;) {
      const double gy = has_gy ? grad_y[t * nch + ch] : 0.0;
      const double xt = v.x[t * nch + ch];
      const double dt = v.delta[t * nch + ch];
      const double* bt = v.b.data() + t * n;
      const double* ct = v.c.data() + t * n;
      const double* hp = hist.data() + t * n;
      const double* hc = hist.data() + (t + 1) * n;
      double gx = gy * dskip;
      double gdelta = 0.0;
      if (!out.d.empty()) out.d[ch] += gy * xt;
      for (std::size_t k = 0; k < n; ++k) {
        gh[k] += gy * ct[k];
        if (!out.c.empty()) out.c[t * n + k] += gy * hc[k];
        const double z = dt * a[k];
        const double abar = std::exp(z);
        const double gain = input_gain(z, a[k], dt);
        const double g_abar = gh[k] * hp[k];
        const double g_gain = gh[k] * bt[k] * xt;
        gx += gh[k] * gain * bt[k];
        if (!out.b.empty()) out.b[t * n + k] += gh[k] * gain * xt;
        // ∂ā/∂Δ = ā·A, ∂ā/∂A = ā·Δ, ∂gain/∂Δ = ā, ∂gain/∂A = Δ²·φ₁'(z)
        gdelta += g_abar * abar * a[k] + g_gain * abar;
        if (!out.a.empty()) out.a[ch * n + k] += g_abar * abar * dt + g_gain * dt * dt * phi1_prime(z);
        gh[k] *= abar;
      }
      if (!out.x.empty()) out.x[t * nch + ch] += gx;
      if (!out.delta.empty()) out.delta[t * nch + ch] += gdelta;
    }
    if (!out.h0.empty())
      for (std::size_t k = 0; k < n; ++k) out.h0[ch * n + k] += gh[k];
  }
}

}  // namespace hym::kernels
