#include "hymamba/ssm.hpp"

#include <cmath>
#include <vector>

#include "hymamba/ops.hpp"

namespace hym::ssm {

SsmParams SsmParams::init(std::size_t channels, std::size_t state_len, Rng& rng) {
  SsmParams p;
  std::vector<double> a_log(channels * state_len);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t k = 0; k < state_len; ++k)
      a_log[c * state_len + k] = std::log(static_cast<double>(k + 1));
  p.a_log = parameter({channels, state_len}, std::move(a_log));
  p.d_skip = parameter({channels}, 1.0);
  p.delta_proj = Linear::init(channels, channels, rng);
  p.b_proj = Linear::init(channels, state_len, rng);
  p.c_proj = Linear::init(channels, state_len, rng);
  return p;
}

SsmParams SsmParams::make_static(Tensor a_log, Tensor d_skip, Tensor delta, Tensor b, Tensor c) {
  SsmParams p;
  if (a_log.ndim() != 2 || d_skip.numel() != a_log.rows() || delta.numel() != a_log.rows() ||
      b.numel() != a_log.cols() || c.numel() != a_log.cols()) {
    throw DimensionError("static SsmParams: a_log " + shape_str(a_log.shape()) + ", D " +
                         shape_str(d_skip.shape()) + ", Δ " + shape_str(delta.shape()) + ", B " +
                         shape_str(b.shape()) + ", C " + shape_str(c.shape()));
  }
  for (double v : delta.values())
    if (!(v > 0)) throw ContractError("static SsmParams: Δ must be strictly positive");
  p.a_log = std::move(a_log);
  p.d_skip = std::move(d_skip);
  p.static_mode = true;
  p.static_delta = std::move(delta);
  p.static_b = std::move(b);
  p.static_c = std::move(c);
  return p;
}

Tensor SsmParams::a() const { return scale(exp(a_log), -1.0); }

void SsmParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".a_log", a_log);
  fn(prefix + ".d_skip", d_skip);
  if (static_mode) {
    fn(prefix + ".static_delta", static_delta);
    fn(prefix + ".static_b", static_b);
    fn(prefix + ".static_c", static_c);
  } else {
    delta_proj.visit(prefix + ".delta_proj", fn);
    b_proj.visit(prefix + ".b_proj", fn);
    c_proj.visit(prefix + ".c_proj", fn);
  }
}

Coefficients coefficients(const Tensor& x, const SsmParams& p) {
  if (x.ndim() != 2 || x.cols() != p.channels()) {
    throw DimensionError("scan: input " + shape_str(x.shape()) + " does not match " +
                         std::to_string(p.channels()) + " SSM channels");
  }
  const std::size_t len = x.rows();
  if (p.static_mode) {
    return {repeat_rows(p.static_delta, len), repeat_rows(p.static_b, len),
            repeat_rows(p.static_c, len)};
  }
  return {softplus(p.delta_proj(x)), p.b_proj(x), p.c_proj(x)};
}

ScanResult selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b,
                          const Tensor& c, const Tensor& d, const Tensor& h0, Kernel kernel,
                          std::size_t block) {
  if (x.ndim() != 2 || a.ndim() != 2) {
    throw DimensionError("selective_scan: x " + shape_str(x.shape()) + ", A " +
                         shape_str(a.shape()));
  }
  kernels::ScanView v;
  v.len = x.rows();
  v.channels = x.cols();
  v.state = a.cols();
  if (a.rows() != v.channels || h0.numel() != v.channels * v.state) {
    throw DimensionError("selective_scan: x " + shape_str(x.shape()) + ", A " +
                         shape_str(a.shape()) + ", h0 " + shape_str(h0.shape()));
  }
  v.x = x.values();
  v.delta = delta.values();
  v.a = a.values();
  v.b = b.values();
  v.c = c.values();
  v.d = d.values();
  v.h0 = h0.values();

  std::vector<double> y(v.len * v.channels);
  std::vector<double> hf(v.channels * v.state);
  switch (kernel) {
    case Kernel::reference: kernels::scan_reference(v, y, hf); break;
    case Kernel::parallel: kernels::scan_parallel(v, y, hf); break;
    case Kernel::blocked: kernels::scan_blocked(v, block, y, hf); break;
  }
  Tensor y_t = make_result({v.len, v.channels}, std::move(y), {&x, &delta, &a, &b, &c, &d, &h0});
  Tensor h_t = make_result({v.channels, v.state}, std::move(hf), {&x, &delta, &a, &b, &c, &d, &h0});

  if (Tape* tape = recording(y_t)) {
    tape->record([yo = y_t.handle(), ho = h_t.handle(), xi = x.handle(), di = delta.handle(),
                  ai = a.handle(), bi = b.handle(), ci = c.handle(), si = d.handle(),
                  hi = h0.handle(), len = v.len, nch = v.channels, n = v.state]() {
      if (!yo->has_grad() && !ho->has_grad()) return;
      kernels::ScanView w{len, nch, n, xi->data, di->data, ai->data, bi->data,
                          ci->data, si->data, hi->data};
      auto grad_of = [](const std::shared_ptr<detail::TensorImpl>& t) -> std::span<double> {
        if (!t->requires_grad) return {};
        return t->grad_buffer();
      };
      kernels::ScanGrads out{grad_of(xi), grad_of(di), grad_of(ai), grad_of(bi),
                             grad_of(ci), grad_of(si), grad_of(hi)};
      std::span<const double> gy, gh;
      if (yo->has_grad()) gy = yo->grad;
      if (ho->has_grad()) gh = ho->grad;
      kernels::scan_reference_backward(w, gy, gh, out);
    });
  }
  return {y_t, {h_t}};
}

namespace {

ScanResult run(const Tensor& x, const SsmParams& p, const ScanState& h0, Kernel kernel,
               std::size_t block) {
  if (h0.h.numel() != p.channels() * p.state_len()) {
    throw DimensionError("scan: h0 " + shape_str(h0.h.shape()) + " does not match (" +
                         std::to_string(p.channels()) + ", " + std::to_string(p.state_len()) + ")");
  }
  const Coefficients co = coefficients(x, p);
  const Tensor h = h0.h.ndim() == 2 ? h0.h : reshape(h0.h, {p.channels(), p.state_len()});
  return selective_scan(x, co.delta, p.a(), co.b, co.c, p.d_skip, h, kernel, block);
}

}  // namespace

ScanResult scan_forward(const Tensor& x, const SsmParams& p, const ScanState& h0) {
  return run(x, p, h0, Kernel::reference, 0);
}

ScanResult scan_backward(const Tensor& x, const SsmParams& p, const ScanState& h0) {
  ScanResult r = scan_forward(reverse_rows(x), p, h0);
  return {reverse_rows(r.y), r.final_state};
}

ScanResult scan_spectral(const Tensor& x, const SsmParams& p, const ScanState& h0) {
  if (x.ndim() != 2 || x.rows() != p.channels()) {
    throw DimensionError("scan_spectral: input " + shape_str(x.shape()) + " needs " +
                         std::to_string(p.channels()) + " rows (spectral SSM channels)");
  }
  ScanResult r = scan_forward(transpose(x), p, h0);
  return {transpose(r.y), r.final_state};
}

ScanResult scan_forward_blocked(const Tensor& x, const SsmParams& p, const ScanState& h0,
                                std::size_t block) {
  if (block == 0) throw ContractError("scan_forward_blocked: block must be >= 1");
  return run(x, p, h0, Kernel::blocked, block);
}

}  // namespace hym::ssm
