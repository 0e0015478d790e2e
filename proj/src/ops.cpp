#include "hymamba/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hym {

namespace {

using Impl = std::shared_ptr<detail::TensorImpl>;

// Registers `fn(grad_out)` to run during backward if `out` is being recorded.
template <class F>
void on_backward(const Tensor& out, F fn) {
  Tape* tape = recording(out);
  if (tape == nullptr) return;
  tape->record([o = out.handle(), fn = std::move(fn)]() {
    if (!o->has_grad()) return;
    fn(o->grad);
  });
}

void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// c[m×p] += a[m×k]·b[k×p]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t p) {
#pragma omp parallel for schedule(static) if (m * k * p > (1u << 18))
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    double* ci = c + i * p;
    const double* ai = a + i * k;
    for (std::size_t q = 0; q < k; ++q) {
      const double av = ai[q];
      const double* bq = b + q * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += av * bq[j];
    }
  }
}

// c[m×p] += a[m×k]·b[p×k]ᵀ
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t p) {
#pragma omp parallel for schedule(static) if (m * k * p > (1u << 18))
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < p; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t q = 0; q < k; ++q) s += ai[q] * bj[q];
      c[i * p + j] += s;
    }
  }
}

// c[k×p] += a[m×k]ᵀ·b[m×p]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * p;
    for (std::size_t q = 0; q < k; ++q) {
      const double av = ai[q];
      double* cq = c + q * p;
      for (std::size_t j = 0; j < p; ++j) cq[j] += av * bi[j];
    }
  }
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  Tensor y = make_result(x.shape(), std::move(out), {&x});
  on_backward(y, [xi = x.handle(), deriv](const std::vector<double>& g) {
    if (!xi->requires_grad) return;
    auto& gx = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xi->data[i]);
  });
  return y;
}

template <class Fwd, class DerivA, class DerivB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DerivA da, DerivB db) {
  require_same(a, b, name);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
  Tensor y = make_result(a.shape(), std::move(out), {&a, &b});
  on_backward(y, [ai = a.handle(), bi = b.handle(), da, db](const std::vector<double>& g) {
    if (ai->requires_grad) {
      auto& ga = ai->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(ai->data[i], bi->data[i]);
    }
    if (bi->requires_grad) {
      auto& gb = bi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * db(ai->data[i], bi->data[i]);
    }
  });
  return y;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * p, 0.0);
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, p);
  Tensor y = make_result({m, p}, std::move(out), {&a, &b});
  on_backward(y, [ai = a.handle(), bi = b.handle(), m, k, p](const std::vector<double>& g) {
    if (ai->requires_grad) gemm_nt(g.data(), bi->data.data(), ai->grad_buffer().data(), m, p, k);
    if (bi->requires_grad) gemm_tn(ai->data.data(), g.data(), bi->grad_buffer().data(), m, k, p);
  });
  return y;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), p = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions differ " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()) + "ᵀ");
  }
  std::vector<double> out(m * p, 0.0);
  gemm_nt(a.values().data(), b.values().data(), out.data(), m, k, p);
  Tensor y = make_result({m, p}, std::move(out), {&a, &b});
  on_backward(y, [ai = a.handle(), bi = b.handle(), m, k, p](const std::vector<double>& g) {
    // dA = G·B, dB = Gᵀ·A
    if (ai->requires_grad) gemm_nn(g.data(), bi->data.data(), ai->grad_buffer().data(), m, p, k);
    if (bi->requires_grad) gemm_tn(g.data(), ai->data.data(), bi->grad_buffer().data(), m, p, k);
  });
  return y;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_2d(x, "linear");
  require_2d(w, "linear");
  const std::size_t m = x.rows(), k = x.cols(), p = w.cols();
  if (w.rows() != k || b.ndim() != 1 || b.dim(0) != p) {
    throw DimensionError("linear: x " + shape_str(x.shape()) + ", W " + shape_str(w.shape()) +
                         ", b " + shape_str(b.shape()));
  }
  std::vector<double> out(m * p);
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) std::copy(bv.begin(), bv.end(), out.begin() + i * p);
  gemm_nn(x.values().data(), w.values().data(), out.data(), m, k, p);
  Tensor y = make_result({m, p}, std::move(out), {&x, &w, &b});
  on_backward(y, [xi = x.handle(), wi = w.handle(), bi = b.handle(), m, k,
                  p](const std::vector<double>& g) {
    if (xi->requires_grad) gemm_nt(g.data(), wi->data.data(), xi->grad_buffer().data(), m, p, k);
    if (wi->requires_grad) gemm_tn(xi->data.data(), g.data(), wi->grad_buffer().data(), m, k, p);
    if (bi->requires_grad) {
      auto& gb = bi->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) gb[j] += g[i * p + j];
    }
  });
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

// Ties route the gradient to the first operand.
Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "minimum", [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "maximum", [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  require_2d(x, "add_row");
  const std::size_t m = x.rows(), k = x.cols();
  if (row.numel() != k) {
    throw DimensionError("add_row: " + shape_str(x.shape()) + " + row " + shape_str(row.shape()));
  }
  const auto xv = x.values();
  const auto rv = row.values();
  std::vector<double> out(xv.begin(), xv.end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] += rv[j];
  Tensor y = make_result(x.shape(), std::move(out), {&x, &row});
  on_backward(y, [xi = x.handle(), ri = row.handle(), m, k](const std::vector<double>& g) {
    if (xi->requires_grad) {
      auto& gx = xi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (ri->requires_grad) {
      auto& gr = ri->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) gr[j] += g[i * k + j];
    }
  });
  return y;
}

Tensor repeat_rows(const Tensor& row, std::size_t count) {
  const std::size_t k = row.numel();
  const auto rv = row.values();
  std::vector<double> out(count * k);
  for (std::size_t i = 0; i < count; ++i) std::copy(rv.begin(), rv.end(), out.begin() + i * k);
  Tensor y = make_result({count, k}, std::move(out), {&row});
  on_backward(y, [ri = row.handle(), count, k](const std::vector<double>& g) {
    if (!ri->requires_grad) return;
    auto& gr = ri->grad_buffer();
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t j = 0; j < k; ++j) gr[j] += g[i * k + j];
  });
  return y;
}

Tensor scale(const Tensor& x, double s) {
  return unary(x, [s](double v) { return v * s; }, [s](double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary(x, [s](double v) { return v + s; }, [](double) { return 1.0; });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, [](double v) { return v * sigmoid_scalar(v); },
      [](double v) {
        const double s = sigmoid_scalar(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return sigmoid_scalar(v); },
      [](double v) {
        const double s = sigmoid_scalar(v);
        return s * (1.0 - s);
      });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v) { return sigmoid_scalar(v); });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Tensor log(const Tensor& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::abs(v); },
      [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0 ? v : 0.0; }, [](double v) { return v > 0 ? 1.0 : 0.0; });
}

Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps) {
  require_2d(x, "rms_norm");
  if (!(eps > 0)) throw ContractError("rms_norm: eps must be positive");
  const std::size_t m = x.rows(), d = x.cols();
  if (weight.numel() != d) {
    throw DimensionError("rms_norm: x " + shape_str(x.shape()) + ", weight " +
                         shape_str(weight.shape()));
  }
  const auto xv = x.values();
  const auto wv = weight.values();
  std::vector<double> out(m * d);
  std::vector<double> inv_rms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += xv[i * d + j] * xv[i * d + j];
    const double r = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    inv_rms[i] = r;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] * r * wv[j];
  }
  Tensor y = make_result(x.shape(), std::move(out), {&x, &weight});
  on_backward(y, [xi = x.handle(), wi = weight.handle(), inv_rms = std::move(inv_rms), m,
                  d](const std::vector<double>& g) {
    const auto& xv = xi->data;
    const auto& wv = wi->data;
    if (xi->requires_grad) {
      auto& gx = xi->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        const double r = inv_rms[i];
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += g[i * d + j] * wv[j] * xv[i * d + j];
        const double c = r * r * r * dot / static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j)
          gx[i * d + j] += r * wv[j] * g[i * d + j] - xv[i * d + j] * c;
      }
    }
    if (wi->requires_grad) {
      auto& gw = wi->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) gw[j] += g[i * d + j] * xv[i * d + j] * inv_rms[i];
    }
  });
  return y;
}

Tensor softmax_rows(const Tensor& x) {
  require_2d(x, "softmax_rows");
  const std::size_t m = x.rows(), k = x.cols();
  const auto xv = x.values();
  std::vector<double> out(m * k);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = xv.data() + i * k;
    double* oi = out.data() + i * k;
    const double mx = *std::max_element(xi, xi + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += (oi[j] = std::exp(xi[j] - mx));
    for (std::size_t j = 0; j < k; ++j) oi[j] /= s;
  }
  Tensor y = make_result(x.shape(), std::move(out), {&x});
  on_backward(y, [xi = x.handle(), yi = std::weak_ptr(y.handle()), m,
                  k](const std::vector<double>& g) {
    if (!xi->requires_grad) return;
    const auto& p = yi.lock()->data;
    auto& gx = xi->grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += g[i * k + j] * p[i * k + j];
      for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += p[i * k + j] * (g[i * k + j] - dot);
    }
  });
  return y;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor y = make_result({}, {s}, {&x});
  on_backward(y, [xi = x.handle()](const std::vector<double>& g) {
    if (!xi->requires_grad) return;
    for (double& v : xi->grad_buffer()) v += g[0];
  });
  return y;
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  return scale(sum(x), 1.0 / n);
}

Tensor transpose(const Tensor& x) {
  require_2d(x, "transpose");
  const std::size_t m = x.rows(), k = x.cols();
  const auto xv = x.values();
  std::vector<double> out(m * k);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) out[j * m + i] = xv[i * k + j];
  Tensor y = make_result({k, m}, std::move(out), {&x});
  on_backward(y, [xi = x.handle(), m, k](const std::vector<double>& g) {
    if (!xi->requires_grad) return;
    auto& gx = xi->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += g[j * m + i];
  });
  return y;
}

Tensor reverse_rows(const Tensor& x) {
  require_2d(x, "reverse_rows");
  const std::size_t m = x.rows(), k = x.cols();
  const auto xv = x.values();
  std::vector<double> out(m * k);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(xv.begin() + (m - 1 - i) * k, k, out.begin() + i * k);
  Tensor y = make_result(x.shape(), std::move(out), {&x});
  on_backward(y, [xi = x.handle(), m, k](const std::vector<double>& g) {
    if (!xi->requires_grad) return;
    auto& gx = xi->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) gx[(m - 1 - i) * k + j] += g[i * k + j];
  });
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  const auto xv = x.values();
  Tensor y = make_result(std::move(shape), std::vector<double>(xv.begin(), xv.end()), {&x});
  on_backward(y, [xi = x.handle()](const std::vector<double>& g) {
    if (!xi->requires_grad) return;
    auto& gx = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return y;
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  require_2d(x, "slice_rows");
  const std::size_t k = x.cols();
  if (start + count > x.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") of " + shape_str(x.shape()));
  }
  const auto xv = x.values();
  std::vector<double> out(xv.begin() + start * k, xv.begin() + (start + count) * k);
  Tensor y = make_result({count, k}, std::move(out), {&x});
  on_backward(y, [xi = x.handle(), start, k](const std::vector<double>& g) {
    if (!xi->requires_grad) return;
    auto& gx = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[start * k + i] += g[i];
  });
  return y;
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_2d(x, "slice_cols");
  const std::size_t m = x.rows(), k = x.cols();
  if (start + count > k) {
    throw DimensionError("slice_cols: cols [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") of " + shape_str(x.shape()));
  }
  const auto xv = x.values();
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(xv.begin() + i * k + start, count, out.begin() + i * count);
  Tensor y = make_result({m, count}, std::move(out), {&x});
  on_backward(y, [xi = x.handle(), start, m, k, count](const std::vector<double>& g) {
    if (!xi->requires_grad) return;
    auto& gx = xi->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) gx[i * k + start + j] += g[i * count + j];
  });
  return y;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t k = parts.front().cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_rows");
    if (p.cols() != k) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts.front().shape()) +
                           " vs " + shape_str(p.shape()));
    }
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(m * k);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());

  Tensor y({m, k}, std::move(out));
  Tape* tape = active_tape();
  const bool any_grad =
      std::any_of(parts.begin(), parts.end(), [](const Tensor& p) { return p.requires_grad(); });
  if (tape == nullptr || !any_grad) return y;
  y.impl()->requires_grad = true;
  y.impl()->tape = tape;
  std::vector<Impl> handles;
  for (const auto& p : parts) handles.push_back(p.handle());
  on_backward(y, [handles = std::move(handles)](const std::vector<double>& g) {
    std::size_t offset = 0;
    for (const auto& h : handles) {
      const std::size_t n = h->data.size();
      if (h->requires_grad) {
        auto& gh = h->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) gh[i] += g[offset + i];
      }
      offset += n;
    }
  });
  return y;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t k = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts.front().shape()) +
                           " vs " + shape_str(p.shape()));
    }
    k += p.cols();
  }
  std::vector<double> out(m * k);
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.cols();
    const auto pv = p.values();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(pv.begin() + i * pc, pc, out.begin() + i * k + c0);
    c0 += pc;
  }
  Tensor y({m, k}, std::move(out));
  Tape* tape = active_tape();
  const bool any_grad =
      std::any_of(parts.begin(), parts.end(), [](const Tensor& p) { return p.requires_grad(); });
  if (tape == nullptr || !any_grad) return y;
  y.impl()->requires_grad = true;
  y.impl()->tape = tape;
  std::vector<Impl> handles;
  for (const auto& p : parts) handles.push_back(p.handle());
  on_backward(y, [handles = std::move(handles), m, k](const std::vector<double>& g) {
    std::size_t c0 = 0;
    for (const auto& h : handles) {
      const std::size_t pc = h->shape[1];
      if (h->requires_grad) {
        auto& gh = h->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < pc; ++j) gh[i * pc + j] += g[i * k + c0 + j];
      }
      c0 += pc;
    }
  });
  return y;
}

Tensor patchify(const Tensor& image, std::size_t patch) {
  if (image.ndim() != 3 || image.dim(0) != image.dim(1)) {
    throw DimensionError("patchify: expected a square S×S×ch image, got " +
                         shape_str(image.shape()));
  }
  const std::size_t s = image.dim(0), ch = image.dim(2);
  if (patch == 0 || s % patch != 0) {
    throw ConfigError("patchify: image side " + std::to_string(s) +
                      " not divisible by patch " + std::to_string(patch));
  }
  const std::size_t g = s / patch;
  const std::size_t row_len = patch * patch * ch;
  // index[o] = source offset for output element o
  std::vector<std::size_t> index(g * g * row_len);
  for (std::size_t py = 0; py < g; ++py)
    for (std::size_t px = 0; px < g; ++px)
      for (std::size_t r = 0; r < patch; ++r)
        for (std::size_t c = 0; c < patch; ++c)
          for (std::size_t k = 0; k < ch; ++k) {
            const std::size_t o = (py * g + px) * row_len + (r * patch + c) * ch + k;
            index[o] = ((py * patch + r) * s + (px * patch + c)) * ch + k;
          }
  const auto iv = image.values();
  std::vector<double> out(index.size());
  for (std::size_t o = 0; o < index.size(); ++o) out[o] = iv[index[o]];
  Tensor y = make_result({g * g, row_len}, std::move(out), {&image});
  on_backward(y, [ii = image.handle(), index = std::move(index)](const std::vector<double>& gr) {
    if (!ii->requires_grad) return;
    auto& gi = ii->grad_buffer();
    for (std::size_t o = 0; o < index.size(); ++o) gi[index[o]] += gr[o];
  });
  return y;
}

Tensor conv1d_causal(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_2d(x, "conv1d_causal");
  require_2d(w, "conv1d_causal");
  const std::size_t len = x.rows(), ch = x.cols(), k = w.rows();
  if (w.cols() != ch || b.numel() != ch) {
    throw DimensionError("conv1d_causal: x " + shape_str(x.shape()) + ", w " +
                         shape_str(w.shape()) + ", b " + shape_str(b.shape()));
  }
  const auto xv = x.values();
  const auto wv = w.values();
  const auto bv = b.values();
  std::vector<double> out(len * ch);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t c = 0; c < ch; ++c) {
      double s = bv[c];
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(k - 1);
        if (src >= 0) s += wv[j * ch + c] * xv[src * ch + c];
      }
      out[t * ch + c] = s;
    }
  Tensor y = make_result(x.shape(), std::move(out), {&x, &w, &b});
  on_backward(y, [xi = x.handle(), wi = w.handle(), bi = b.handle(), len, ch,
                  k](const std::vector<double>& g) {
    const auto& xv = xi->data;
    const auto& wv = wi->data;
    std::vector<double>* gx = xi->requires_grad ? &xi->grad_buffer() : nullptr;
    std::vector<double>* gw = wi->requires_grad ? &wi->grad_buffer() : nullptr;
    std::vector<double>* gb = bi->requires_grad ? &bi->grad_buffer() : nullptr;
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t c = 0; c < ch; ++c) {
        const double gy = g[t * ch + c];
        if (gb) (*gb)[c] += gy;
        for (std::size_t j = 0; j < k; ++j) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(k - 1);
          if (src < 0) continue;
          if (gw) (*gw)[j * ch + c] += gy * xv[src * ch + c];
          if (gx) (*gx)[src * ch + c] += gy * wv[j * ch + c];
        }
      }
  });
  return y;
}

}  // namespace hym
