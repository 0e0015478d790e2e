#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>

namespace oracle {

using hym::Tensor;

ScanOut naive_scan(std::size_t len, std::size_t ch, std::size_t n, const std::vector<double>& x,
                   const std::vector<double>& delta, const std::vector<double>& a,
                   const std::vector<double>& b, const std::vector<double>& c,
                   const std::vector<double>& d, const std::vector<double>& h0) {
  ScanOut out{std::vector<double>(len * ch, 0.0), h0};
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t j = 0; j < ch; ++j) {
      double acc = d[j] * x[t * ch + j];
      for (std::size_t k = 0; k < n; ++k) {
        const double A = a[j * n + k];
        const double z = delta[t * ch + j] * A;
        const double abar = std::exp(z);
        // (e^z − 1)/A, with the first-order limit Δ for vanishing z.
        const double factor = std::abs(z) < 1e-8 ? delta[t * ch + j] : std::expm1(z) / A;
        double& hk = out.h[j * n + k];
        hk = abar * hk + factor * b[t * n + k] * x[t * ch + j];
        acc += c[t * n + k] * hk;
      }
      out.y[t * ch + j] = acc;
    }
  }
  return out;
}

ScanOut naive_static_scan(std::size_t len, std::size_t ch, std::size_t n,
                          const std::vector<double>& x, const std::vector<double>& delta,
                          const std::vector<double>& a_log, const std::vector<double>& b,
                          const std::vector<double>& c, const std::vector<double>& d,
                          const std::vector<double>& h0) {
  std::vector<double> dl(len * ch), bl(len * n), cl(len * n), a(ch * n);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(a_log[i]);
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t j = 0; j < ch; ++j) dl[t * ch + j] = delta[j];
    for (std::size_t k = 0; k < n; ++k) {
      bl[t * n + k] = b[k];
      cl[t * n + k] = c[k];
    }
  }
  return naive_scan(len, ch, n, x, dl, a, bl, cl, d, h0);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double rel_err(const std::vector<double>& got, const std::vector<double>& want, double floor) {
  double scale = floor;
  for (double v : want) scale = std::max(scale, std::abs(v));
  return max_abs_diff(got, want) / scale;
}

namespace {

double eval_untaped(const std::function<Tensor()>& loss) {
  hym::NoTapeScope none;
  return loss().item();
}

std::vector<std::vector<double>> autodiff(std::vector<Tensor>& inputs,
                                          const std::function<Tensor()>& loss) {
  for (auto& t : inputs) t.zero_grad();
  hym::Tape tape;
  {
    hym::TapeScope scope(tape);
    hym::backward(loss());
  }
  std::vector<std::vector<double>> out;
  for (auto& t : inputs) {
    const auto g = t.grad();
    out.emplace_back(g.empty() ? std::vector<double>(t.numel(), 0.0)
                               : std::vector<double>(g.begin(), g.end()));
  }
  return out;
}

double central_difference(Tensor& t, std::size_t i, double h, const std::function<Tensor()>& loss) {
  double& v = t.mutable_values()[i];
  const double orig = v;
  v = orig + h;
  const double up = eval_untaped(loss);
  v = orig - h;
  const double down = eval_untaped(loss);
  v = orig;
  return (up - down) / (2 * h);
}

}  // namespace

std::vector<GroupCheck> gradient_check(hym::NamedParams params,
                                       const std::function<Tensor()>& loss, double h,
                                       std::size_t stride, double floor) {
  std::vector<Tensor> tensors;
  for (auto& [name, t] : params) tensors.push_back(t);
  const auto ad = autodiff(tensors, loss);
  std::vector<GroupCheck> out;
  for (std::size_t p = 0; p < params.size(); ++p) {
    GroupCheck g;
    g.name = params[p].first;
    g.scale = floor;
    Tensor& t = tensors[p];
    for (std::size_t i = 0; i < t.numel(); i += stride) {
      const double fd = central_difference(t, i, h, loss);
      g.max_abs_diff = std::max(g.max_abs_diff, std::abs(ad[p][i] - fd));
      g.scale = std::max({g.scale, std::abs(ad[p][i]), std::abs(fd)});
      ++g.entries;
    }
    g.rel = g.max_abs_diff / g.scale;
    out.push_back(g);
  }
  return out;
}

std::string module_of(const std::string& param_name) {
  const auto first = param_name.find('.');
  if (first == std::string::npos) return param_name;
  if (param_name.rfind("layer", 0) == 0) {
    const auto second = param_name.find('.', first + 1);
    return param_name.substr(0, second);
  }
  return param_name.substr(0, first);
}

std::vector<GroupCheck> by_module(const std::vector<GroupCheck>& checks) {
  std::vector<GroupCheck> out;
  for (const GroupCheck& c : checks) {
    const std::string m = module_of(c.name);
    auto it = std::find_if(out.begin(), out.end(), [&](const GroupCheck& g) { return g.name == m; });
    if (it == out.end()) {
      out.push_back({m, 0, 0, 0, 0});
      it = std::prev(out.end());
    }
    it->entries += c.entries;
    it->max_abs_diff = std::max(it->max_abs_diff, c.max_abs_diff);
    it->scale = std::max(it->scale, c.scale);
    it->rel = it->max_abs_diff / it->scale;
  }
  return out;
}

double elementwise_grad_err(std::vector<Tensor> inputs, const std::function<Tensor()>& loss,
                            double h, double floor) {
  const auto ad = autodiff(inputs, loss);
  double worst = 0;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    for (std::size_t i = 0; i < inputs[p].numel(); ++i) {
      const double fd = central_difference(inputs[p], i, h, loss);
      const double denom = std::max({std::abs(ad[p][i]), std::abs(fd), floor});
      worst = std::max(worst, std::abs(ad[p][i] - fd) / denom);
    }
  }
  return worst;
}

double tent_sample(const std::vector<double>& img, std::size_t h, std::size_t w, std::size_t c,
                   double x, double y, std::size_t channel) {
  double acc = 0;
  for (std::size_t r = 0; r < h; ++r) {
    const double wy = std::max(0.0, 1.0 - std::abs(y - (static_cast<double>(r) + 0.5)));
    if (wy == 0) continue;
    for (std::size_t col = 0; col < w; ++col) {
      const double wx = std::max(0.0, 1.0 - std::abs(x - (static_cast<double>(col) + 0.5)));
      acc += wx * wy * img[(r * w + col) * c + channel];
    }
  }
  return acc;
}

DecodeOut decode(const std::vector<double>& score, const std::vector<double>& size,
                 const std::vector<double>& offset, std::size_t grid, std::size_t patch) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < score.size(); ++i)
    if (score[i] > score[best]) best = i;
  const double row = static_cast<double>(best / grid), col = static_cast<double>(best % grid);
  const double p = static_cast<double>(patch), s = static_cast<double>(grid * patch);
  return {(col + 0.5 + offset[2 * best]) * p,
          (row + 0.5 + offset[2 * best + 1]) * p,
          size[2 * best] * s,
          size[2 * best + 1] * s,
          score[best],
          best};
}

double focal(const std::vector<double>& score, const std::vector<double>& target) {
  double total = 0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < score.size(); ++i) {
    const double p = std::clamp(score[i], 1e-7, 1 - 1e-7);
    if (target[i] == 1.0) {
      ++positives;
      total += -std::pow(1 - p, 2) * std::log(p);
    } else {
      total += -std::pow(1 - target[i], 4) * std::pow(p, 2) * std::log(1 - p);
    }
  }
  return total / static_cast<double>(positives);
}

double giou(double ax, double ay, double aw, double ah, double bx, double by, double bw,
            double bh) {
  const double a0x = ax - aw / 2, a1x = ax + aw / 2, a0y = ay - ah / 2, a1y = ay + ah / 2;
  const double b0x = bx - bw / 2, b1x = bx + bw / 2, b0y = by - bh / 2, b1y = by + bh / 2;
  const double iw = std::max(0.0, std::min(a1x, b1x) - std::max(a0x, b0x));
  const double ih = std::max(0.0, std::min(a1y, b1y) - std::max(a0y, b0y));
  const double inter = iw * ih;
  const double uni = aw * ah + bw * bh - inter;
  const double cw = std::max(a1x, b1x) - std::min(a0x, b0x);
  const double chh = std::max(a1y, b1y) - std::min(a0y, b0y);
  const double area_c = cw * chh;
  return inter / uni - (area_c - uni) / area_c;
}

std::vector<double> success_curve(const std::vector<double>& ious) {
  std::vector<double> out;
  for (int i = 0; i <= 20; ++i) {
    const double tau = i / 20.0;
    std::size_t hits = 0;
    for (double v : ious) hits += v > tau ? 1 : 0;
    out.push_back(static_cast<double>(hits) / static_cast<double>(ious.size()));
  }
  return out;
}

std::vector<double> matvec3(const std::vector<double>& m, const std::vector<double>& v) {
  std::vector<double> out(3, 0.0);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t k = 0; k < v.size(); ++k) out[r] += m[r * v.size() + k] * v[k];
  return out;
}

}  // namespace oracle
