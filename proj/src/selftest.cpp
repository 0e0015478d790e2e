#include "hymamba/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "hymamba/data.hpp"
#include "hymamba/ops.hpp"
#include "hymamba/ssm.hpp"
#include "hymamba/tracking.hpp"

namespace hym::selftest {

namespace {

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

SuiteResult scan_suite(Rng& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t len = static_cast<std::size_t>(rng.integer(1, 48));
    const std::size_t ch = static_cast<std::size_t>(rng.integer(1, 6));
    const std::size_t n = static_cast<std::size_t>(rng.integer(1, 6));
    std::vector<double> x(len * ch), delta(len * ch), a(ch * n), b(len * n), c(len * n), d(ch),
        h0(ch * n);
    for (double& v : x) v = rng.normal();
    for (double& v : delta) v = rng.uniform(0.01, 1.0);
    for (double& v : a) v = -rng.uniform(0.1, 3.0);
    for (double& v : b) v = rng.normal();
    for (double& v : c) v = rng.normal();
    for (double& v : d) v = rng.normal();
    for (double& v : h0) v = rng.normal();
    kernels::ScanView view{len, ch, n, x, delta, a, b, c, d, h0};

    // Direct recurrence with the textbook discretisation.
    std::vector<double> want(len * ch);
    for (std::size_t k = 0; k < ch; ++k) {
      std::vector<double> h(h0.begin() + k * n, h0.begin() + (k + 1) * n);
      for (std::size_t t = 0; t < len; ++t) {
        double y = d[k] * x[t * ch + k];
        for (std::size_t j = 0; j < n; ++j) {
          const double aa = a[k * n + j], dt = delta[t * ch + k];
          h[j] = std::exp(dt * aa) * h[j] + (std::exp(dt * aa) - 1.0) / aa * b[t * n + j] * x[t * ch + k];
          y += c[t * n + j] * h[j];
        }
        want[t * ch + k] = y;
      }
    }
    std::vector<double> y(len * ch), hf(ch * n);
    const auto check = [&] {
      for (std::size_t i = 0; i < y.size(); ++i)
        worst = std::max(worst, std::abs(y[i] - want[i]) / std::max(1.0, std::abs(want[i])));
    };
    kernels::scan_reference(view, y, hf);
    check();
    kernels::scan_parallel(view, y, hf);
    check();
    for (std::size_t block : {std::size_t{1}, std::size_t{7}, len}) {
      kernels::scan_blocked(view, block, y, hf);
      check();
    }
  }
  return {"scan oracle equivalence", worst <= 1e-10, "max rel err " + num(worst)};
}

SuiteResult factorization_suite(std::uint64_t seed) {
  net::NetConfig cfg = net::NetConfig::tiny();
  Rng rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const auto w = net::NetWeights::init(cfg, seed + static_cast<std::uint64_t>(trial));
    std::vector<double> jv(cfg.total_tokens() * cfg.embed_dim), hv(jv.size());
    for (double& v : jv) v = rng.normal();
    for (double& v : hv) v = rng.normal();
    const Tensor joint({cfg.total_tokens(), cfg.embed_dim}, jv);
    const Tensor hs({cfg.total_tokens(), cfg.embed_dim}, hv);
    net::HsmTrace tr;
    net::hsm_forward(joint, hs, net::SpectralHiddenState::zeros(cfg), w.layers[0].state, cfg, 0, &tr);
    const auto fused = tr.fusion.values();
    for (std::size_t i = 0; i < fused.size(); ++i) {
      const double want = (tr.act_joint[i] + tr.act_hs[i]) * (tr.f_fwd[i] + tr.f_bwd[i] + tr.f_spec[i]);
      worst = std::max(worst, std::abs(fused[i] - want));
    }
  }
  return {"fusion factorisation", worst <= 1e-12, "max abs err " + num(worst)};
}

SuiteResult gradient_suite(std::uint64_t seed) {
  const net::NetConfig cfg = net::NetConfig::tiny();
  auto w = net::NetWeights::init(cfg, seed);
  data::SceneConfig sc;
  sc.bands = cfg.bands;
  sc.height = sc.width = 32;
  sc.frames = 3;
  sc.start_cx = sc.start_cy = 16;
  sc.target_w = sc.target_h = 6;
  sc.seed = seed;
  const auto seq = data::generate_sequence(sc);
  Rng rng(seed);
  const auto sample = track::sample_from_sequence(seq.frames, seq.gt, cfg, track::TrackerConfig{}, rng, false);

  const auto loss_value = [&] {
    NoTapeScope none;
    return track::sample_loss(sample, w).total.item();
  };
  Tape tape;
  {
    TapeScope scope(tape);
    backward(track::sample_loss(sample, w).total);
  }
  double worst = 0.0;
  std::string worst_name;
  const double h = 1e-5;
  for (auto& [name, p] : w.named()) {
    const std::vector<double> ad(p.grad().begin(), p.grad().end());
    double diff = 0.0, scale = 1e-8;
    // Three entries per group keep the gate fast; the test suite covers all.
    for (std::size_t k = 0; k < std::min<std::size_t>(3, p.numel()); ++k) {
      const std::size_t i = (k * 7919) % p.numel();
      double& v = p.mutable_values()[i];
      const double orig = v;
      v = orig + h;
      const double up = loss_value();
      v = orig - h;
      const double down = loss_value();
      v = orig;
      const double fd = (up - down) / (2 * h);
      const double a = ad.empty() ? 0.0 : ad[i];
      diff = std::max(diff, std::abs(a - fd));
      scale = std::max({scale, std::abs(a), std::abs(fd)});
    }
    if (diff / scale > worst) {
      worst = diff / scale;
      worst_name = name;
    }
  }
  return {"finite-difference gradients", worst <= 1e-4,
          "max group rel err " + num(worst) + (worst_name.empty() ? "" : " (" + worst_name + ")")};
}

SuiteResult gating_suite() {
  net::NetConfig cfg = net::NetConfig::tiny();
  auto a = net::SpectralHiddenState::zeros(cfg), b = net::SpectralHiddenState::zeros(cfg);
  b.fwd.mutable_values()[0] = 1.0;
  bool ok = &net::propagate_hidden(b, a, 0.9, 0.5) == &b;
  ok = ok && &net::propagate_hidden(b, a, 0.3, 0.5) == &a;
  ok = ok && &net::propagate_hidden(b, a, 0.0, 0.0) == &a;
  track::TrackerConfig t;
  t.update_interval = 5;
  ok = ok && track::should_update_template(10, 0.9, t);
  ok = ok && !track::should_update_template(11, 0.9, t);
  ok = ok && !track::should_update_template(10, 0.3, t);
  return {"gate truth tables", ok, ok ? "6/6 cases" : "mismatch"};
}

SuiteResult metrics_suite() {
  std::vector<track::BBox> gt;
  for (int i = 0; i < 10; ++i) gt.push_back({10.0 + i, 20.0, 8.0, 6.0});
  const auto rec = data::oracle_track(gt);
  const auto s = data::success_auc(std::span<const track::TrackRecord>(rec), gt);
  const double dp = data::dp20(std::span<const track::TrackRecord>(rec), gt);
  const bool ok = s.auc == 20.0 / 21.0 && dp == 1.0;
  return {"oracle metrics", ok, "auc " + num(s.auc) + ", dp20 " + num(dp)};
}

}  // namespace

std::vector<SuiteResult> run_all(unsigned long long seed) {
  std::vector<SuiteResult> out;
  const auto guarded = [&](const std::string& name, const std::function<SuiteResult()>& fn) {
    try {
      out.push_back(fn());
    } catch (const std::exception& e) {
      out.push_back({name, false, std::string("threw: ") + e.what()});
    }
  };
  Rng rng(seed);
  guarded("scan oracle equivalence", [&] { return scan_suite(rng); });
  guarded("fusion factorisation", [&] { return factorization_suite(seed); });
  guarded("finite-difference gradients", [&] { return gradient_suite(seed); });
  guarded("gate truth tables", [&] { return gating_suite(); });
  guarded("oracle metrics", [&] { return metrics_suite(); });
  return out;
}

}  // namespace hym::selftest
