#include "hymamba/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include "hymamba/rng.hpp"
#include "hymamba/scan_kernels.hpp"

namespace hym::bench {

std::vector<BenchRow> run_scan_bench(const BenchOptions& opts) {
  std::vector<BenchRow> rows;
  Rng rng(opts.seed);
  for (std::size_t len : opts.lengths) {
    const std::size_t ch = opts.channels, n = opts.state;
    std::vector<double> x(len * ch), delta(len * ch), a(ch * n), b(len * n), c(len * n), d(ch),
        h0(ch * n, 0.0);
    for (double& v : x) v = rng.normal();
    for (double& v : delta) v = rng.uniform(0.001, 0.1);
    for (double& v : a) v = -rng.uniform(0.5, 4.0);
    for (double& v : b) v = rng.normal();
    for (double& v : c) v = rng.normal();
    for (double& v : d) v = rng.normal();
    kernels::ScanView view{len, ch, n, x, delta, a, b, c, d, h0};

    std::vector<double> ref_y(len * ch), ref_h(ch * n);
    kernels::scan_reference(view, ref_y, ref_h);

    for (const char* variant : {"reference", "parallel", "blocked"}) {
      std::vector<double> y(len * ch), h(ch * n);
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < std::max<std::size_t>(1, opts.repeats); ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        if (variant[0] == 'r') {
          kernels::scan_reference(view, y, h);
        } else if (variant[0] == 'p') {
          kernels::scan_parallel(view, y, h);
        } else {
          kernels::scan_blocked(view, opts.block, y, h);
        }
        best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      }
      double diff = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) diff = std::max(diff, std::abs(y[i] - ref_y[i]));
      const std::size_t block = variant[0] == 'b' ? opts.block : 0;
      rows.push_back({variant, len, ch, n, block, best, diff});
    }
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "variant,L,ch,n,block,seconds\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%zu,%zu,%.6e\n", r.variant.c_str(), r.len, r.channels,
                  r.state, r.block, r.seconds);
    out += buf;
  }
  return out;
}

}  // namespace hym::bench
