// Serial vs channel-parallel vs blocked scan timings, CSV on stdout.
//   scan_bench [--lengths 256,1024,4096] [--channels 64] [--state 16] [--block 64]

#include <cstdio>

#include <CLI11.hpp>

#include "hymamba/bench.hpp"

int main(int argc, char** argv) {
  CLI::App app{"scan kernel benchmark"};
  hym::bench::BenchOptions opts;
  app.add_option("--lengths", opts.lengths)->delimiter(',');
  app.add_option("--channels", opts.channels);
  app.add_option("--state", opts.state);
  app.add_option("--block", opts.block);
  app.add_option("--repeats", opts.repeats);
  CLI11_PARSE(app, argc, argv);

  const auto rows = hym::bench::run_scan_bench(opts);
  std::fputs(hym::bench::bench_csv(rows).c_str(), stdout);
  for (const auto& r : rows) {
    if (r.max_abs_diff > 1e-9) {
      std::fprintf(stderr, "%s at L=%zu deviates from the serial scan by %.3e\n", r.variant.c_str(),
                   r.len, r.max_abs_diff);
      return 1;
    }
  }
  return 0;
}
