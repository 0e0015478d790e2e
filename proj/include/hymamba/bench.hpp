#pragma once

// Timing of the serial, channel-parallel and blocked scan kernels.

#include <cstddef>
#include <string>
#include <vector>

namespace hym::bench {

struct BenchOptions {
  std::vector<std::size_t> lengths{256, 1024, 4096};
  std::size_t channels = 64;
  std::size_t state = 16;
  std::size_t block = 64;
  std::size_t repeats = 3;
  unsigned long long seed = 0;
};

struct BenchRow {
  std::string variant;  // reference | parallel | blocked
  std::size_t len, channels, state, block;
  double seconds;       // best of `repeats`
  double max_abs_diff;  // against the reference output
};

std::vector<BenchRow> run_scan_bench(const BenchOptions& opts);
// Header `variant,L,ch,n,block,seconds`.
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace hym::bench
