#pragma once

// Weight checkpoints.
//
// Layout (all integers little-endian u64, all values little-endian f64):
//   "HYMCKPT1"                      8-byte magic
//   u64 n, n bytes                  config echo, `key = value` lines
//   u64 count                       number of records
//   count × record:
//     name '\0' shape '\0' data     shape is comma-separated dims ("" for a
//                                   scalar), data is numel(shape) f64 values
// Optimizer moments are stored as records "adamw.m/<param>", "adamw.v/<param>"
// and the step counter as "adamw.step" (one value).

#include <cstddef>
#include <filesystem>
#include <optional>

#include "hymamba/net.hpp"
#include "hymamba/optim.hpp"

namespace hym::ckpt {

struct Loaded {
  net::NetWeights weights;
  std::optional<OptimState> optimizer;  // moments in trainable_params order
  std::size_t step = 0;                 // training steps completed
};

// `opt` may be null; its parameters must be a subset of w's.
void save(const std::filesystem::path& path, net::NetWeights& w, const AdamW* opt,
          std::size_t step);

// Throws ConfigError naming every mismatched key when `expected` is given and
// differs from the stored config; IoError on a malformed file.
Loaded load(const std::filesystem::path& path, const net::NetConfig* expected = nullptr);

}  // namespace hym::ckpt
