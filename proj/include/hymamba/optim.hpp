#pragma once

#include <cstdint>
#include <vector>

#include "hymamba/tensor.hpp"

namespace hym {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment accumulators per parameter, in the order the parameters were given.
struct OptimState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

// Decoupled weight decay: p ← p − lr·wd·p − lr·m̂/(√v̂ + eps).
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig cfg);

  // Throws NumericError (no parameter touched) if any gradient is non-finite.
  // Parameters that received no gradient are treated as having zero gradient.
  void step();
  void zero_grad();

  const AdamWConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
  const OptimState& state() const { return state_; }
  // Restores moments and step counter; shapes must match the parameters.
  void load_state(OptimState state);
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamWConfig cfg_;
  OptimState state_;
};

}  // namespace hym
