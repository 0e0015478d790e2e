#include "hymamba/optim.hpp"

#include <cmath>
#include <string>

namespace hym {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.eps > 0)) throw ContractError("AdamW: eps must be positive");
  for (const auto& p : params_) {
    state_.first_moment.emplace_back(p.numel(), 0.0);
    state_.second_moment.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    for (double g : params_[i].grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("AdamW: non-finite gradient in parameter #" + std::to_string(i) +
                           " " + shape_str(params_[i].shape()) + "; update aborted");
      }
    }
  }
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  const double lr = cfg_.learning_rate;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto p = params_[i].mutable_values();
    const auto g = params_[i].grad();
    auto& m = state_.first_moment[i];
    auto& v = state_.second_moment[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      p[j] -= lr * cfg_.weight_decay * p[j];
      p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void AdamW::load_state(OptimState state) {
  if (state.first_moment.size() != params_.size() || state.second_moment.size() != params_.size()) {
    throw DimensionError("AdamW: optimizer state holds " +
                         std::to_string(state.first_moment.size()) + " tensors, expected " +
                         std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (state.first_moment[i].size() != params_[i].numel() ||
        state.second_moment[i].size() != params_[i].numel()) {
      throw DimensionError("AdamW: moment size mismatch for parameter #" + std::to_string(i));
    }
  }
  state_ = std::move(state);
}

}  // namespace hym
