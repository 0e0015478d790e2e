#pragma once

// Parameter containers shared by every layer.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hymamba/ops.hpp"
#include "hymamba/rng.hpp"
#include "hymamba/tensor.hpp"

namespace hym {

// Visitor over (qualified name, parameter tensor).
using ParamVisitor = std::function<void(const std::string&, Tensor&)>;
using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// Trainable leaf: requires_grad set.
Tensor parameter(Shape shape, std::vector<double> values);
Tensor parameter(Shape shape, double fill);

struct Linear {
  Tensor weight;  // [in×out]
  Tensor bias;    // [out], undefined for a bias-free projection

  // weight ~ U(-1/√in, 1/√in), bias = 0
  static Linear init(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
  static Linear zeros(std::size_t in, std::size_t out);

  std::size_t in_features() const { return weight.rows(); }
  std::size_t out_features() const { return weight.cols(); }
  Tensor operator()(const Tensor& x) const {
    return bias.defined() ? linear(x, weight, bias) : matmul(x, weight);
  }
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

}  // namespace hym
