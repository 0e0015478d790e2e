#include "hymamba/nn.hpp"

#include <cmath>

namespace hym {

Tensor parameter(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

Tensor parameter(Shape shape, double fill) {
  Tensor t(std::move(shape), fill);
  t.set_requires_grad(true);
  return t;
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out);
  for (double& v : w) v = rng.uniform(-bound, bound);
  Linear l{parameter({in, out}, std::move(w)), {}};
  if (with_bias) l.bias = parameter({out}, 0.0);
  return l;
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
  return {parameter({in, out}, 0.0), parameter({out}, 0.0)};
}

void Linear::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".weight", weight);
  if (bias.defined()) fn(prefix + ".bias", bias);
}

}  // namespace hym
