#pragma once

// Dense f64 tensors with a define-by-run reverse-mode tape.
//
// A Tensor is a shared handle to row-major storage. Operations executed while
// a Tape is active on the current thread (see TapeScope) and that touch at
// least one requires_grad input are recorded; Tape::backward then walks the
// records in reverse and accumulates gradients into every reachable input.
// A tape can be consumed once. Parameter gradients persist until zero_grad().

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hymamba/errors.hpp"

namespace hym {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // lazily sized to data.size()
  bool requires_grad = false;
  Tape* tape = nullptr;      // tape that recorded the op producing this tensor

  std::vector<double>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
  bool has_grad() const { return grad.size() == data.size() && !data.empty(); }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;
  // For 2-D tensors.
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  std::span<const double> values() const;
  // Mutable access is for leaves (parameters, inputs) only; never mutate a
  // tensor a live tape still references.
  std::span<double> mutable_values();
  double item() const;
  double operator[](std::size_t i) const { return values()[i]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  // Empty when no gradient has reached this tensor.
  std::span<const double> grad() const;
  void zero_grad();

  // Copy of the values with no gradient tracking.
  Tensor detach() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& handle() const { return impl_; }

 private:
  friend Tensor make_result(Shape, std::vector<double>, std::initializer_list<const Tensor*>);
  std::shared_ptr<detail::TensorImpl> impl_;
};

class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(BackwardFn fn) { nodes_.push_back(std::move(fn)); }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded node in reverse order.
  void backward(const Tensor& loss);

 private:
  std::vector<BackwardFn> nodes_;
  bool consumed_ = false;
};

// Makes `tape` the recording tape of the calling thread for the scope lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording on the calling thread for the scope lifetime.
class NoTapeScope {
 public:
  NoTapeScope();
  ~NoTapeScope();
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Runs backward on the tape that produced `loss`.
void backward(const Tensor& loss);

// Builds an op output; marks it as requiring grad (and binds it to the active
// tape) when any input requires grad and a tape is active.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::initializer_list<const Tensor*> inputs);

// Tape attached to `out`, or nullptr when the op need not be recorded.
inline Tape* recording(const Tensor& out) { return out.impl()->tape; }

}  // namespace hym
