#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "shotfree/errors.hpp"

namespace shotfree {

using Shape = std::vector<std::size_t>;

/// Dense f64 tensor participating in reverse-mode differentiation.
///
/// A Tensor is a cheap value-semantic handle to shared storage; copies alias
/// the same values and gradient buffer. Gradients are deposited by replaying
/// the active Tape backwards from a scalar loss. Tensors created while no
/// tape is active never require grad, so frozen parameters can be evaluated
/// concurrently from multiple threads.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// 1-D tensor of shape {n}.
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  /// 2-D tensor from row-major data.
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values, bool requires_grad = false);
  /// 2-D tensor from nested row lists; rows must have equal length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t ndim() const;
  /// Rows/cols of a 2-D tensor; a 1-D tensor of shape {n} is treated as 1×n.
  std::size_t rows() const;
  std::size_t cols() const;

  bool requires_grad() const;
  void set_requires_grad(bool value) const;

  std::span<const double> values() const;
  /// Mutable view for in-place parameter updates. Never call on a tensor
  /// that participates in a live tape.
  std::span<double> values_mut() const;

  /// Value of a size-1 tensor.
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;

  bool has_grad() const;
  /// Gradient buffer; zeros if backward has not touched this tensor.
  std::span<const double> grad() const;
  void zero_grad() const;
  /// Adds `delta` into the gradient buffer, allocating it on first use.
  void accumulate_grad(std::span<const double> delta) const;

  /// Identity of the underlying storage, for aliasing checks.
  const void* id() const { return node_.get(); }

 private:
  struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first accumulate
    bool requires_grad = false;
  };
  std::shared_ptr<Node> node_;
};

/// Ordered record of primitive operations. Constructing a Tape makes it the
/// current tape for this thread (restored on destruction); ops append a
/// backward closure when any input requires grad. Replaying the record in
/// reverse deposits dLoss/dLeaf into every reachable requires_grad tensor.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  void record(std::function<void()> backward_step);
  std::size_t size() const { return steps_.size(); }

  /// Ops call this on every differentiable result so backward() can reset
  /// intermediate gradients between replays.
  void track_output(const Tensor& out);

  /// Seeds d(loss)/d(loss) = 1 and replays the tape backwards. `loss` must
  /// be scalar. Repeated calls without zero_grad accumulate into leaf
  /// tensors; gradients of op results are reset before each replay.
  void backward(const Tensor& loss);

  /// Drops all recorded steps; call between optimization steps.
  void clear() {
    steps_.clear();
    outputs_.clear();
  }

 private:
  std::vector<std::function<void()>> steps_;
  std::vector<Tensor> outputs_;
  Tape* prev_ = nullptr;
};

/// Backward through the current tape. ContractError if no tape is active.
void backward(const Tensor& loss);

namespace detail {
/// Throws NumericError naming `op` if any value is NaN/Inf.
void check_finite(const char* op, std::span<const double> values);
std::string shape_str(const Shape& shape);
}  // namespace detail

}  // namespace shotfree
