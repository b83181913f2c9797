#include "shotfree/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace shotfree {

namespace {
std::size_t shape_product(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}
}  // namespace

namespace detail {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void check_finite(const char* op, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
  }
}

}  // namespace detail

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + detail::shape_str(shape));
  }
  if (shape_product(shape) != values.size()) {
    throw ShapeError("shape " + detail::shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(shape_product(shape), 0.0);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(shape_product(shape), value);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape s{values.size()};
  return Tensor(std::move(s), std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor(Shape{rows, cols}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw ShapeError("matrix: no rows");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> values;
  values.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw ShapeError("matrix: ragged rows");
    values.insert(values.end(), r.begin(), r.end());
  }
  return Tensor(Shape{rows.size(), cols}, std::move(values));
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::size() const { return node_->values.size(); }

std::size_t Tensor::ndim() const { return node_->shape.size(); }

std::size_t Tensor::rows() const {
  if (ndim() == 1) return 1;
  if (ndim() == 2) return node_->shape[0];
  throw ShapeError("rows() needs a 1-D or 2-D tensor, got " + detail::shape_str(shape()));
}

std::size_t Tensor::cols() const {
  if (ndim() == 1) return node_->shape[0];
  if (ndim() == 2) return node_->shape[1];
  throw ShapeError("cols() needs a 1-D or 2-D tensor, got " + detail::shape_str(shape()));
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) const { node_->requires_grad = value; }

std::span<const double> Tensor::values() const { return node_->values; }

std::span<double> Tensor::values_mut() const { return node_->values; }

double Tensor::item() const {
  if (size() != 1) {
    throw ContractError("item() on non-scalar tensor of shape " + detail::shape_str(shape()));
  }
  return node_->values[0];
}

double Tensor::at(std::size_t i) const { return node_->values.at(i); }

double Tensor::at(std::size_t r, std::size_t c) const {
  if (ndim() != 2) throw ShapeError("at(r,c) needs a 2-D tensor");
  return node_->values.at(r * node_->shape[1] + c);
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  static const std::vector<double> empty;
  if (!has_grad()) return empty;
  return node_->grad;
}

void Tensor::zero_grad() const {
  if (node_) node_->grad.assign(node_->values.size(), 0.0);
}

void Tensor::accumulate_grad(std::span<const double> delta) const {
  if (delta.size() != size()) {
    throw ShapeError("gradient size " + std::to_string(delta.size()) +
                     " does not match tensor size " + std::to_string(size()));
  }
  if (node_->grad.empty()) node_->grad.assign(size(), 0.0);
  for (std::size_t i = 0; i < delta.size(); ++i) node_->grad[i] += delta[i];
}

namespace {
thread_local Tape* g_current_tape = nullptr;
}

Tape::Tape() : prev_(g_current_tape) { g_current_tape = this; }

Tape::~Tape() { g_current_tape = prev_; }

Tape* Tape::current() { return g_current_tape; }

void Tape::record(std::function<void()> backward_step) {
  steps_.push_back(std::move(backward_step));
}

void Tape::track_output(const Tensor& out) { outputs_.push_back(out); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() requires a scalar loss");
  }
  // Intermediate results hold stale gradients after a previous replay; only
  // leaves are meant to accumulate across calls.
  for (const Tensor& out : outputs_) out.zero_grad();
  Tensor seed = loss;
  const double one = 1.0;
  seed.accumulate_grad(std::span<const double>(&one, 1));
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::current();
  if (!tape) throw ContractError("backward() called with no active tape");
  tape->backward(loss);
}

}  // namespace shotfree
