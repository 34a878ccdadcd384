#pragma once

// Minimal reverse-mode automatic differentiation over dense double arrays.
//
// A Tape records primitive operations applied to tensors that were attached to
// it with Tape::watch(). Operations on detached tensors record nothing, so the
// same code path serves taped (differentiable) and untaped (fast) evaluation
// and produces bit-identical forward values either way.
//
// Tapes are single-use: backward() consumes the tape. A tape and the tensors
// attached to it must stay on one thread.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace gestinv::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct TapeState;
}

// Backward rule: receives d(output)/d(result) and accumulates into the
// gradient buffers of the op inputs (in the order they were passed).
struct BackwardFn {
  std::function<void(std::span<const double> grad_out,
                     std::span<std::vector<double>*> input_grads)>
      fn;
};

class Tensor;

// Records `result` as the output of an op over `inputs` when any of them is
// attached; otherwise returns `result` unchanged. Exposed for extension ops.
Tensor record_op(Tensor result, std::initializer_list<const Tensor*> inputs,
                 std::size_t saved_values, BackwardFn backward);

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const double> data() const noexcept { return data_; }
  // Throws if the tensor is attached to a tape: recorded values are frozen.
  std::span<double> mutable_data();

  double operator[](std::size_t i) const { return data_[i]; }
  // Value of a single-element tensor.
  double item() const;

  bool attached() const noexcept { return tape_ != nullptr; }
  std::optional<int> node_id() const;

  // Copy of the values with no tape attachment.
  Tensor detach() const;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::shared_ptr<detail::TapeState> tape_;
  int node_ = -1;

  friend class Tape;
  friend struct detail::TapeState;
  friend Tensor record_op(Tensor result, std::initializer_list<const Tensor*> inputs,
                          std::size_t saved_values, BackwardFn backward);
};

// Gradients of a scalar output with respect to every watched leaf.
class Gradients {
 public:
  const Tensor& operator[](const Tensor& leaf) const;
  const Tensor& at(int node_id) const;
  bool contains(int node_id) const { return by_node_.count(node_id) != 0; }
  std::size_t size() const noexcept { return by_node_.size(); }

 private:
  std::unordered_map<int, Tensor> by_node_;
  friend class Tape;
};

class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;
  ~Tape();

  // Attaches a copy of `value` as a differentiable leaf.
  Tensor watch(const Tensor& value);

  // Reverse sweep from a single-element output. Consumes the tape.
  Gradients backward(const Tensor& output);

  bool live() const;
  std::size_t node_count() const;
  // Number of doubles held by the tape for its backward rules.
  std::size_t saved_values() const;

 private:
  std::shared_ptr<detail::TapeState> state_;
};

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor square(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);

// [m, k] x [k, n] -> [m, n].
Tensor matmul(const Tensor& a, const Tensor& b);

// Joins tensors along `axis`; all other extents must match.
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
// Half-open range [begin, end) along `axis`.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
// Gathers entries along `axis` (indices may repeat).
Tensor take(const Tensor& a, std::size_t axis, std::span<const std::size_t> indices);
Tensor reshape(const Tensor& a, Shape shape);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Leading-dimension expansion: shape S -> [n, S...].
Tensor broadcast(const Tensor& a, std::size_t n);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }

// sum(a * b); the usual way to seed a vector-Jacobian product.
Tensor inner(const Tensor& a, const Tensor& b);

double max_abs(const Tensor& a);
double l2_norm(const Tensor& a);
bool all_finite(const Tensor& a);

}  // namespace gestinv::ad
