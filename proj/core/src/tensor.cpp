#include "gestinv/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "gestinv/error.hpp"

namespace gestinv::ad {

namespace detail {

struct Node {
  std::size_t size = 0;
  Shape leaf_shape;  // leaves only
  std::vector<int> inputs;
  BackwardFn backward;  // empty for leaves
  bool leaf = false;
};

struct TapeState {
  std::vector<Node> nodes;
  std::size_t saved_values = 0;
  bool live = true;
};

}  // namespace detail

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
}

void accumulate(std::vector<double>* dst, std::span<const double> src) {
  if (dst == nullptr) return;
  for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += src[i];
}

// View of a tensor as [outer, extent, inner] around `axis`.
struct AxisView {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_string(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// --- Tensor -----------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor extents must be positive: " + shape_string(shape_));
  }
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_string(shape_));
  }
  return shape_[axis];
}

std::span<double> Tensor::mutable_data() {
  if (attached()) throw std::logic_error("cannot mutate a tensor recorded on a tape");
  return data_;
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() needs a single-element tensor, got " + shape_string(shape_));
  }
  return data_[0];
}

std::optional<int> Tensor::node_id() const {
  if (!tape_) return std::nullopt;
  return node_;
}

Tensor Tensor::detach() const { return Tensor(shape_, data_); }

// --- Gradients --------------------------------------------------------------

const Tensor& Gradients::operator[](const Tensor& leaf) const {
  auto id = leaf.node_id();
  if (!id) throw std::invalid_argument("tensor is not attached to a tape");
  return at(*id);
}

const Tensor& Gradients::at(int node_id) const {
  auto it = by_node_.find(node_id);
  if (it == by_node_.end()) {
    throw std::out_of_range("no gradient recorded for node " + std::to_string(node_id));
  }
  return it->second;
}

// --- Tape -------------------------------------------------------------------

Tape::Tape() : state_(std::make_shared<detail::TapeState>()) {}
Tape::~Tape() = default;

bool Tape::live() const { return state_ && state_->live; }
std::size_t Tape::node_count() const { return state_ ? state_->nodes.size() : 0; }
std::size_t Tape::saved_values() const { return state_ ? state_->saved_values : 0; }

Tensor Tape::watch(const Tensor& value) {
  if (!live()) throw std::logic_error("tape already consumed by backward()");
  if (value.attached()) throw std::invalid_argument("watch() expects a detached tensor");
  Tensor leaf = value.detach();
  detail::Node node;
  node.size = leaf.size();
  node.leaf_shape = leaf.shape();
  node.leaf = true;
  state_->nodes.push_back(std::move(node));
  leaf.tape_ = state_;
  leaf.node_ = static_cast<int>(state_->nodes.size()) - 1;
  return leaf;
}

Gradients Tape::backward(const Tensor& output) {
  if (!live()) throw std::logic_error("tape already consumed by backward()");
  if (output.size() != 1) {
    throw ShapeError("backward() needs a scalar output, got " +
                     shape_string(output.shape()));
  }
  if (output.tape_ != state_) {
    throw std::invalid_argument("backward() output is not recorded on this tape");
  }
  auto& nodes = state_->nodes;
  std::vector<std::vector<double>> grads(nodes.size());
  grads[output.node_].assign(1, 1.0);

  std::vector<std::vector<double>*> input_grads;
  for (int id = output.node_; id >= 0; --id) {
    auto& node = nodes[id];
    if (grads[id].empty() || node.leaf) continue;
    input_grads.clear();
    for (int in : node.inputs) {
      if (in < 0) {
        input_grads.push_back(nullptr);
        continue;
      }
      if (grads[in].empty()) grads[in].assign(nodes[in].size, 0.0);
      input_grads.push_back(&grads[in]);
    }
    node.backward.fn(grads[id], input_grads);
    // Intermediate gradients are dead once propagated.
    std::vector<double>().swap(grads[id]);
    node.backward.fn = nullptr;
  }

  Gradients result;
  for (std::size_t id = 0; id < nodes.size(); ++id) {
    if (!nodes[id].leaf) continue;
    std::vector<double> g = grads[id].empty() ? std::vector<double>(nodes[id].size, 0.0)
                                              : std::move(grads[id]);
    result.by_node_.emplace(static_cast<int>(id), Tensor(nodes[id].leaf_shape, std::move(g)));
  }
  state_->live = false;
  state_->nodes.clear();
  state_->saved_values = 0;
  return result;
}

Tensor record_op(Tensor result, std::initializer_list<const Tensor*> inputs,
                 std::size_t saved_values, BackwardFn backward) {
  std::shared_ptr<detail::TapeState> tape;
  for (const Tensor* in : inputs) {
    if (!in->tape_) continue;
    if (!in->tape_->live) throw std::logic_error("tape already consumed by backward()");
    if (tape && tape != in->tape_) {
      throw std::invalid_argument("op mixes tensors from different tapes");
    }
    tape = in->tape_;
  }
  if (!tape) return result;

  detail::Node node;
  node.size = result.size();
  for (const Tensor* in : inputs) node.inputs.push_back(in->tape_ ? in->node_ : -1);
  node.backward = std::move(backward);
  tape->nodes.push_back(std::move(node));
  tape->saved_values += saved_values;
  result.tape_ = tape;
  result.node_ = static_cast<int>(tape->nodes.size()) - 1;
  return result;
}

// --- Primitives -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return record_op(Tensor(a.shape(), std::move(out)), {&a, &b}, 0,
                   {[](std::span<const double> g, std::span<std::vector<double>*> in) {
                     accumulate(in[0], g);
                     accumulate(in[1], g);
                   }});
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return record_op(Tensor(a.shape(), std::move(out)), {&a, &b}, 0,
                   {[](std::span<const double> g, std::span<std::vector<double>*> in) {
                     accumulate(in[0], g);
                     if (in[1]) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] -= g[i];
                     }
                   }});
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor result(a.shape(), std::move(out));
  if (!a.attached() && !b.attached()) return result;
  std::vector<double> av(a.data().begin(), a.data().end());
  std::vector<double> bv(b.data().begin(), b.data().end());
  const auto saved = av.size() + bv.size();
  return record_op(std::move(result), {&a, &b}, saved,
                   {[av = std::move(av), bv = std::move(bv)](
                        std::span<const double> g, std::span<std::vector<double>*> in) {
                     if (in[0]) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * bv[i];
                     }
                     if (in[1]) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] += g[i] * av[i];
                     }
                   }});
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * a[i];
  return record_op(Tensor(a.shape(), std::move(out)), {&a}, 0,
                   {[s](std::span<const double> g, std::span<std::vector<double>*> in) {
                     for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += s * g[i];
                   }});
}

Tensor square(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * a[i];
  Tensor result(a.shape(), std::move(out));
  if (!a.attached()) return result;
  std::vector<double> av(a.data().begin(), a.data().end());
  const auto saved = av.size();
  return record_op(std::move(result), {&a}, saved,
                   {[av = std::move(av)](std::span<const double> g,
                                         std::span<std::vector<double>*> in) {
                     for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += 2.0 * av[i] * g[i];
                   }});
}

Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
  Tensor result(a.shape(), std::move(out));
  if (!a.attached()) return result;
  std::vector<double> yv(result.data().begin(), result.data().end());
  const auto saved = yv.size();
  return record_op(std::move(result), {&a}, saved,
                   {[yv = std::move(yv)](std::span<const double> g,
                                         std::span<std::vector<double>*> in) {
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       (*in[0])[i] += (1.0 - yv[i] * yv[i]) * g[i];
                     }
                   }});
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  Tensor result(a.shape(), std::move(out));
  if (!a.attached()) return result;
  std::vector<bool> active(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) active[i] = a[i] > 0.0;
  return record_op(std::move(result), {&a}, a.size() / 64 + 1,
                   {[active = std::move(active)](std::span<const double> g,
                                                 std::span<std::vector<double>*> in) {
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       if (active[i]) (*in[0])[i] += g[i];
                     }
                   }});
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  ConstMap am(a.data().data(), m, k);
  ConstMap bm(b.data().data(), k, n);
  MutMap(out.data(), m, n).noalias() = am * bm;
  Tensor result({m, n}, std::move(out));
  if (!a.attached() && !b.attached()) return result;

  // Only keep the operand each gradient needs.
  std::vector<double> av, bv;
  if (b.attached()) av.assign(a.data().begin(), a.data().end());
  if (a.attached()) bv.assign(b.data().begin(), b.data().end());
  const auto saved = av.size() + bv.size();
  return record_op(
      std::move(result), {&a, &b}, saved,
      {[av = std::move(av), bv = std::move(bv), m, k, n](
           std::span<const double> g, std::span<std::vector<double>*> in) {
        ConstMap gm(g.data(), m, n);
        if (in[0]) {
          MutMap(in[0]->data(), m, k).noalias() += gm * ConstMap(bv.data(), k, n).transpose();
        }
        if (in[1]) {
          MutMap(in[1]->data(), k, n).noalias() += ConstMap(av.data(), m, k).transpose() * gm;
        }
      }});
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  const auto base = axis_view(first, axis, "concat");
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) {
      throw ShapeError("concat: rank mismatch " + shape_string(first) + " vs " +
                       shape_string(p.shape()));
    }
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.shape()[i] != first[i]) {
        throw ShapeError("concat: shape mismatch " + shape_string(first) + " vs " +
                         shape_string(p.shape()) + " off axis " + std::to_string(axis));
      }
    }
    extents.push_back(p.shape()[axis]);
    total += p.shape()[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<double> out(shape_size(out_shape));
  const auto inner = base.inner;
  for (std::size_t o = 0; o < base.outer; ++o) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const auto chunk = extents[p] * inner;
      const double* src = parts[p].data().data() + o * chunk;
      std::copy(src, src + chunk, out.data() + (o * total + offset) * inner);
      offset += extents[p];
    }
  }
  Tensor result(std::move(out_shape), std::move(out));

  // record_op takes an initializer list; chain attached parts through a
  // single node whose inputs are listed explicitly.
  bool any_attached = false;
  for (const auto& p : parts) any_attached = any_attached || p.attached();
  if (!any_attached) return result;

  auto backward = [extents, outer = base.outer, inner, total](
                      std::span<const double> g, std::span<std::vector<double>*> in) {
    for (std::size_t o = 0; o < outer; ++o) {
      std::size_t offset = 0;
      for (std::size_t p = 0; p < in.size(); ++p) {
        const auto chunk = extents[p] * inner;
        if (in[p]) {
          const double* src = g.data() + (o * total + offset) * inner;
          double* dst = in[p]->data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
        offset += extents[p];
      }
    }
  };
  switch (parts.size()) {
    case 1:
      return record_op(std::move(result), {&parts[0]}, 0, {backward});
    case 2:
      return record_op(std::move(result), {&parts[0], &parts[1]}, 0, {backward});
    case 3:
      return record_op(std::move(result), {&parts[0], &parts[1], &parts[2]}, 0, {backward});
    case 4:
      return record_op(std::move(result), {&parts[0], &parts[1], &parts[2], &parts[3]}, 0,
                       {backward});
    default:
      break;
  }
  // Wider joins fold pairwise; the recorded graph stays exact.
  std::vector<Tensor> head(parts.begin(), parts.begin() + 4);
  Tensor acc = concat(head, axis);
  for (std::size_t p = 4; p < parts.size(); ++p) {
    const Tensor pair[2] = {acc, parts[p]};
    acc = concat(pair, axis);
  }
  return acc;
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto v = axis_view(a.shape(), axis, "slice");
  if (begin >= end || end > v.extent) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for axis " + std::to_string(axis) + " of " +
                     shape_string(a.shape()));
  }
  const auto len = end - begin;
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  std::vector<double> out(v.outer * len * v.inner);
  for (std::size_t o = 0; o < v.outer; ++o) {
    const double* src = a.data().data() + (o * v.extent + begin) * v.inner;
    std::copy(src, src + len * v.inner, out.data() + o * len * v.inner);
  }
  return record_op(Tensor(std::move(out_shape), std::move(out)), {&a}, 0,
                   {[v, begin, len](std::span<const double> g,
                                    std::span<std::vector<double>*> in) {
                     for (std::size_t o = 0; o < v.outer; ++o) {
                       const double* src = g.data() + o * len * v.inner;
                       double* dst = in[0]->data() + (o * v.extent + begin) * v.inner;
                       for (std::size_t i = 0; i < len * v.inner; ++i) dst[i] += src[i];
                     }
                   }});
}

Tensor take(const Tensor& a, std::size_t axis, std::span<const std::size_t> indices) {
  const auto v = axis_view(a.shape(), axis, "take");
  if (indices.empty()) throw ShapeError("take: empty index list");
  for (auto idx : indices) {
    if (idx >= v.extent) {
      throw ShapeError("take: index " + std::to_string(idx) + " out of range for axis " +
                       std::to_string(axis) + " of " + shape_string(a.shape()));
    }
  }
  const auto count = indices.size();
  Shape out_shape = a.shape();
  out_shape[axis] = count;
  std::vector<double> out(v.outer * count * v.inner);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t k = 0; k < count; ++k) {
      const double* src = a.data().data() + (o * v.extent + indices[k]) * v.inner;
      std::copy(src, src + v.inner, out.data() + (o * count + k) * v.inner);
    }
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return record_op(Tensor(std::move(out_shape), std::move(out)), {&a}, 0,
                   {[v, idx = std::move(idx)](std::span<const double> g,
                                              std::span<std::vector<double>*> in) {
                     const auto count = idx.size();
                     for (std::size_t o = 0; o < v.outer; ++o) {
                       for (std::size_t k = 0; k < count; ++k) {
                         const double* src = g.data() + (o * count + k) * v.inner;
                         double* dst = in[0]->data() + (o * v.extent + idx[k]) * v.inner;
                         for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i];
                       }
                     }
                   }});
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                     shape_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return record_op(Tensor(std::move(shape), std::move(out)), {&a}, 0,
                   {[](std::span<const double> g, std::span<std::vector<double>*> in) {
                     accumulate(in[0], g);
                   }});
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return record_op(Tensor::scalar(s), {&a}, 0,
                   {[](std::span<const double> g, std::span<std::vector<double>*> in) {
                     for (auto& v : *in[0]) v += g[0];
                   }});
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor broadcast(const Tensor& a, std::size_t n) {
  if (n == 0) throw ShapeError("broadcast: leading extent must be positive");
  Shape out_shape;
  out_shape.reserve(a.rank() + 1);
  out_shape.push_back(n);
  out_shape.insert(out_shape.end(), a.shape().begin(), a.shape().end());
  std::vector<double> out;
  out.reserve(n * a.size());
  for (std::size_t r = 0; r < n; ++r) out.insert(out.end(), a.data().begin(), a.data().end());
  const auto width = a.size();
  return record_op(Tensor(std::move(out_shape), std::move(out)), {&a}, 0,
                   {[n, width](std::span<const double> g, std::span<std::vector<double>*> in) {
                     for (std::size_t r = 0; r < n; ++r) {
                       for (std::size_t i = 0; i < width; ++i) (*in[0])[i] += g[r * width + i];
                     }
                   }});
}

Tensor inner(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double l2_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

bool all_finite(const Tensor& a) {
  return std::all_of(a.data().begin(), a.data().end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace gestinv::ad
