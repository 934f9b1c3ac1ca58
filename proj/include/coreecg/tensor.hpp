#pragma once

// Shape-tagged row-major tensors on a reverse-mode tape. A Tensor is a cheap
// handle (shape + shared buffer + optional tape node); ops never mutate their
// inputs, so buffers may be shared freely. One Tape per forward/backward pass,
// single-threaded per instance; distinct tapes may run on distinct threads.

#include <functional>
#include <memory>
#include <type_traits>
#include <utility>
#include <vector>

#include "coreecg/common.hpp"

namespace coreecg {

enum class DType { f32, f64 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "engine supports float32 and float64 only");
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

inline const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

template <typename T>
class Tape;

template <typename T>
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  Tape<T>* tape = nullptr;
  int node = -1;

  Tensor() = default;
  Tensor(Shape s, std::shared_ptr<std::vector<T>> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != data->size())
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match buffer of " +
                       std::to_string(data->size()) + " elements");
  }

  static Tensor constant(Shape s, std::vector<T> d) {
    return Tensor(std::move(s), std::make_shared<std::vector<T>>(std::move(d)));
  }
  static Tensor zeros(Shape s) {
    auto n = numel(s);
    return Tensor(std::move(s), std::make_shared<std::vector<T>>(n, T(0)));
  }
  static Tensor full(Shape s, T v) {
    auto n = numel(s);
    return Tensor(std::move(s), std::make_shared<std::vector<T>>(n, v));
  }
  static Tensor scalar(T v) { return constant({1}, {v}); }

  bool recorded() const { return node >= 0; }
  std::size_t size() const { return data ? data->size() : 0; }
  std::size_t rank() const { return shape.size(); }
  const T* ptr() const { return data->data(); }
  const std::vector<T>& values() const { return *data; }
  T item() const {
    if (size() != 1) throw ShapeError("item(): tensor " + shape_str(shape) + " is not scalar");
    return (*data)[0];
  }
  constexpr DType dtype() const { return dtype_of<T>(); }
};

template <typename T>
class Tape {
 public:
  using BackFn = std::function<void(Tape<T>&, const std::vector<T>&)>;

  // Grad-enabled leaf sharing the caller's buffer (parameters, fda weights).
  Tensor<T> leaf(Shape shape, std::shared_ptr<std::vector<T>> data) {
    if (numel(shape) != data->size())
      throw ShapeError("leaf: shape " + shape_str(shape) + " vs buffer " +
                       std::to_string(data->size()));
    Tensor<T> t(shape, std::move(data));
    t.tape = this;
    t.node = add_node(shape, nullptr);
    return t;
  }
  Tensor<T> leaf(Shape shape, std::vector<T> data) {
    return leaf(std::move(shape), std::make_shared<std::vector<T>>(std::move(data)));
  }

  int add_node(const Shape& shape, BackFn back) {
    nodes_.push_back(NodeRec{shape, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::size_t num_nodes() const { return nodes_.size(); }

  // Accumulation target for a parent node during backward. Allocated lazily.
  std::vector<T>& grad_buf(int node) {
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (!has_grad_[static_cast<std::size_t>(node)]) {
      g.assign(numel(nodes_[static_cast<std::size_t>(node)].shape), T(0));
      has_grad_[static_cast<std::size_t>(node)] = 1;
    }
    return g;
  }

  void backward(const Tensor<T>& root) {
    check_on_tape(root, "backward root");
    if (root.size() != 1)
      throw GraphError("backward: root must be scalar, got shape " + shape_str(root.shape));
    std::vector<T> seed{T(1)};
    backward_seeded({{&root, &seed}});
  }

  // General vector-Jacobian product: seed several outputs with cotangents.
  void backward_seeded(
      const std::vector<std::pair<const Tensor<T>*, const std::vector<T>*>>& seeds) {
    grads_.assign(nodes_.size(), {});
    has_grad_.assign(nodes_.size(), 0);
    int top = -1;
    for (const auto& [t, g] : seeds) {
      check_on_tape(*t, "backward seed");
      if (g->size() != t->size())
        throw ShapeError("backward seed: cotangent size " + std::to_string(g->size()) +
                         " vs tensor " + shape_str(t->shape));
      auto& buf = grad_buf(t->node);
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += (*g)[i];
      top = std::max(top, t->node);
    }
    // Creation order is topological, so one reverse sweep visits each node
    // exactly once with its output gradient fully accumulated.
    for (int i = top; i >= 0; --i) {
      auto idx = static_cast<std::size_t>(i);
      if (has_grad_[idx] && nodes_[idx].back) nodes_[idx].back(*this, grads_[idx]);
    }
    ran_backward_ = true;
  }

  // Gradient of a recorded tensor after backward; null when unreached.
  const std::vector<T>* grad(const Tensor<T>& t) const {
    check_on_tape(t, "grad query");
    if (!ran_backward_) throw GraphError("grad: backward has not run on this tape");
    auto idx = static_cast<std::size_t>(t.node);
    return has_grad_[idx] ? &grads_[idx] : nullptr;
  }

 private:
  struct NodeRec {
    Shape shape;
    BackFn back;
  };

  void check_on_tape(const Tensor<T>& t, const char* what) const {
    if (!t.recorded() || t.tape != this)
      throw GraphError(std::string(what) + ": tensor is detached from this tape");
    if (static_cast<std::size_t>(t.node) >= nodes_.size())
      throw GraphError(std::string(what) + ": node id out of range");
  }

  std::vector<NodeRec> nodes_;
  std::vector<std::vector<T>> grads_;
  std::vector<char> has_grad_;
  bool ran_backward_ = false;
};

}  // namespace coreecg
