#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dtsnet/tensor.hpp"

namespace dtsnet {

/// A learnable tensor with its gradient slot.
template <typename Scalar>
struct Parameter {
  std::string path;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
};

/// Flat registry of parameters keyed by hierarchical path, in registration order.
/// Element addresses are stable for the lifetime of the store.
template <typename Scalar>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& other) { *this = other; }
  ParamStore& operator=(const ParamStore& other) {
    if (this == &other) return *this;
    params_.clear();
    index_.clear();
    for (const auto& p : other.params_) add(p->path, p->value);
    return *this;
  }
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Parameter<Scalar>& add(const std::string& path, Tensor<Scalar> value) {
    if (index_.count(path)) throw ShapeError("duplicate parameter path '" + path + "'");
    auto grad = Tensor<Scalar>::zeros(value.shape());
    params_.push_back(
        std::make_unique<Parameter<Scalar>>(Parameter<Scalar>{path, std::move(value), grad}));
    index_.emplace(path, params_.size() - 1);
    return *params_.back();
  }

  bool contains(const std::string& path) const { return index_.count(path) > 0; }

  Parameter<Scalar>& at(const std::string& path) {
    auto it = index_.find(path);
    if (it == index_.end()) throw ShapeError("unknown parameter path '" + path + "'");
    return *params_[it->second];
  }
  const Parameter<Scalar>& at(const std::string& path) const {
    return const_cast<ParamStore*>(this)->at(path);
  }
  Parameter<Scalar>* find(const std::string& path) {
    auto it = index_.find(path);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  std::size_t size() const { return params_.size(); }
  Parameter<Scalar>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<Scalar>& operator[](std::size_t i) const { return *params_[i]; }

  /// Total number of scalar parameters.
  Index count() const {
    Index n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.vec().setZero();
  }

 private:
  std::vector<std::unique_ptr<Parameter<Scalar>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename Scalar>
class Graph;

/// Handle to a value produced in a Graph. Untracked values (constants, or results of ops whose
/// inputs are all untracked) carry no node and keep their storage alive only through the handle.
template <typename Scalar>
class Var {
 public:
  Var() = default;

  const Tensor<Scalar>& value() const { return *value_; }
  const Shape& shape() const { return value_->shape(); }
  Index dim(int axis) const { return value_->dim(axis); }
  int rank() const { return value_->rank(); }
  bool tracked() const { return node_ >= 0; }
  Graph<Scalar>& graph() const { return *graph_; }
  int node() const { return node_; }

 private:
  friend class Graph<Scalar>;
  Var(Graph<Scalar>* g, int node, std::shared_ptr<const Tensor<Scalar>> v)
      : graph_(g), node_(node), value_(std::move(v)) {}

  Graph<Scalar>* graph_ = nullptr;
  int node_ = -1;
  std::shared_ptr<const Tensor<Scalar>> value_;
};

/// Define-by-run tape for reverse-mode differentiation. Single-threaded; independent graphs may
/// run concurrently.
template <typename Scalar>
class Graph {
 public:
  /// Receives the output gradient and one accumulator per input (null when the input is
  /// untracked). Implementations add into the accumulators.
  using BackwardFn =
      std::function<void(const Tensor<Scalar>& grad_out, std::span<Tensor<Scalar>* const> grads)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<Scalar> constant(Tensor<Scalar> value) {
    return Var<Scalar>(this, -1, std::make_shared<const Tensor<Scalar>>(std::move(value)));
  }

  /// Leaf whose gradient is retained and read back with grad().
  Var<Scalar> input(Tensor<Scalar> value, bool requires_grad = true) {
    auto v = std::make_shared<const Tensor<Scalar>>(std::move(value));
    if (!requires_grad || !enabled_) return Var<Scalar>(this, -1, std::move(v));
    return Var<Scalar>(this, push_leaf(v->shape(), nullptr), v);
  }

  /// Leaf bound to a parameter; backward() accumulates into param.grad.
  Var<Scalar> param(Parameter<Scalar>& p) {
    auto v = std::make_shared<const Tensor<Scalar>>(p.value);
    if (!enabled_) return Var<Scalar>(this, -1, std::move(v));
    return Var<Scalar>(this, push_leaf(v->shape(), &p), v);
  }

  /// Parameter value as an untracked constant.
  Var<Scalar> frozen(const Parameter<Scalar>& p) { return constant(p.value); }

  /// Records an op output. No node is created unless some input is tracked.
  Var<Scalar> record(Tensor<Scalar> out, std::initializer_list<Var<Scalar>> inputs, BackwardFn fn,
                     const char* op) {
    return record(std::move(out), std::span<const Var<Scalar>>(inputs.begin(), inputs.size()),
                  std::move(fn), op);
  }

  Var<Scalar> record(Tensor<Scalar> out, std::span<const Var<Scalar>> inputs, BackwardFn fn,
                     const char* op) {
    auto v = std::make_shared<const Tensor<Scalar>>(std::move(out));
    bool any = false;
    for (const auto& in : inputs) any = any || in.tracked();
    if (!any || !enabled_) return Var<Scalar>(this, -1, std::move(v));
    Node n;
    n.op = op;
    n.shape = v->shape();
    for (const auto& in : inputs) n.inputs.push_back(in.node_);
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1, std::move(v));
  }

  /// Reverse pass from a scalar loss. Parameter and input-leaf gradients accumulate across calls.
  void backward(const Var<Scalar>& loss) {
    if (loss.value().size() != 1) {
      throw ShapeError("backward requires a scalar loss, got shape " + loss.shape().str());
    }
    if (!loss.tracked()) return;
    for (auto& n : nodes_) {
      if (!n.leaf() || n.param) {
        n.grad = Tensor<Scalar>();
      }
    }
    auto& root = nodes_[static_cast<std::size_t>(loss.node_)];
    ensure_grad(root);
    root.grad.vec().array() += Scalar(1);

    std::vector<Tensor<Scalar>*> slots;
    for (int i = loss.node_; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.empty()) continue;
      if (n.leaf()) {
        if (n.param) {
          n.param->grad.vec() += n.grad.vec();
          n.grad = Tensor<Scalar>();
        }
        continue;
      }
      slots.assign(n.inputs.size(), nullptr);
      for (std::size_t j = 0; j < n.inputs.size(); ++j) {
        if (n.inputs[j] < 0) continue;
        auto& in = nodes_[static_cast<std::size_t>(n.inputs[j])];
        ensure_grad(in);
        slots[j] = &in.grad;
      }
      n.backward(n.grad, std::span<Tensor<Scalar>* const>(slots.data(), slots.size()));
      n.grad = Tensor<Scalar>();
    }
  }

  /// Accumulated gradient of an input leaf (zeros if none reached it).
  Tensor<Scalar> grad(const Var<Scalar>& v) const {
    if (!v.tracked()) return Tensor<Scalar>::zeros(v.shape());
    const auto& n = nodes_[static_cast<std::size_t>(v.node_)];
    return n.grad.empty() ? Tensor<Scalar>::zeros(v.shape()) : n.grad;
  }

  void zero_grad() {
    for (auto& n : nodes_) n.grad = Tensor<Scalar>();
  }

  /// When disabled, ops produce untracked values (inference mode).
  void set_enabled(bool on) { enabled_ = on; }
  bool enabled() const { return enabled_; }

  std::size_t num_nodes() const { return nodes_.size(); }
  const char* op_name(int node) const { return nodes_.at(static_cast<std::size_t>(node)).op; }
  const std::vector<int>& node_inputs(int node) const {
    return nodes_.at(static_cast<std::size_t>(node)).inputs;
  }

 private:
  struct Node {
    const char* op = "leaf";
    Shape shape;
    std::vector<int> inputs;
    BackwardFn backward;
    Tensor<Scalar> grad;
    Parameter<Scalar>* param = nullptr;
    bool is_leaf = false;
    bool leaf() const { return is_leaf; }
  };

  int push_leaf(const Shape& shape, Parameter<Scalar>* p) {
    Node n;
    n.shape = shape;
    n.param = p;
    n.is_leaf = true;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  static void ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad = Tensor<Scalar>::zeros(n.shape);
  }

  std::vector<Node> nodes_;
  bool enabled_ = true;
};

}  // namespace dtsnet
