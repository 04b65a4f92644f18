#pragma once

// Dense float64 arrays and a dynamic reverse-mode differentiation graph.
//
// A Graph is rebuilt for every evaluation. Leaves are either constants,
// free inputs (used by gradient checks) or bindings to a Parameter owned by
// a model; after backward() the gradient of every reachable node is
// available through Graph::grad() and can be flushed into bound parameters.

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vmloc/errors.hpp"

namespace vmloc {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_numel(shape_), fill);
  }
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (shape_numel(shape_) != data_.size())
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v) {
    const auto n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_, 0.0); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool is_scalar() const noexcept { return data_.size() == 1; }

  // Matrix view helpers: rank-1 tensors are treated as a single row.
  std::size_t rows() const noexcept { return rank() == 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 1); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const {
    VMLOC_EXPECTS(is_scalar(), "item() on non-scalar tensor " + shape_str(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape s) const { return Tensor(std::move(s), data_); }

  bool operator==(const Tensor&) const = default;

 private:
  void check_shape() const {
    for (auto d : shape_)
      if (d == 0) throw DimensionError("zero-sized dimension in shape " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

enum class ParamGroup { encoder, decoder, balance };

// A trainable tensor together with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  ParamGroup group = ParamGroup::decoder;

  Parameter() = default;
  Parameter(std::string n, Tensor v, ParamGroup g)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)), group(g) {}

  void zero_grad() { grad = Tensor::zeros_like(value); }
};

class Graph;

using NodeId = std::size_t;

// Handle to a node of a Graph. Cheap to copy; only valid while its Graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* g, NodeId id) : graph_(g), id_(id) {}

  Graph& graph() const { return *graph_; }
  NodeId id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t numel() const { return value().numel(); }
  bool requires_grad() const;
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  NodeId id_ = 0;
};

class Graph {
 public:
  // Receives the node's output gradient and pushes contributions to its inputs.
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  struct Node {
    std::string op;
    std::vector<NodeId> inputs;
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t) { return push("constant", {}, std::move(t), false, nullptr); }
  // Differentiable leaf not tied to a Parameter.
  Var input(Tensor t) { return push("input", {}, std::move(t), true, nullptr); }
  Var param(Parameter& p) {
    Var v = push("param", {}, p.value, true, nullptr);
    nodes_[v.id()].param = &p;
    return v;
  }

  // Records an operation. The node requires grad iff one of its inputs does.
  Var record(std::string op, std::vector<NodeId> inputs, Tensor value, BackwardFn backward) {
    bool rg = false;
    for (auto i : inputs) rg = rg || nodes_.at(i).requires_grad;
    Var v = push(std::move(op), std::move(inputs), std::move(value), rg, nullptr);
    if (rg) nodes_[v.id()].backward = std::move(backward);
    return v;
  }

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Adds g into the gradient buffer of node id (no-op for constants).
  void accumulate(NodeId id, Tensor g) {
    auto& n = nodes_[id];
    if (!n.requires_grad) return;
    if (g.numel() != n.value.numel())
      throw DimensionError("gradient " + shape_str(g.shape()) + " does not match node " +
                           shape_str(n.value.shape()) + " (" + n.op + ")");
    if (!n.has_grad) {
      n.grad = g.shape() == n.value.shape() ? std::move(g) : g.reshaped(n.value.shape());
      n.has_grad = true;
      return;
    }
    auto dst = n.grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  void zero_grad() {
    for (auto& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
    visits_ = 0;
  }

  // Reverse sweep from a scalar root; every reached node is visited once.
  void backward(const Var& root) {
    VMLOC_EXPECTS(&root.graph() == this, "backward root belongs to another graph");
    VMLOC_EXPECTS(root.value().is_scalar(),
                  "backward root must be scalar, got " + shape_str(root.shape()));
    zero_grad();
    if (!nodes_[root.id()].requires_grad) return;
    accumulate(root.id(), Tensor(root.shape(), 1.0));
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.has_grad || !n.backward) {
        if (n.has_grad) ++visits_;
        continue;
      }
      ++visits_;
      // Callbacks only write into inputs, which precede node i.
      n.backward(*this, n.grad);
    }
  }

  // Gradient of the last backward() root w.r.t. v (zeros if unreached).
  Tensor grad(const Var& v) const {
    const auto& n = nodes_.at(v.id());
    return n.has_grad ? n.grad : Tensor::zeros_like(n.value);
  }

  // Adds scale * grad into every bound Parameter accepted by the filter.
  template <class Filter>
  void flush_param_grads(Filter&& accept, double scale = 1.0) const {
    for (const auto& n : nodes_) {
      if (!n.param || !n.has_grad || !accept(*n.param)) continue;
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
    }
  }
  void flush_param_grads(double scale = 1.0) const {
    flush_param_grads([](const Parameter&) { return true; }, scale);
  }

  std::size_t last_backward_visits() const noexcept { return visits_; }

 private:
  Var push(std::string op, std::vector<NodeId> inputs, Tensor value, bool rg, Parameter* p) {
    nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(value), Tensor(), false, rg, {}, p});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }
inline bool Var::requires_grad() const { return graph_->requires_grad(id_); }

}  // namespace vmloc
