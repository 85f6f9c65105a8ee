#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "metafun/tensor.hpp"

namespace metafun {

using ParamId = std::size_t;

/// Owns every learnable tensor of a model in a fixed enumeration order.
class ParamStore {
 public:
  struct Parameter {
    std::string name;
    Tensor value;
    bool trainable = true;
  };

  ParamId add(std::string name, Tensor value, bool trainable = true);

  std::size_t size() const noexcept { return params_.size(); }
  const Parameter& operator[](ParamId id) const { return params_.at(id); }
  Tensor& value(ParamId id) { return params_.at(id).value; }
  const Tensor& value(ParamId id) const { return params_.at(id).value; }
  const std::string& name(ParamId id) const { return params_.at(id).name; }
  bool trainable(ParamId id) const { return params_.at(id).trainable; }
  void set_trainable(ParamId id, bool trainable) { params_.at(id).trainable = trainable; }
  std::optional<ParamId> find(const std::string& name) const;

  /// Total number of scalars across all parameters.
  std::size_t scalar_count() const;
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);

 private:
  std::vector<Parameter> params_;
};

class Graph;

/// Handle to a node in a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Append-only reverse-mode tape. Nodes are created by the op functions
/// below; inputs always precede the nodes that use them.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  /// Parameter leaves alias `params`, which must outlive the graph unchanged.
  explicit Graph(const ParamStore* params = nullptr) : params_(params) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Leaf for a stored parameter; repeated calls return the same node.
  Var param(ParamId id);
  /// Differentiable leaf that is not a stored parameter (gradient checks).
  Var input(Tensor value);

  const Tensor& value(std::size_t id) const { return nodes_[id].get(); }
  const Tensor& value(Var v) const { return value(v.id); }
  /// Adjoint after backward(); zeros for nodes the loss does not reach.
  const Tensor& grad(Var v) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Fills adjoints of every node reachable from `loss`, which must be [1,1].
  void backward(Var loss);
  /// Parameter adjoints after backward(), keyed by ParamId.
  std::map<ParamId, Tensor> param_grads() const;
  /// Moves out the adjoints of parameters the loss reached; others are absent.
  std::map<ParamId, Tensor> take_param_grads();

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t param_node_count() const noexcept { return param_nodes_.size(); }
  const ParamStore* params() const noexcept { return params_; }

  // Used by op implementations.
  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);
  Tensor& grad_ref(std::size_t id);

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;  // parameter leaves read the store in place
    const Tensor& get() const { return external ? *external : value; }
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::optional<ParamId> param;
    bool needs_grad = false;
  };

  const ParamStore* params_;
  std::vector<Node> nodes_;
  std::unordered_map<ParamId, std::size_t> param_nodes_;
};

/// Runs backward from `loss` and returns the parameter adjoints.
std::map<ParamId, Tensor> backward(Graph& g, Var loss);

// ---- differentiable ops (all rank-2) ----

Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a [1,n] row over a's rows
Var sub(Var a, Var b);
Var mul(Var a, Var b);        // elementwise
Var mul_col(Var a, Var col);  // scale row i of a by col[i,0]
Var scale(Var a, double c);
Var scale_by(Var a, Var s);   // s is [1,1]
Var add_scalar(Var a, double c);
Var neg(Var a);

Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var softplus(Var a);
Var square(Var a);
Var reciprocal(Var a);

Var softmax_rows(Var a);
/// RBF Gram between rows of q and k; `log_lengthscale` is [1,1].
Var rbf_gram(Var q, Var k, Var log_lengthscale);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var reshape(Var a, std::size_t rows, std::size_t cols);
/// [n*g, w] -> [n, w], summing each run of g consecutive rows.
Var group_sum_rows(Var a, std::size_t group);
/// [n, w] -> [n*g, w], each row repeated g times consecutively.
Var repeat_rows(Var a, std::size_t group);

Var sum(Var a);
Var mean(Var a);
/// Per-row linear map with row-specific weights: x [m,a], w [m,b*a],
/// y[j,o] = sum_i x[j,i] * w[j, o*a + i].
Var rowwise_linear(Var x, Var w);

// ---- losses (return [1,1], averaged over rows) ----

/// mean_j sum_d (pred - target)^2
Var mean_squared_error(Var pred, const Tensor& target);
/// mean_j sum_d [ log(2 pi)/2 + log sigma + (y - mu)^2 / (2 sigma^2) ]
Var mean_gaussian_nll(Var mu, Var sigma, const Tensor& target);
/// mean_j -sum_k t_k log max(softmax(z_j)_k, 1e-12); targets may be soft.
Var mean_softmax_cross_entropy(Var logits, const Tensor& targets);

inline constexpr double kProbabilityFloor = 1e-12;

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator-(Var a) { return neg(a); }

}  // namespace metafun
