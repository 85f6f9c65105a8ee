#pragma once

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "metafun/graph.hpp"
#include "metafun/mlp.hpp"
#include "metafun/pooling.hpp"

namespace metafun {

enum class InitMode { zero, constant, parametric };

/// u([x, y, r(x)]) = MLP([x, y, r(x)]).
struct RegressionUpdater {
  Mlp u;
};

/// Label-gated classification updater over K class blocks of width
/// `class_dim`: m acts on each block, u_plus / u_minus act on [m_k, sum_k m_k]
/// and a shared linear map projects the gated result back to `class_dim`.
struct ClassificationUpdater {
  Mlp m;
  Mlp u_plus;
  Mlp u_minus;
  Mlp projection;
  std::size_t ways = 0;
};

enum class GradientLoss { squared, cross_entropy };

/// Treats r(x) as the prediction and returns the loss gradient: r - y for
/// squared loss (needs d_r = d_y), softmax(r) - y for cross-entropy (needs one
/// scalar per class).
struct GradientUpdater {
  GradientLoss loss = GradientLoss::squared;
  std::size_t ways = 0;
  /// Cross-entropy only: evaluate through the label-gated update with the
  /// fixed forms of gated_gradient_forms() instead of softmax(r) - y.
  bool gated = false;
};

using Updater = std::variant<RegressionUpdater, ClassificationUpdater, GradientUpdater>;

struct EncoderParams {
  Updater updater;
  Pooling pooling;
  ParamId log_alpha = 0;
  InitMode init_mode = InitMode::zero;
  std::optional<ParamId> init_constant;  // [1, d_r]
  std::optional<Mlp> init_net;           // x -> r^(0)(x)
  std::size_t iterations = 5;
  std::size_t repr_dim = 0;
};

struct EpisodeInputs {
  Tensor context_x;  // [|C|, d_x]
  Tensor context_y;  // [|C|, d_y], one-hot for classification
  Tensor target_x;   // [|T|, d_x]

  std::size_t context_size() const { return context_x.rows(); }
  std::size_t target_size() const { return target_x.rows(); }
};

/// Representation evaluated at context rows followed by target rows.
struct Repr {
  Var values;
  std::size_t iteration = 0;
};

/// Pluggable pieces of the label-gated update so fixed (non-learned) forms
/// and test doubles run through the same code path.
struct ClassificationForms {
  std::function<Var(Var)> m;                // [n*K, d_class] -> [n*K, w]
  std::function<Var(Var, Var)> u_plus;      // (m_k, m_sum) rows -> [n*K, h]
  std::function<Var(Var, Var)> u_minus;
  std::function<Var(Var)> projection;       // [n*K, h] -> [n*K, d_class]; empty = identity
};

/// Validates one-hot label rows; throws DataError otherwise.
void require_one_hot(const Tensor& y, const char* what);

/// u_i for every row of [x, y, r] (rows are context points).
Var local_update_regression(Graph& g, const Mlp& u, Var x, Var y, Var r);
/// Label-gated K-block update; `r` is [n, K*d_class], `y` one-hot [n, K].
Var local_update_classification(Graph& g, const ClassificationForms& forms, Var r, const Tensor& y,
                                std::size_t ways);
ClassificationForms learned_forms(Graph& g, const ClassificationUpdater& up);
/// m = exp, u+ = m / sum(m) - 1, u- = m / sum(m), no projection: the gated
/// update then equals softmax(r) - y for one logit per class.
ClassificationForms gated_gradient_forms();
Var local_update_gradient(Graph& g, const GradientUpdater& up, Var r, const Tensor& y);

/// Builders used by model assembly.
RegressionUpdater make_regression_updater(ParamStore& store, const std::string& name, std::size_t x_dim,
                                          std::size_t y_dim, std::size_t repr_dim, std::size_t width,
                                          std::size_t layers, Rng& rng);
ClassificationUpdater make_classification_updater(ParamStore& store, const std::string& name, std::size_t ways,
                                                  std::size_t class_dim, std::size_t width, std::size_t layers,
                                                  Rng& rng);

/// One episode's iterative encoding over a graph. Embedded queries/keys are
/// computed once and shared by every iteration.
class Encoder {
 public:
  Encoder(Graph& g, const EncoderParams& params, const EpisodeInputs& inputs);

  Repr init_repr();
  /// Local updates u_i^(t) from the context rows of `repr`: [|C|, d_r].
  Var local_updates(const Repr& repr);
  /// Delta r^(t) at every context and target row.
  Var functional_update(const Repr& repr);
  /// r^(t+1) = r^(t) - alpha * Delta r^(t)
  Repr step(const Repr& repr);
  /// r^(T) after `params.iterations` steps from init_repr().
  Repr encode();
  /// r^(0), ..., r^(T).
  std::vector<Repr> trajectory();

  Var context_rows(const Repr& repr) const;
  Var target_rows(const Repr& repr) const;
  Var context_x() const noexcept { return context_x_; }
  Var target_x() const noexcept { return target_x_; }
  Var all_x() const noexcept { return all_x_; }
  Var alpha();

 private:
  Var queries();

  Graph* g_;
  const EncoderParams* params_;
  const EpisodeInputs* inputs_;
  Var context_x_, context_y_, target_x_, all_x_;
  std::optional<Var> queries_;
  std::optional<Var> alpha_;
};

/// Convenience wrapper around Encoder::encode.
Repr encode(Graph& g, const EncoderParams& params, const EpisodeInputs& inputs);

}  // namespace metafun
