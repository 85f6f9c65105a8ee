#pragma once

#include <functional>
#include <vector>

#include "metafun/encoder.hpp"
#include "metafun/tensor.hpp"

// Functional gradient descent in the RKHS of a fixed RBF kernel. Used as a
// baseline and as the exact reference for the encoder's gradient-updater,
// fixed-kernel, identity-decoder configuration.
namespace metafun::fgd {

enum class Loss { squared, cross_entropy };

struct Config {
  double lengthscale = 1.0;
  double alpha = 0.1;
  std::size_t steps = 5;
  Loss loss = Loss::squared;
  /// Constant initial function value.
  double f0 = 0.0;
  /// Fixed input embedding applied before the kernel; empty means identity.
  std::function<Tensor(const Tensor&)> embedding;
};

/// f - y, the gradient of 0.5 |f - y|^2 w.r.t. f (row-wise).
Tensor grad_squared(const Tensor& f, const Tensor& y);
/// softmax(logits) - y (row-wise); y must be one-hot.
Tensor grad_cross_entropy(const Tensor& logits, const Tensor& y);
/// The label-gated form with m = exp, u+ = m/sum(m) - 1, u- = m/sum(m),
/// evaluated literally.
Tensor gated_cross_entropy_grad(const Tensor& logits, const Tensor& y);
/// The same fixed forms packaged for encoder::local_update_classification.
ClassificationForms gradient_forms(Graph& g);

Tensor loss_grad(const Config& cfg, const Tensor& f, const Tensor& y);
/// k(a_i, b_j) after the fixed embedding.
Tensor kernel(const Config& cfg, const Tensor& a, const Tensor& b);

/// One step of f(x) <- f(x) - alpha sum_i k(x, x_i) grad_i at every tracked
/// point. `f_values` rows are the context points followed by the queries.
Tensor step(const Config& cfg, const Tensor& f_values, const Tensor& context_x, const Tensor& context_y,
            const Tensor& query_x);

/// Context-only record of a run: the per-step loss gradients at the context.
struct State {
  Tensor context_x;
  std::vector<Tensor> coefficients;
};

struct Run {
  /// f^(t) at context+query rows for t = 0..T (path a).
  std::vector<Tensor> trajectory;
  /// f^(T) at the queries, tracked through every step (path a).
  Tensor tracked;
  /// f^(T) at the queries rebuilt from `state` alone (path b).
  Tensor reconstructed;
  State state;
};

Run run(const Config& cfg, const Tensor& context_x, const Tensor& context_y, const Tensor& query_x);
/// f^(T)(x) = f0 - alpha sum_t sum_i k(x, x_i) grad_i^(t).
Tensor evaluate(const Config& cfg, const State& state, const Tensor& query_x, std::size_t out_dim);

/// Encoder parameters reproducing `cfg`: gradient updater, identity-embedded
/// RBF pooling with frozen lengthscale, log alpha frozen at log(cfg.alpha),
/// zero (or constant f0) start. Classification uses `gated` to route the
/// gradient through the label-gated update.
EncoderParams encoder_params(ParamStore& store, const Config& cfg, std::size_t x_dim, std::size_t y_dim,
                             bool gated = false);
/// r^(0..T) at context+query rows computed by the encoder under encoder_params.
std::vector<Tensor> encoder_trajectory(const Config& cfg, const Tensor& context_x, const Tensor& context_y,
                                       const Tensor& query_x, bool gated = false);

}  // namespace metafun::fgd
