#pragma once

#include <optional>
#include <string>
#include <vector>

#include "metafun/graph.hpp"
#include "metafun/mlp.hpp"

namespace metafun {

enum class PoolingMode { kernel, attention };

struct PoolingConfig {
  PoolingMode mode = PoolingMode::attention;
  /// Layer widths of the embedding net a (input width excluded); the last
  /// entry is d_k. Ignored when `embedding_identity` is set.
  std::vector<std::size_t> embed_widths{128, 128, 128};
  /// Squared-exponential ablation: a is the identity and d_k = dim(x).
  bool embedding_identity = false;
  /// Initial RBF lengthscale (kernel mode).
  double lengthscale = 1.0;
  bool train_lengthscale = true;
};

/// Functional pooling: aggregates per-key values into a function evaluated at
/// the queries, weighting each key by its similarity to the query.
class Pooling {
 public:
  Pooling() = default;

  static Pooling create(ParamStore& store, const std::string& name, PoolingConfig config, std::size_t input_dim,
                        Rng& rng);

  /// Rows a(x_1)..a(x_m).
  Var embed(Graph& g, Var x) const;
  /// k_rbf(a(x'), a(x)) V
  Var kfp(Graph& g, Var queries, Var keys, Var values) const;
  /// softmax(a(x') a(x)^T / sqrt(d_k)) V
  Var dfp(Graph& g, Var queries, Var keys, Var values) const;
  /// Dispatch on the configured mode (inputs are raw x).
  Var fun_pool(Graph& g, Var queries, Var keys, Var values) const;
  /// Same as fun_pool, for queries and keys that are already embedded.
  Var pool_embedded(Graph& g, Var query_features, Var key_features, Var values) const;
  /// Similarity weights between embedded queries and keys.
  Var weights(Graph& g, Var query_features, Var key_features) const;

  const PoolingConfig& config() const noexcept { return config_; }
  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t key_dim() const noexcept { return key_dim_; }
  const std::optional<Mlp>& embedding() const noexcept { return embedding_; }
  std::optional<ParamId> log_lengthscale() const noexcept { return log_lengthscale_; }

 private:
  PoolingConfig config_;
  std::size_t input_dim_ = 0;
  std::size_t key_dim_ = 0;
  std::optional<Mlp> embedding_;
  std::optional<ParamId> log_lengthscale_;
};

}  // namespace metafun
