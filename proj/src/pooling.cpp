#include "metafun/pooling.hpp"

#include <cmath>

#include "metafun/errors.hpp"

namespace metafun {

Pooling Pooling::create(ParamStore& store, const std::string& name, PoolingConfig config, std::size_t input_dim,
                        Rng& rng) {
  if (input_dim == 0) throw ConfigError("pooling: input dimension must be positive");
  Pooling p;
  p.input_dim_ = input_dim;
  if (config.embedding_identity) {
    p.key_dim_ = input_dim;
  } else {
    if (config.embed_widths.empty()) throw ConfigError("pooling: embedding needs at least one layer");
    std::vector<std::size_t> widths{input_dim};
    widths.insert(widths.end(), config.embed_widths.begin(), config.embed_widths.end());
    p.embedding_ = Mlp::create(store, name + ".embed", widths, rng);
    p.key_dim_ = widths.back();
  }
  if (p.key_dim_ < 1) throw ConfigError("pooling: d_k must be at least 1");
  switch (config.mode) {
    case PoolingMode::kernel:
      if (!(config.lengthscale > 0.0)) throw ConfigError("pooling: lengthscale must be positive");
      p.log_lengthscale_ =
          store.add(name + ".log_lengthscale", Tensor::scalar(std::log(config.lengthscale)), config.train_lengthscale);
      break;
    case PoolingMode::attention:
      break;
    default:
      throw ConfigError("pooling: unknown mode");
  }
  p.config_ = std::move(config);
  return p;
}

Var Pooling::embed(Graph& g, Var x) const {
  if (x.cols() != input_dim_) {
    throw DimensionError("pooling.embed: input width " + std::to_string(x.cols()) + ", expected " +
                         std::to_string(input_dim_));
  }
  if (!embedding_) return x;
  return embedding_->apply(g, x);
}

Var Pooling::weights(Graph& g, Var query_features, Var key_features) const {
  switch (config_.mode) {
    case PoolingMode::kernel:
      return rbf_gram(query_features, key_features, g.param(*log_lengthscale_));
    case PoolingMode::attention:
      return softmax_rows(
          scale(matmul_nt(query_features, key_features), 1.0 / std::sqrt(static_cast<double>(key_dim_))));
  }
  throw ConfigError("pooling: unknown mode");
}

Var Pooling::pool_embedded(Graph& g, Var query_features, Var key_features, Var values) const {
  if (values.rows() != key_features.rows()) {
    throw DimensionError("pooling: " + std::to_string(values.rows()) + " values for " +
                         std::to_string(key_features.rows()) + " keys");
  }
  return matmul(weights(g, query_features, key_features), values);
}

Var Pooling::kfp(Graph& g, Var queries, Var keys, Var values) const {
  if (config_.mode != PoolingMode::kernel) throw ConfigError("pooling.kfp: configured for attention");
  return pool_embedded(g, embed(g, queries), embed(g, keys), values);
}

Var Pooling::dfp(Graph& g, Var queries, Var keys, Var values) const {
  if (config_.mode != PoolingMode::attention) throw ConfigError("pooling.dfp: configured for kernel");
  return pool_embedded(g, embed(g, queries), embed(g, keys), values);
}

Var Pooling::fun_pool(Graph& g, Var queries, Var keys, Var values) const {
  switch (config_.mode) {
    case PoolingMode::kernel:
      return kfp(g, queries, keys, values);
    case PoolingMode::attention:
      return dfp(g, queries, keys, values);
  }
  throw ConfigError("pooling: unknown mode");
}

}  // namespace metafun
