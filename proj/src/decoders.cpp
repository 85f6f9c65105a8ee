#include "metafun/decoders.hpp"

#include "metafun/errors.hpp"

namespace metafun {

std::size_t predictive_param_count(const std::vector<std::size_t>& widths) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += widths[l] * widths[l + 1] + widths[l + 1];
  return n;
}

RegressionDecoder make_regression_decoder(ParamStore& store, const std::string& name,
                                          const RegressionDecoderConfig& config, std::size_t repr_dim,
                                          std::size_t x_dim, std::size_t y_dim, Rng& rng) {
  RegressionDecoder dec;
  dec.mode = config.mode;
  dec.x_dim = x_dim;
  dec.y_dim = y_dim;
  dec.gaussian = config.gaussian;
  dec.sigma_min = config.sigma_min;
  if (!(dec.sigma_min > 0.0)) throw ConfigError("decoder: sigma_min must be positive");
  switch (config.mode) {
    case RegressionDecoderMode::hypernet: {
      dec.predictive_widths = {x_dim};
      dec.predictive_widths.insert(dec.predictive_widths.end(), config.predictive_hidden.begin(),
                                   config.predictive_hidden.end());
      dec.predictive_widths.push_back(dec.raw_out_dim());
      const std::size_t count = predictive_param_count(dec.predictive_widths);
      dec.net = Mlp::create(store, name + ".weight_gen", mlp_widths(repr_dim, config.width, config.layers, count), rng);
      break;
    }
    case RegressionDecoderMode::concat:
      dec.net = Mlp::create(store, name + ".concat",
                            mlp_widths(x_dim + repr_dim, config.width, config.layers, dec.raw_out_dim()), rng);
      break;
    case RegressionDecoderMode::identity:
      if (repr_dim != dec.raw_out_dim()) throw ConfigError("identity decoder: d_r must equal the output width");
      break;
  }
  return dec;
}

Var decode_regression_raw(Graph& g, const RegressionDecoder& dec, Var r, Var x) {
  if (r.rows() != x.rows()) throw DimensionError("decode_regression: r/x row mismatch");
  if (x.cols() != dec.x_dim) throw DimensionError("decode_regression: x width mismatch");
  switch (dec.mode) {
    case RegressionDecoderMode::hypernet: {
      Var w = dec.net->apply(g, r);
      const auto& widths = dec.predictive_widths;
      if (w.cols() != predictive_param_count(widths)) {
        throw ConfigError("decode_regression: generated parameter count does not match the predictive model");
      }
      Var h = x;
      std::size_t off = 0;
      for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t in = widths[l], out = widths[l + 1];
        h = rowwise_linear(h, slice_cols(w, off, in * out));
        off += in * out;
        h = add(h, slice_cols(w, off, out));
        off += out;
        if (l + 2 < widths.size()) h = relu(h);
      }
      return h;
    }
    case RegressionDecoderMode::concat: {
      const Var parts[] = {x, r};
      return dec.net->apply(g, concat_cols(parts));
    }
    case RegressionDecoderMode::identity:
      if (r.cols() != dec.raw_out_dim()) throw DimensionError("identity decoder: repr width mismatch");
      return r;
  }
  throw ConfigError("decode_regression: unknown mode");
}

Var decode_regression(Graph& g, const RegressionDecoder& dec, Var r, Var x) {
  Var raw = decode_regression_raw(g, dec, r, x);
  return dec.gaussian ? slice_cols(raw, 0, dec.y_dim) : raw;
}

GaussianPrediction decode_regression_gaussian(Graph& g, const RegressionDecoder& dec, Var r, Var x) {
  if (!dec.gaussian) throw ConfigError("decode_regression_gaussian: decoder has no uncertainty head");
  Var raw = decode_regression_raw(g, dec, r, x);
  Var mu = slice_cols(raw, 0, dec.y_dim);
  Var sigma = add_scalar(softplus(slice_cols(raw, dec.y_dim, dec.y_dim)), dec.sigma_min);
  return {mu, sigma};
}

ClassificationDecoder make_classification_decoder(ParamStore& store, const std::string& name,
                                                  const ClassificationDecoderConfig& config, std::size_t ways,
                                                  std::size_t class_dim, std::size_t feature_dim, Rng& rng) {
  if (ways < 2) throw ConfigError("classification decoder: need at least 2 classes");
  ClassificationDecoder dec;
  dec.mode = config.mode;
  dec.ways = ways;
  dec.class_dim = class_dim;
  dec.feature_dim = feature_dim;
  if (config.mode == ClassificationDecoderMode::leo) {
    const auto widths = mlp_widths(class_dim, config.width, config.hidden_layers, feature_dim);
    dec.mu_net = Mlp::create(store, name + ".mu", widths, rng);
    dec.sigma_net = Mlp::create(store, name + ".sigma", widths, rng);
  } else if (class_dim != 1) {
    throw ConfigError("identity classification decoder: each class block must be a single logit");
  }
  return dec;
}

Var decode_classification_logits(Graph& g, const ClassificationDecoder& dec, Var r, Var x, SampleMode mode,
                                 Rng* rng, const Tensor* noise) {
  if (dec.ways < 2) throw ConfigError("decode_classification: need at least 2 classes");
  if (r.cols() != dec.ways * dec.class_dim) throw DimensionError("decode_classification: repr width mismatch");
  if (dec.mode == ClassificationDecoderMode::identity) return r;
  if (x.cols() != dec.feature_dim || x.rows() != r.rows()) throw DimensionError("decode_classification: x shape");
  const std::size_t m = r.rows();
  Var blocks = reshape(r, m * dec.ways, dec.class_dim);
  Var w = dec.mu_net->apply(g, blocks);
  if (mode == SampleMode::reparameterized) {
    Var sigma = softplus(dec.sigma_net->apply(g, blocks));
    Tensor eps;
    if (noise) {
      if (!noise->same_shape(w.value())) throw DimensionError("decode_classification: noise shape");
      eps = *noise;
    } else {
      if (!rng) throw UsageError("decode_classification: reparameterized sampling needs an rng");
      eps = Tensor(w.value().shape());
      for (double& v : eps.elems()) v = rng->normal();
    }
    w = add(w, mul(sigma, g.constant(std::move(eps))));
  }
  return rowwise_linear(x, reshape(w, m, dec.ways * dec.feature_dim));
}

Var decode_classification(Graph& g, const ClassificationDecoder& dec, Var r, Var x, SampleMode mode, Rng* rng,
                          const Tensor* noise) {
  return softmax_rows(decode_classification_logits(g, dec, r, x, mode, rng, noise));
}

}  // namespace metafun
