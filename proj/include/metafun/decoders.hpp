#pragma once

#include <optional>
#include <string>
#include <vector>

#include "metafun/graph.hpp"
#include "metafun/mlp.hpp"

namespace metafun {

enum class RegressionDecoderMode {
  hypernet,  // w = MLP(r(x)), y = f(x; w)
  concat,    // y = MLP([x, r(x)])
  identity,  // y = r(x)
};

struct RegressionDecoder {
  RegressionDecoderMode mode = RegressionDecoderMode::hypernet;
  std::optional<Mlp> net;                     // weight generator or concat net
  std::vector<std::size_t> predictive_widths; // f's widths, [d_x, ..., out] (hypernet)
  std::size_t x_dim = 1;
  std::size_t y_dim = 1;
  bool gaussian = false;
  double sigma_min = 1e-3;

  /// Width of the raw predictive output (2*d_y with the Gaussian head).
  std::size_t raw_out_dim() const { return gaussian ? 2 * y_dim : y_dim; }
};

struct RegressionDecoderConfig {
  RegressionDecoderMode mode = RegressionDecoderMode::hypernet;
  bool gaussian = false;
  double sigma_min = 1e-3;
  std::size_t width = 128;   // decoder net hidden width
  std::size_t layers = 3;    // decoder net hidden layers
  std::vector<std::size_t> predictive_hidden{128, 128};
};

/// Number of scalars needed to parameterise an MLP with these widths.
std::size_t predictive_param_count(const std::vector<std::size_t>& widths);

RegressionDecoder make_regression_decoder(ParamStore& store, const std::string& name,
                                          const RegressionDecoderConfig& config, std::size_t repr_dim,
                                          std::size_t x_dim, std::size_t y_dim, Rng& rng);

/// Raw predictive output rows for rows of r and x.
Var decode_regression_raw(Graph& g, const RegressionDecoder& dec, Var r, Var x);
/// Point prediction (mean for the Gaussian head).
Var decode_regression(Graph& g, const RegressionDecoder& dec, Var r, Var x);

struct GaussianPrediction {
  Var mean;
  Var stddev;  // softplus(s) + sigma_min
};
GaussianPrediction decode_regression_gaussian(Graph& g, const RegressionDecoder& dec, Var r, Var x);

enum class SampleMode { mean, reparameterized };
enum class ClassificationDecoderMode { leo, identity };

/// Class block r^k(x) -> w^k ~ N(mu(r^k), sigma(r^k)); logits_k = x^T w^k.
struct ClassificationDecoder {
  ClassificationDecoderMode mode = ClassificationDecoderMode::leo;
  std::optional<Mlp> mu_net;
  std::optional<Mlp> sigma_net;
  std::size_t ways = 0;
  std::size_t class_dim = 0;
  std::size_t feature_dim = 0;
};

struct ClassificationDecoderConfig {
  ClassificationDecoderMode mode = ClassificationDecoderMode::leo;
  std::size_t hidden_layers = 0;  // 0: linear mu / sigma maps
  std::size_t width = 64;
};

ClassificationDecoder make_classification_decoder(ParamStore& store, const std::string& name,
                                                  const ClassificationDecoderConfig& config, std::size_t ways,
                                                  std::size_t class_dim, std::size_t feature_dim, Rng& rng);

/// Logits [m, K]. Reparameterized mode draws eps from `rng` unless `noise`
/// ([m*K, d_x], class-major per row) is supplied.
Var decode_classification_logits(Graph& g, const ClassificationDecoder& dec, Var r, Var x, SampleMode mode,
                                 Rng* rng = nullptr, const Tensor* noise = nullptr);
/// Class probabilities [m, K].
Var decode_classification(Graph& g, const ClassificationDecoder& dec, Var r, Var x, SampleMode mode,
                          Rng* rng = nullptr, const Tensor* noise = nullptr);

}  // namespace metafun
