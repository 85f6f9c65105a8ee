#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "metafun/decoders.hpp"
#include "metafun/encoder.hpp"
#include "metafun/graph.hpp"
#include "metafun/pooling.hpp"
#include "metafun/rng.hpp"
#include "metafun/tasks.hpp"

namespace metafun {

enum class UpdaterMode { nn, gradient };

/// Decoder selection; `automatic` picks hypernet / LEO for the NN updater
/// and the identity (decoder-less) form for the gradient updater.
enum class DecoderChoice { automatic, hypernet, concat, identity, leo };

struct TrainConfig {
  std::size_t num_iters = 5;
  std::size_t nn_layers = 3;
  std::size_t nn_sizes = 128;
  std::size_t embedding_layers = 3;
  std::size_t dim_reprs = 0;  // 0: same as nn_sizes
  InitMode init_mode = InitMode::zero;
  double outer_lr = 1e-4;
  double initial_inner_lr = 0.1;
  double dropout_rate = 0.0;
  double l2_weight = 0.0;
  double orthogonality_penalty_weight = 0.0;  // reserved, must stay 0
  double label_smoothing = 0.0;
  std::size_t meta_batch_size = 16;
  std::size_t max_steps = 10000;
  std::size_t eval_every = 500;
  std::size_t eval_episodes = 200;
  std::size_t patience = 10;  // evaluation periods without improvement; 0 disables
  std::uint64_t seed = 0;

  PoolingMode pooling = PoolingMode::attention;
  bool embedding_identity = false;
  double lengthscale = 1.0;
  bool train_lengthscale = true;

  UpdaterMode updater = UpdaterMode::nn;
  DecoderChoice decoder = DecoderChoice::automatic;
  bool gaussian_head = false;
  /// Hidden widths of the hypernetwork's predictive model; empty means
  /// nn_layers - 1 layers of nn_sizes.
  std::vector<std::size_t> predictive_sizes;
  std::size_t classifier_hidden_layers = 0;

  std::size_t repr_width() const { return dim_reprs == 0 ? nn_sizes : dim_reprs; }
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Every learnable tensor plus the structure that consumes it.
struct Model {
  TrainConfig config;
  TaskKind kind = TaskKind::regression;
  std::size_t x_dim = 1;
  std::size_t y_dim = 1;  // classes for classification
  ParamStore store;
  EncoderParams encoder;
  std::optional<RegressionDecoder> regression;
  std::optional<ClassificationDecoder> classification;
};

/// Parameters are initialised from a stream derived from `config.seed`.
Model build_model(const TrainConfig& config, TaskKind kind, std::size_t x_dim, std::size_t y_dim);

enum class Phase { train, eval };

/// Training: zero each entry independently with probability `rate` and scale
/// survivors by 1/(1-rate). Evaluation: identity.
Tensor input_dropout(const Tensor& x, double rate, Rng& rng, Phase phase);

/// (1-s) y + s/K row-wise.
Tensor smooth_labels(const Tensor& y, double smoothing);

struct EpisodeOutput {
  Var loss;                      // mean per-target loss, [1,1]
  Var prediction;                // regression mean [|T|,d_y] or class probabilities [|T|,K]
  std::optional<Var> stddev;     // Gaussian head only
};

/// Encode the context, decode at the targets and score against the target
/// labels. Training phase applies input dropout and reparameterized sampling
/// using `rng`.
EpisodeOutput episode_forward(Graph& g, const Model& model, const Episode& episode, Phase phase, Rng& rng);

/// Per-episode metrics; names are "loss", "mse", "nll", "accuracy".
struct EpisodeMetrics {
  double loss = 0.0;
  std::optional<double> mse, nll, accuracy;
};
EpisodeMetrics episode_metrics(const Model& model, const Episode& episode, const EpisodeOutput& out);

struct BatchGradient {
  double loss = 0.0;               // mean episode loss (without L2)
  std::vector<Tensor> grads;       // one per ParamId, averaged over episodes
  std::vector<double> episode_losses;
};

/// Episode b of `episodes` uses Rng(seeds[b]) for its stochastic parts.
/// Episodes run concurrently and are reduced in index order.
BatchGradient meta_batch_gradient(const Model& model, const std::vector<Episode>& episodes,
                                  const std::vector<std::uint64_t>& seeds);
/// Single-threaded version with identical arithmetic.
BatchGradient meta_batch_gradient_serial(const Model& model, const std::vector<Episode>& episodes,
                                         const std::vector<std::uint64_t>& seeds);

/// Sum of squares of all parameters.
double l2_norm_squared(const ParamStore& store);

struct MetricRecord {
  std::size_t step = 0;
  std::string split;
  std::string metric;
  double value = 0.0;
};

struct MetricSummary {
  std::string metric;
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation over episodes
};

struct Evaluation {
  std::vector<MetricSummary> metrics;
  std::size_t episodes = 0;
  const MetricSummary& get(const std::string& name) const;
  const MetricSummary* find(const std::string& name) const;
};

/// Episode i is drawn with Rng(derive_seed(seed, i)); dropout off, mean-mode
/// classification decoder.
Evaluation evaluate(const Model& model, const EpisodeSampler& sampler, std::size_t n_episodes, std::uint64_t seed,
                    Split split = Split::test);

/// Metric used for model selection and whether larger is better.
std::string selection_metric(const Model& model);
bool higher_is_better(const std::string& metric);

struct TrainResult {
  Model model;  // best-validation parameters
  std::vector<MetricRecord> log;
  std::size_t steps_run = 0;
  std::size_t best_step = 0;
  double best_value = 0.0;
  bool early_stopped = false;
};

using ProgressFn = std::function<void(const MetricRecord&)>;

/// Adam on mean episode loss + l2_weight * |phi|^2 over meta-batches drawn
/// from `sampler`. Raises NumericError on a non-finite loss.
TrainResult meta_train(Model model, const EpisodeSampler& sampler, const ProgressFn& progress = {});

struct Prediction {
  Tensor mean;
  std::optional<Tensor> stddev;
};
/// Deterministic prediction at `query_x` for one context set (regression).
Prediction predict_regression(const Model& model, const Tensor& context_x, const Tensor& context_y,
                              const Tensor& query_x);

std::string metric_record_json(const MetricRecord& record);
void write_metrics_jsonl(const std::string& path, const std::vector<MetricRecord>& records);

/// Binary checkpoint: magic, config hash, scalar count, then float64 values
/// in parameter enumeration order.
void save_checkpoint(const std::string& path, const ParamStore& store, std::uint64_t config_hash);
struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::vector<double> values;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace metafun
