#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "metafun/rng.hpp"
#include "metafun/tensor.hpp"

namespace metafun {

enum class Split { train, val, test };
const char* split_name(Split split);

// ------------------------------------------------------------- regression

struct RegressionTask {
  Tensor context_x, context_y;  // [|C|,1]
  Tensor target_x, target_y;    // [|T|,1]
  double amplitude = 0.0;
  double phase = 0.0;
  std::uint64_t draw_id = 0;
};

struct SinusoidConfig {
  double amplitude_min = 0.1, amplitude_max = 5.0;
  double phase_min = 0.0, phase_max = std::numbers::pi;
  double x_min = -5.0, x_max = 5.0;
};

/// y = A sin(x + b).
inline double sinusoid(double amplitude, double phase, double x) { return amplitude * std::sin(x + phase); }

RegressionTask sample_sinusoid_task(Rng& rng, std::size_t n_context, std::size_t n_target,
                                    const SinusoidConfig& cfg = {});

struct GpConfig {
  double lengthscale = 1.0;
  double signal_variance = 1.0;
  double noise_stddev = 0.1;
  double x_min = -2.0, x_max = 2.0;
  double jitter = 1e-8;
};

double gp_kernel(const GpConfig& cfg, double a, double b);

/// Joint prior draw of f at `x` (duplicated inputs receive identical values).
Tensor sample_gp_function(Rng& rng, const Tensor& x, const GpConfig& cfg);
/// Context and target from one GP draw with Gaussian observation noise.
RegressionTask sample_gp_task(Rng& rng, std::size_t n_context, std::size_t n_target, const GpConfig& cfg = {});

struct GpPosterior {
  Tensor mean;    // [m,1]
  Tensor stddev;  // [m,1], includes observation noise
};

/// Exact GP posterior predictive under the generating kernel and noise.
GpPosterior gp_oracle_predict(const Tensor& context_x, const Tensor& context_y, const Tensor& query_x,
                              const GpConfig& cfg = {});

// --------------------------------------------------------- classification

struct ClassificationEpisode {
  std::size_t ways = 0, shots = 0, targets_per_class = 0;
  Tensor context_x, context_y;  // [N*K, d], one-hot [N*K, N]
  Tensor target_x, target_y;    // [N*M, d], one-hot [N*M, N]
  std::vector<std::size_t> context_labels, target_labels;  // episode-local ids 0..N-1
  std::vector<std::size_t> class_ids;                       // original class id of each local id
  std::vector<std::size_t> context_examples, target_examples;  // example indices within class (feature episodes)
};

/// N Gaussian clusters with centres at pairwise distance >= margin * cluster_std.
ClassificationEpisode sample_cluster_episode(Rng& rng, std::size_t ways, std::size_t shots,
                                             std::size_t targets_per_class, std::size_t dim, double margin,
                                             double cluster_std = 1.0);

/// Centres with pairwise distance >= margin * cluster_std: [n, dim].
Tensor sample_cluster_centers(Rng& rng, std::size_t n, std::size_t dim, double margin, double cluster_std = 1.0);

struct FeatureDataset {
  std::vector<Tensor> classes;  // per class [examples, dim]
  std::size_t dim = 0;
  Split split = Split::train;
};

/// Writes the little-endian "MFUN1" feature file.
void save_feature_dataset(const std::string& path, const FeatureDataset& ds);
FeatureDataset load_feature_dataset(const std::string& path, Split split = Split::train);
/// Cluster-structured synthetic features (margin 5 between class centres).
FeatureDataset generate_cluster_features(Rng& rng, std::size_t classes, std::size_t dim, std::size_t per_class,
                                         double margin = 5.0);
ClassificationEpisode sample_feature_episode(const FeatureDataset& ds, Rng& rng, std::size_t ways, std::size_t shots,
                                             std::size_t targets_per_class);

// ------------------------------------------------------------- samplers

enum class TaskKind { regression, classification };

/// What a training or evaluation loop consumes.
struct Episode {
  TaskKind kind = TaskKind::regression;
  Tensor context_x, context_y, target_x, target_y;
  std::size_t ways = 0;
};

Episode to_episode(const RegressionTask& task);
Episode to_episode(const ClassificationEpisode& ep);

class EpisodeSampler {
 public:
  virtual ~EpisodeSampler() = default;
  virtual Episode sample(Rng& rng, Split split) const = 0;
  virtual TaskKind kind() const = 0;
  virtual std::size_t x_dim() const = 0;
  /// dim(y) for regression, number of classes for classification.
  virtual std::size_t y_dim() const = 0;
  virtual std::string name() const = 0;
};

struct SinusoidSamplerConfig {
  std::size_t context_min = 5, context_max = 5;
  std::size_t n_target = 10;
  SinusoidConfig task;
};

struct GpSamplerConfig {
  std::size_t context_min = 1, context_max = 20;
  std::size_t n_target = 20;
  GpConfig task;
};

struct ClusterSamplerConfig {
  std::size_t ways = 5, shots = 5, targets_per_class = 15, dim = 16;
  double margin = 5.0;
};

std::unique_ptr<EpisodeSampler> make_sinusoid_sampler(SinusoidSamplerConfig cfg);
std::unique_ptr<EpisodeSampler> make_gp_sampler(GpSamplerConfig cfg);
std::unique_ptr<EpisodeSampler> make_cluster_sampler(ClusterSamplerConfig cfg);
/// Episodes from per-split feature datasets (`val`/`test` fall back to `train` when empty).
std::unique_ptr<EpisodeSampler> make_feature_sampler(FeatureDataset train, FeatureDataset val, FeatureDataset test,
                                                     std::size_t ways, std::size_t shots,
                                                     std::size_t targets_per_class);

}  // namespace metafun
