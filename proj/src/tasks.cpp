#include "metafun/tasks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "metafun/errors.hpp"

namespace metafun {

const char* split_name(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

// ------------------------------------------------------------- regression

RegressionTask sample_sinusoid_task(Rng& rng, std::size_t n_context, std::size_t n_target, const SinusoidConfig& cfg) {
  if (n_context < 1) throw ConfigError("sinusoid task: need at least one context point");
  RegressionTask task;
  task.amplitude = rng.uniform(cfg.amplitude_min, cfg.amplitude_max);
  task.phase = rng.uniform(cfg.phase_min, cfg.phase_max);
  auto fill = [&](Tensor& x, Tensor& y, std::size_t n) {
    x = Tensor::matrix(n, 1);
    y = Tensor::matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.uniform(cfg.x_min, cfg.x_max);
      y[i] = sinusoid(task.amplitude, task.phase, x[i]);
    }
  };
  fill(task.context_x, task.context_y, n_context);
  fill(task.target_x, task.target_y, n_target);
  return task;
}

double gp_kernel(const GpConfig& cfg, double a, double b) {
  const double d = a - b;
  return cfg.signal_variance * std::exp(-0.5 * d * d / (cfg.lengthscale * cfg.lengthscale));
}

namespace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

Eigen::LLT<Matrix> factor(const Matrix& k, const char* what) {
  Eigen::LLT<Matrix> llt(k);
  if (llt.info() != Eigen::Success) throw NumericError(std::string(what) + ": Gram matrix not positive definite");
  return llt;
}

}  // namespace

Tensor sample_gp_function(Rng& rng, const Tensor& x, const GpConfig& cfg) {
  if (x.cols() != 1) throw DimensionError("sample_gp_function: inputs must be one-dimensional");
  // Draw once per distinct input so duplicates share a value exactly.
  std::vector<double> unique;
  std::vector<std::size_t> index(x.rows());
  std::map<double, std::size_t> seen;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto [it, inserted] = seen.emplace(x[i], unique.size());
    if (inserted) unique.push_back(x[i]);
    index[i] = it->second;
  }
  const auto n = static_cast<Eigen::Index>(unique.size());
  Matrix k(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) k(i, j) = gp_kernel(cfg, unique[i], unique[j]) + (i == j ? cfg.jitter : 0.0);
  const auto llt = factor(k, "sample_gp_function");
  Vector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = rng.normal();
  const Vector f = llt.matrixL() * z;
  Tensor out = Tensor::matrix(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = f(static_cast<Eigen::Index>(index[i]));
  return out;
}

RegressionTask sample_gp_task(Rng& rng, std::size_t n_context, std::size_t n_target, const GpConfig& cfg) {
  if (n_context < 1) throw ConfigError("gp task: need at least one context point");
  const std::size_t n = n_context + n_target;
  Tensor x = Tensor::matrix(n, 1);
  for (double& v : x.elems()) v = rng.uniform(cfg.x_min, cfg.x_max);
  Tensor y = sample_gp_function(rng, x, cfg);
  for (double& v : y.elems()) v += cfg.noise_stddev * rng.normal();
  RegressionTask task;
  task.draw_id = rng.next_u64();
  task.context_x = slice_rows(x, 0, n_context);
  task.context_y = slice_rows(y, 0, n_context);
  task.target_x = slice_rows(x, n_context, n_target);
  task.target_y = slice_rows(y, n_context, n_target);
  return task;
}

GpPosterior gp_oracle_predict(const Tensor& context_x, const Tensor& context_y, const Tensor& query_x,
                              const GpConfig& cfg) {
  if (context_x.rows() == 0) throw DataError("gp_oracle_predict: empty context");
  if (context_x.cols() != 1 || query_x.cols() != 1 || context_y.cols() != 1) {
    throw DimensionError("gp_oracle_predict: inputs and outputs must be one-dimensional");
  }
  const auto n = static_cast<Eigen::Index>(context_x.rows());
  const double noise_var = cfg.noise_stddev * cfg.noise_stddev;
  Matrix k(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      k(i, j) = gp_kernel(cfg, context_x[i], context_x[j]) + (i == j ? noise_var + cfg.jitter : 0.0);
  const auto llt = factor(k, "gp_oracle_predict");
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = context_y[i];
  const Vector weights = llt.solve(y);

  GpPosterior post{Tensor::matrix(query_x.rows(), 1), Tensor::matrix(query_x.rows(), 1)};
  Vector ks(n);
  for (std::size_t q = 0; q < query_x.rows(); ++q) {
    for (Eigen::Index i = 0; i < n; ++i) ks(i) = gp_kernel(cfg, query_x[q], context_x[i]);
    post.mean[q] = ks.dot(weights);
    const Vector v = llt.matrixL().solve(ks);
    const double var = gp_kernel(cfg, query_x[q], query_x[q]) - v.squaredNorm() + noise_var;
    post.stddev[q] = std::sqrt(std::max(var, 0.0));
  }
  return post;
}

// --------------------------------------------------------- classification

namespace {

void one_hot(Tensor& y, std::size_t row, std::size_t label) { y(row, label) = 1.0; }

}  // namespace

Tensor sample_cluster_centers(Rng& rng, std::size_t n, std::size_t dim, double margin, double cluster_std) {
  if (dim == 0) throw ConfigError("cluster centres: dimension must be positive");
  // Isotropic normal centres whose typical pairwise distance is 1.5 * margin;
  // candidates closer than the margin to an accepted centre are redrawn.
  const double min_dist = margin * cluster_std;
  const double spread = 1.5 * min_dist / std::sqrt(2.0 * static_cast<double>(dim));
  Tensor centers = Tensor::matrix(n, dim);
  std::size_t attempts = 0;
  for (std::size_t c = 0; c < n;) {
    if (++attempts > 1000) {
      throw ConfigError("cluster centres: could not place " + std::to_string(n) + " centres in 1000 attempts");
    }
    for (std::size_t t = 0; t < dim; ++t) centers(c, t) = spread * rng.normal();
    bool ok = true;
    for (std::size_t o = 0; o < c && ok; ++o) {
      double d2 = 0.0;
      for (std::size_t t = 0; t < dim; ++t) d2 += (centers(c, t) - centers(o, t)) * (centers(c, t) - centers(o, t));
      ok = std::sqrt(d2) >= min_dist;
    }
    if (ok) ++c;
  }
  return centers;
}

ClassificationEpisode sample_cluster_episode(Rng& rng, std::size_t ways, std::size_t shots,
                                             std::size_t targets_per_class, std::size_t dim, double margin,
                                             double cluster_std) {
  if (ways < 2) throw ConfigError("cluster episode: need at least 2 classes");
  if (shots < 1) throw ConfigError("cluster episode: need at least one shot");
  const Tensor centers = sample_cluster_centers(rng, ways, dim, margin, cluster_std);
  ClassificationEpisode ep;
  ep.ways = ways;
  ep.shots = shots;
  ep.targets_per_class = targets_per_class;
  ep.context_x = Tensor::matrix(ways * shots, dim);
  ep.context_y = Tensor::matrix(ways * shots, ways);
  ep.target_x = Tensor::matrix(ways * targets_per_class, dim);
  ep.target_y = Tensor::matrix(ways * targets_per_class, ways);
  for (std::size_t k = 0; k < ways; ++k) {
    ep.class_ids.push_back(k);
    for (std::size_t s = 0; s < shots + targets_per_class; ++s) {
      const bool is_context = s < shots;
      const std::size_t row = is_context ? k * shots + s : k * targets_per_class + (s - shots);
      Tensor& x = is_context ? ep.context_x : ep.target_x;
      for (std::size_t t = 0; t < dim; ++t) x(row, t) = centers(k, t) + cluster_std * rng.normal();
      one_hot(is_context ? ep.context_y : ep.target_y, row, k);
      (is_context ? ep.context_labels : ep.target_labels).push_back(k);
      (is_context ? ep.context_examples : ep.target_examples).push_back(s);
    }
  }
  return ep;
}

// ---- feature files

namespace {

constexpr std::array<char, 5> kMagic{'M', 'F', 'U', 'N', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_f32(std::ostream& os, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  write_u32(os, bits);
}

std::uint32_t read_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("feature file " + path + ": truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float read_f32(std::istream& is, const std::string& path) {
  const std::uint32_t bits = read_u32(is, path);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace

void save_feature_dataset(const std::string& path, const FeatureDataset& ds) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os.write(kMagic.data(), kMagic.size());
  write_u32(os, static_cast<std::uint32_t>(ds.classes.size()));
  write_u32(os, static_cast<std::uint32_t>(ds.dim));
  for (const Tensor& c : ds.classes) {
    if (c.rows() > 0 && c.cols() != ds.dim) throw DimensionError("save_feature_dataset: class width != dim");
    write_u32(os, static_cast<std::uint32_t>(c.rows()));
    for (double v : c.elems()) write_f32(os, static_cast<float>(v));
  }
  if (!os) throw DataError("write failed: " + path);
}

FeatureDataset load_feature_dataset(const std::string& path, Split split) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open feature file " + path);
  std::array<char, 5> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) throw DataError("feature file " + path + ": bad magic");
  FeatureDataset ds;
  ds.split = split;
  const std::uint32_t classes = read_u32(is, path);
  ds.dim = read_u32(is, path);
  if (ds.dim == 0) throw DataError("feature file " + path + ": zero feature dimension");
  for (std::uint32_t c = 0; c < classes; ++c) {
    const std::uint32_t count = read_u32(is, path);
    Tensor t = Tensor::matrix(count, ds.dim);
    for (double& v : t.elems()) v = read_f32(is, path);
    ds.classes.push_back(std::move(t));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("feature file " + path + ": trailing bytes");
  return ds;
}

FeatureDataset generate_cluster_features(Rng& rng, std::size_t classes, std::size_t dim, std::size_t per_class,
                                         double margin) {
  if (classes == 0) throw ConfigError("gen-features: need at least one class");
  if (dim == 0) throw ConfigError("gen-features: dimension must be positive");
  const Tensor centers = sample_cluster_centers(rng, classes, dim, margin);
  FeatureDataset ds;
  ds.dim = dim;
  for (std::size_t c = 0; c < classes; ++c) {
    Tensor t = Tensor::matrix(per_class, dim);
    for (std::size_t i = 0; i < per_class; ++i)
      for (std::size_t d = 0; d < dim; ++d) t(i, d) = centers(c, d) + rng.normal();
    ds.classes.push_back(std::move(t));
  }
  return ds;
}

ClassificationEpisode sample_feature_episode(const FeatureDataset& ds, Rng& rng, std::size_t ways, std::size_t shots,
                                             std::size_t targets_per_class) {
  if (ways < 2) throw ConfigError("feature episode: need at least 2 classes");
  if (ways > ds.classes.size()) throw DataError("feature episode: dataset has fewer classes than ways");
  ClassificationEpisode ep;
  ep.ways = ways;
  ep.shots = shots;
  ep.targets_per_class = targets_per_class;
  ep.class_ids = rng.sample_without_replacement(ds.classes.size(), ways);
  ep.context_x = Tensor::matrix(ways * shots, ds.dim);
  ep.context_y = Tensor::matrix(ways * shots, ways);
  ep.target_x = Tensor::matrix(ways * targets_per_class, ds.dim);
  ep.target_y = Tensor::matrix(ways * targets_per_class, ways);
  for (std::size_t k = 0; k < ways; ++k) {
    const Tensor& cls = ds.classes[ep.class_ids[k]];
    if (shots + targets_per_class > cls.rows()) {
      throw DataError("feature episode: class " + std::to_string(ep.class_ids[k]) + " has " +
                      std::to_string(cls.rows()) + " examples, need " + std::to_string(shots + targets_per_class));
    }
    const auto picks = rng.sample_without_replacement(cls.rows(), shots + targets_per_class);
    for (std::size_t s = 0; s < picks.size(); ++s) {
      const bool is_context = s < shots;
      const std::size_t row = is_context ? k * shots + s : k * targets_per_class + (s - shots);
      Tensor& x = is_context ? ep.context_x : ep.target_x;
      std::copy_n(cls.data() + picks[s] * ds.dim, ds.dim, x.data() + row * ds.dim);
      one_hot(is_context ? ep.context_y : ep.target_y, row, k);
      (is_context ? ep.context_labels : ep.target_labels).push_back(k);
      (is_context ? ep.context_examples : ep.target_examples).push_back(picks[s]);
    }
  }
  return ep;
}

// ------------------------------------------------------------- samplers

Episode to_episode(const RegressionTask& task) {
  return {TaskKind::regression, task.context_x, task.context_y, task.target_x, task.target_y, 0};
}

Episode to_episode(const ClassificationEpisode& ep) {
  return {TaskKind::classification, ep.context_x, ep.context_y, ep.target_x, ep.target_y, ep.ways};
}

namespace {

std::size_t draw_count(Rng& rng, std::size_t lo, std::size_t hi) {
  if (lo > hi) throw ConfigError("context size range is empty");
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

class SinusoidSampler final : public EpisodeSampler {
 public:
  explicit SinusoidSampler(SinusoidSamplerConfig cfg) : cfg_(cfg) {}
  Episode sample(Rng& rng, Split) const override {
    const std::size_t nc = draw_count(rng, cfg_.context_min, cfg_.context_max);
    return to_episode(sample_sinusoid_task(rng, nc, cfg_.n_target, cfg_.task));
  }
  TaskKind kind() const override { return TaskKind::regression; }
  std::size_t x_dim() const override { return 1; }
  std::size_t y_dim() const override { return 1; }
  std::string name() const override { return "sinusoid"; }

 private:
  SinusoidSamplerConfig cfg_;
};

class GpSampler final : public EpisodeSampler {
 public:
  explicit GpSampler(GpSamplerConfig cfg) : cfg_(cfg) {}
  Episode sample(Rng& rng, Split) const override {
    const std::size_t nc = draw_count(rng, cfg_.context_min, cfg_.context_max);
    return to_episode(sample_gp_task(rng, nc, cfg_.n_target, cfg_.task));
  }
  TaskKind kind() const override { return TaskKind::regression; }
  std::size_t x_dim() const override { return 1; }
  std::size_t y_dim() const override { return 1; }
  std::string name() const override { return "gp"; }

 private:
  GpSamplerConfig cfg_;
};

class ClusterSampler final : public EpisodeSampler {
 public:
  explicit ClusterSampler(ClusterSamplerConfig cfg) : cfg_(cfg) {}
  Episode sample(Rng& rng, Split) const override {
    return to_episode(sample_cluster_episode(rng, cfg_.ways, cfg_.shots, cfg_.targets_per_class, cfg_.dim, cfg_.margin));
  }
  TaskKind kind() const override { return TaskKind::classification; }
  std::size_t x_dim() const override { return cfg_.dim; }
  std::size_t y_dim() const override { return cfg_.ways; }
  std::string name() const override { return "clusters"; }

 private:
  ClusterSamplerConfig cfg_;
};

class FeatureSampler final : public EpisodeSampler {
 public:
  FeatureSampler(FeatureDataset train, FeatureDataset val, FeatureDataset test, std::size_t ways, std::size_t shots,
                 std::size_t m)
      : train_(std::move(train)), val_(std::move(val)), test_(std::move(test)), ways_(ways), shots_(shots), m_(m) {
    for (const FeatureDataset* ds : {&val_, &test_})
      if (!ds->classes.empty() && ds->dim != train_.dim) throw DataError("feature splits differ in dimension");
  }
  Episode sample(Rng& rng, Split split) const override {
    const FeatureDataset* ds = &train_;
    if (split == Split::val && !val_.classes.empty()) ds = &val_;
    if (split == Split::test && !test_.classes.empty()) ds = &test_;
    return to_episode(sample_feature_episode(*ds, rng, ways_, shots_, m_));
  }
  TaskKind kind() const override { return TaskKind::classification; }
  std::size_t x_dim() const override { return train_.dim; }
  std::size_t y_dim() const override { return ways_; }
  std::string name() const override { return "features"; }

 private:
  FeatureDataset train_, val_, test_;
  std::size_t ways_, shots_, m_;
};

}  // namespace

std::unique_ptr<EpisodeSampler> make_sinusoid_sampler(SinusoidSamplerConfig cfg) {
  return std::make_unique<SinusoidSampler>(cfg);
}
std::unique_ptr<EpisodeSampler> make_gp_sampler(GpSamplerConfig cfg) { return std::make_unique<GpSampler>(cfg); }
std::unique_ptr<EpisodeSampler> make_cluster_sampler(ClusterSamplerConfig cfg) {
  return std::make_unique<ClusterSampler>(cfg);
}
std::unique_ptr<EpisodeSampler> make_feature_sampler(FeatureDataset train, FeatureDataset val, FeatureDataset test,
                                                     std::size_t ways, std::size_t shots,
                                                     std::size_t targets_per_class) {
  return std::make_unique<FeatureSampler>(std::move(train), std::move(val), std::move(test), ways, shots,
                                          targets_per_class);
}

}  // namespace metafun
