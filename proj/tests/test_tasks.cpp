#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "metafun/errors.hpp"
#include "metafun/tasks.hpp"

namespace metafun {
namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("metafun_test_" + name)).string();
}

TEST(Sinusoid, Values) {
  EXPECT_EQ(sinusoid(1.0, 0.0, 0.0), 0.0);
  EXPECT_NEAR(sinusoid(2.0, std::numbers::pi / 2, 0.0), 2.0, 1e-15);
}

TEST(Sinusoid, SampledRanges) {
  Rng rng(1);
  double amin = 1e9, amax = -1e9, bmin = 1e9, bmax = -1e9, xmin = 1e9, xmax = -1e9;
  for (int i = 0; i < 10000; ++i) {
    const RegressionTask t = sample_sinusoid_task(rng, 5, 10);
    amin = std::min(amin, t.amplitude);
    amax = std::max(amax, t.amplitude);
    bmin = std::min(bmin, t.phase);
    bmax = std::max(bmax, t.phase);
    for (const Tensor* x : {&t.context_x, &t.target_x}) {
      for (std::size_t k = 0; k < x->size(); ++k) {
        xmin = std::min(xmin, (*x)[k]);
        xmax = std::max(xmax, (*x)[k]);
      }
    }
    for (std::size_t k = 0; k < 5; ++k) ASSERT_EQ(t.context_y[k], sinusoid(t.amplitude, t.phase, t.context_x[k]));
    for (std::size_t k = 0; k < 10; ++k) ASSERT_EQ(t.target_y[k], sinusoid(t.amplitude, t.phase, t.target_x[k]));
  }
  EXPECT_GE(amin, 0.1);
  EXPECT_LT(amax, 5.0);
  EXPECT_GT(amax, 4.9);
  EXPECT_GE(bmin, 0.0);
  EXPECT_LT(bmax, std::numbers::pi);
  EXPECT_GE(xmin, -5.0);
  EXPECT_LT(xmax, 5.0);
  EXPECT_LT(xmin, -4.99);
}

TEST(Gp, NoiselessDuplicatedInputsAgree) {
  Rng rng(2);
  GpConfig cfg;
  cfg.noise_stddev = 0.0;
  const Tensor x = Tensor::from_rows({{0.3}, {-1.0}, {0.3}});
  const Tensor f = sample_gp_function(rng, x, cfg);
  EXPECT_EQ(f[0], f[2]);
  EXPECT_NE(f[0], f[1]);
}

TEST(Gp, MarginalVarianceAndCovarianceMatchKernel) {
  Rng rng(3);
  GpConfig cfg;
  const Tensor x = Tensor::from_rows({{0.0}, {0.8}});
  const int n = 10000;
  double s0 = 0, s1 = 0, s00 = 0, s11 = 0, s01 = 0;
  for (int i = 0; i < n; ++i) {
    const Tensor f = sample_gp_function(rng, x, cfg);
    s0 += f[0];
    s1 += f[1];
    s00 += f[0] * f[0];
    s11 += f[1] * f[1];
    s01 += f[0] * f[1];
  }
  const double var0 = s00 / n - (s0 / n) * (s0 / n);
  const double var1 = s11 / n - (s1 / n) * (s1 / n);
  const double cov = s01 / n - (s0 / n) * (s1 / n);
  // Var of the sample variance of N(0,1) is about 2/n.
  EXPECT_NEAR(var0, 1.0, 3 * std::sqrt(2.0 / n));
  EXPECT_NEAR(var1, 1.0, 3 * std::sqrt(2.0 / n));
  const double k01 = std::exp(-0.32);
  EXPECT_NEAR(cov, k01, 0.05 * k01);
  EXPECT_NEAR(gp_kernel(cfg, 0.0, 0.8), k01, 1e-15);
}

TEST(Gp, TaskObservationsCarryNoise) {
  Rng rng(4);
  GpConfig cfg;
  cfg.signal_variance = 1e-10;  // leaves the observation noise as the only spread
  double s2 = 0;
  std::size_t n = 0;
  for (int i = 0; i < 2000; ++i) {
    const RegressionTask t = sample_gp_task(rng, 3, 2, cfg);
    for (const Tensor* x : {&t.context_x, &t.target_x}) {
      for (std::size_t k = 0; k < x->size(); ++k) {
        EXPECT_GE((*x)[k], cfg.x_min);
        EXPECT_LT((*x)[k], cfg.x_max);
      }
    }
    for (const Tensor* y : {&t.context_y, &t.target_y}) {
      for (std::size_t k = 0; k < y->size(); ++k) {
        s2 += (*y)[k] * (*y)[k];
        ++n;
      }
    }
  }
  EXPECT_NEAR(s2 / n, 0.01, 0.01 * 4 * std::sqrt(2.0 / n));
}

TEST(GpOracle, InterpolationAndPriorReversion) {
  GpConfig tiny;
  tiny.noise_stddev = 1e-5;
  const Tensor cx = Tensor::from_rows({{-0.5}, {0.7}});
  const Tensor cy = Tensor::from_rows({{0.3}, {-1.2}});
  const GpPosterior at = gp_oracle_predict(cx, cy, cx, tiny);
  EXPECT_NEAR(at.mean[0], 0.3, 1e-6);
  EXPECT_NEAR(at.mean[1], -1.2, 1e-6);
  EXPECT_LT(at.stddev[0], 1e-3);

  GpConfig cfg;
  const GpPosterior far = gp_oracle_predict(cx, cy, Tensor::from_rows({{30.0}}), cfg);
  EXPECT_NEAR(far.mean[0], 0.0, 1e-12);
  EXPECT_NEAR(far.stddev[0] * far.stddev[0], 1.0 + 0.01, 1e-12);
}

TEST(GpOracle, MatchesDenseSolve) {
  Rng rng(5);
  GpConfig cfg;
  Tensor cx = Tensor::matrix(5, 1), cy = Tensor::matrix(5, 1), qx = Tensor::matrix(3, 1);
  for (std::size_t i = 0; i < 5; ++i) {
    cx[i] = rng.uniform(-2, 2);
    cy[i] = rng.normal();
  }
  for (std::size_t i = 0; i < 3; ++i) qx[i] = rng.uniform(-2, 2);
  const GpPosterior post = gp_oracle_predict(cx, cy, qx, cfg);
  Eigen::MatrixXd K(5, 5);
  Eigen::VectorXd y(5);
  for (int i = 0; i < 5; ++i) {
    y(i) = cy[i];
    for (int j = 0; j < 5; ++j) {
      const double d = cx[i] - cx[j];
      K(i, j) = std::exp(-0.5 * d * d) + (i == j ? 0.01 + 1e-8 : 0.0);
    }
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
  for (int q = 0; q < 3; ++q) {
    Eigen::VectorXd ks(5);
    for (int i = 0; i < 5; ++i) ks(i) = std::exp(-0.5 * (qx[q] - cx[i]) * (qx[q] - cx[i]));
    const double mu = ks.dot(lu.solve(y));
    const double var = 1.0 - ks.dot(lu.solve(ks)) + 0.01;
    EXPECT_NEAR(post.mean[q], mu, 1e-10);
    EXPECT_NEAR(post.stddev[q], std::sqrt(var), 1e-10);
  }
}

TEST(GpOracle, NllIsLowestAmongSimplePredictors) {
  Rng rng(6);
  GpConfig cfg;
  double oracle = 0, prior = 0, mean_only = 0;
  auto nll = [](double y, double mu, double s) {
    return 0.5 * std::log(2 * std::numbers::pi * s * s) + 0.5 * (y - mu) * (y - mu) / (s * s);
  };
  for (int i = 0; i < 500; ++i) {
    const RegressionTask t = sample_gp_task(rng, 1 + rng.below(20), 20, cfg);
    const GpPosterior p = gp_oracle_predict(t.context_x, t.context_y, t.target_x, cfg);
    for (std::size_t j = 0; j < 20; ++j) {
      oracle += nll(t.target_y[j], p.mean[j], p.stddev[j]);
      prior += nll(t.target_y[j], 0.0, std::sqrt(1.0 + 0.01));
      mean_only += nll(t.target_y[j], p.mean[j], 1.0);
    }
  }
  EXPECT_LT(oracle, prior);
  EXPECT_LT(oracle, mean_only);
}

TEST(Clusters, CountsAndOneHotLabels) {
  Rng rng(7);
  const ClassificationEpisode ep = sample_cluster_episode(rng, 5, 3, 4, 16, 5.0);
  ASSERT_EQ(ep.context_x.rows(), 15u);
  ASSERT_EQ(ep.target_x.rows(), 20u);
  std::vector<int> cc(5, 0), tc(5, 0);
  for (std::size_t i = 0; i < 15; ++i) {
    ++cc[ep.context_labels[i]];
    EXPECT_EQ(ep.context_y(i, ep.context_labels[i]), 1.0);
  }
  for (std::size_t i = 0; i < 20; ++i) ++tc[ep.target_labels[i]];
  for (int k = 0; k < 5; ++k) {
    EXPECT_EQ(cc[k], 3);
    EXPECT_EQ(tc[k], 4);
  }
  EXPECT_THROW(sample_cluster_episode(rng, 1, 3, 4, 16, 5.0), ConfigError);
}

std::size_t nearest(const Tensor& centers, const Tensor& x, std::size_t row) {
  std::size_t best = 0;
  double bd = 1e300;
  for (std::size_t k = 0; k < centers.rows(); ++k) {
    double d = 0;
    for (std::size_t j = 0; j < x.cols(); ++j) d += (x(row, j) - centers(k, j)) * (x(row, j) - centers(k, j));
    if (d < bd) {
      bd = d;
      best = k;
    }
  }
  return best;
}

TEST(Clusters, CentersRespectMargin) {
  Rng rng(8);
  const Tensor c = sample_cluster_centers(rng, 5, 16, 5.0);
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = a + 1; b < 5; ++b) {
      double d = 0;
      for (std::size_t j = 0; j < 16; ++j) d += (c(a, j) - c(b, j)) * (c(a, j) - c(b, j));
      EXPECT_GE(std::sqrt(d), 5.0);
    }
  EXPECT_THROW(sample_cluster_centers(rng, 50, 1, 100.0), ConfigError);
}

TEST(Clusters, NearlyNoiselessCentersAreTriviallySeparable) {
  Rng rng(9);
  const ClassificationEpisode ep = sample_cluster_episode(rng, 4, 2, 5, 8, 5.0, 1e-6);
  Tensor centroids = Tensor::matrix(4, 8);
  for (std::size_t i = 0; i < ep.context_x.rows(); ++i)
    for (std::size_t j = 0; j < 8; ++j) centroids(ep.context_labels[i], j) += ep.context_x(i, j) / 2.0;
  for (std::size_t i = 0; i < ep.target_x.rows(); ++i) EXPECT_EQ(nearest(centroids, ep.target_x, i), ep.target_labels[i]);
}

TEST(Clusters, NearestCentroidOracleAccuracy) {
  Rng rng(10);
  std::size_t correct = 0, total = 0;
  for (int e = 0; e < 100; ++e) {
    const ClassificationEpisode ep = sample_cluster_episode(rng, 5, 5, 15, 16, 5.0);
    Tensor centroids = Tensor::matrix(5, 16);
    for (std::size_t i = 0; i < ep.context_x.rows(); ++i)
      for (std::size_t j = 0; j < 16; ++j) centroids(ep.context_labels[i], j) += ep.context_x(i, j) / 5.0;
    for (std::size_t i = 0; i < ep.target_x.rows(); ++i) {
      correct += nearest(centroids, ep.target_x, i) == ep.target_labels[i];
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(correct) / total, 0.99);
}

FeatureDataset small_dataset() {
  FeatureDataset ds;
  ds.dim = 2;
  for (std::size_t c = 0; c < 3; ++c) {
    Tensor t = Tensor::matrix(4 + c, 2);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(0.25 * i + c);
    ds.classes.push_back(t);
  }
  return ds;
}

TEST(FeatureFile, RoundTrip) {
  const std::string path = temp_path("roundtrip.mfun");
  const FeatureDataset ds = small_dataset();
  save_feature_dataset(path, ds);
  const FeatureDataset back = load_feature_dataset(path, Split::val);
  EXPECT_EQ(back.split, Split::val);
  ASSERT_EQ(back.classes.size(), 3u);
  EXPECT_EQ(back.dim, 2u);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(max_abs_diff(back.classes[c], ds.classes[c]), 0.0);
  std::filesystem::remove(path);
}

TEST(FeatureFile, MalformedFilesAreDataErrors) {
  const std::string path = temp_path("bad.mfun");
  save_feature_dataset(path, small_dataset());
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << b;
  };
  write("MFUN2" + bytes.substr(5));
  EXPECT_THROW(load_feature_dataset(path), DataError);
  write(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_feature_dataset(path), DataError);
  write(bytes + "x");
  EXPECT_THROW(load_feature_dataset(path), DataError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_feature_dataset(path), DataError);
}

TEST(FeatureEpisodes, LabelsRemapAndSamplingIsReproducible) {
  Rng gen(11);
  const FeatureDataset ds = generate_cluster_features(gen, 10, 4, 12);
  Rng a(5), b(5);
  const ClassificationEpisode e1 = sample_feature_episode(ds, a, 4, 3, 5);
  const ClassificationEpisode e2 = sample_feature_episode(ds, b, 4, 3, 5);
  EXPECT_EQ(max_abs_diff(e1.context_x, e2.context_x), 0.0);
  EXPECT_EQ(max_abs_diff(e1.target_x, e2.target_x), 0.0);
  EXPECT_EQ(e1.class_ids, e2.class_ids);
  std::set<std::size_t> ids(e1.class_ids.begin(), e1.class_ids.end());
  EXPECT_EQ(ids.size(), 4u);
  for (std::size_t i = 0; i < e1.context_x.rows(); ++i) {
    const std::size_t cls = e1.class_ids[e1.context_labels[i]];
    const std::size_t ex = e1.context_examples[i];
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(e1.context_x(i, j), ds.classes[cls](ex, j));
  }
  // Context and target examples within a class are disjoint.
  for (std::size_t k = 0; k < 4; ++k) {
    std::set<std::size_t> used;
    for (std::size_t i = 0; i < e1.context_x.rows(); ++i)
      if (e1.context_labels[i] == k) used.insert(e1.context_examples[i]);
    for (std::size_t i = 0; i < e1.target_x.rows(); ++i)
      if (e1.target_labels[i] == k) EXPECT_EQ(used.count(e1.target_examples[i]), 0u);
  }
  EXPECT_THROW(sample_feature_episode(ds, a, 4, 10, 5), DataError);
}

TEST(Samplers, PureFunctionOfSeed) {
  std::vector<std::unique_ptr<EpisodeSampler>> samplers;
  samplers.push_back(make_sinusoid_sampler({}));
  samplers.push_back(make_gp_sampler({}));
  samplers.push_back(make_cluster_sampler({}));
  for (const auto& sampler : samplers) {
    Rng a(9), b(9);
    const Episode e1 = sampler->sample(a, Split::train), e2 = sampler->sample(b, Split::train);
    EXPECT_EQ(max_abs_diff(e1.context_x, e2.context_x), 0.0) << sampler->name();
    EXPECT_EQ(max_abs_diff(e1.target_y, e2.target_y), 0.0) << sampler->name();
  }
  GpSamplerConfig gp;
  auto s = make_gp_sampler(gp);
  Rng rng(3);
  std::set<std::size_t> sizes;
  for (int i = 0; i < 400; ++i) sizes.insert(s->sample(rng, Split::train).context_x.rows());
  EXPECT_EQ(*sizes.begin(), 1u);
  EXPECT_EQ(*sizes.rbegin(), 20u);
}

}  // namespace
}  // namespace metafun
