#include <cmath>

#include <gtest/gtest.h>

#include "metafun/decoders.hpp"
#include "metafun/errors.hpp"
#include "support.hpp"

namespace metafun {
namespace {

using test::random_matrix;

RegressionDecoderConfig small_config(RegressionDecoderMode mode, bool gaussian = false) {
  RegressionDecoderConfig c;
  c.mode = mode;
  c.gaussian = gaussian;
  c.width = 6;
  c.layers = 1;
  c.predictive_hidden = {5};
  return c;
}

TEST(PredictiveParamCount, MatchesLayerSum) {
  EXPECT_EQ(predictive_param_count({1, 40, 40, 2}), 1 * 40 + 40 + 40 * 40 + 40 + 40 * 2 + 2);
  EXPECT_EQ(predictive_param_count({3}), 0u);
}

TEST(DecodeRegression, ZeroGeneratorGivesZeroPrediction) {
  Rng rng(1);
  ParamStore store;
  RegressionDecoder dec = make_regression_decoder(store, "d", small_config(RegressionDecoderMode::hypernet), 4, 2, 1, rng);
  const auto& net = *dec.net;
  store.value(net.weights().back()).fill(0.0);
  store.value(net.biases().back()).fill(0.0);
  Graph g(&store);
  const Tensor y = decode_regression(g, dec, g.constant(random_matrix(rng, 5, 4)), g.constant(random_matrix(rng, 5, 2))).value();
  for (double v : y.elems()) EXPECT_EQ(v, 0.0);
}

TEST(DecodeRegression, IdenticalReprMeansIdenticalWeights) {
  Rng rng(2);
  ParamStore store;
  RegressionDecoder dec = make_regression_decoder(store, "d", small_config(RegressionDecoderMode::hypernet), 3, 1, 1, rng);
  const Tensor r1 = random_matrix(rng, 1, 3);
  Tensor r = concat_rows(r1, r1);
  const Tensor x = Tensor::from_rows({{0.4}, {-1.1}});
  Graph g(&store);
  const Tensor w = dec.net->apply(g, g.constant(r)).value();
  EXPECT_EQ(max_abs_diff(slice_rows(w, 0, 1), slice_rows(w, 1, 1)), 0.0);
  const Tensor y = decode_regression(g, dec, g.constant(r), g.constant(x)).value();
  // f(x) = W2 relu(W1 x + b1) + b2 using row 0's generated weights.
  for (std::size_t row = 0; row < 2; ++row) {
    double out = 0.0;
    const std::size_t h = 5;
    for (std::size_t k = 0; k < h; ++k) {
      const double pre = w(0, k) * x(row, 0) + w(0, h + k);
      out += w(0, 2 * h + k) * std::max(pre, 0.0);
    }
    out += w(0, 3 * h);
    EXPECT_NEAR(y(row, 0), out, 1e-14);
  }
}

TEST(DecodeRegression, GradientWrtReprMatchesFiniteDifferences) {
  Rng rng(3);
  for (auto mode : {RegressionDecoderMode::hypernet, RegressionDecoderMode::concat}) {
    ParamStore store;
    RegressionDecoder dec = make_regression_decoder(store, "d", small_config(mode), 3, 2, 1, rng);
    const Tensor x = random_matrix(rng, 4, 2), r = random_matrix(rng, 4, 3);
    const double err = test::input_grad_error(
        {r},
        [&](Graph& g, const std::vector<Var>& v) { return sum(square(decode_regression(g, dec, v[0], g.constant(x)))); },
        1e-5, &store);
    EXPECT_LT(err, 1e-4);
    const double perr = test::param_grad_error(store, [&](Graph& g) {
      return sum(square(decode_regression(g, dec, g.constant(r), g.constant(x))));
    });
    EXPECT_LT(perr, 1e-4);
  }
}

TEST(DecodeRegression, IdentityNeedsMatchingWidth) {
  Rng rng(4);
  ParamStore store;
  EXPECT_THROW(make_regression_decoder(store, "d", small_config(RegressionDecoderMode::identity), 3, 1, 1, rng),
               ConfigError);
  RegressionDecoder dec = make_regression_decoder(store, "d", small_config(RegressionDecoderMode::identity), 1, 1, 1, rng);
  Graph g(&store);
  const Tensor r = random_matrix(rng, 3, 1);
  EXPECT_EQ(max_abs_diff(decode_regression(g, dec, g.constant(r), g.constant(Tensor::matrix(3, 1))).value(), r), 0.0);
}

TEST(GaussianHead, SigmaFloorAndUnitSigmaNll) {
  Rng rng(5);
  ParamStore store;
  RegressionDecoder dec = make_regression_decoder(store, "d", small_config(RegressionDecoderMode::concat, true), 2, 1, 1, rng);
  // Push the raw s output far negative.
  store.value(dec.net->biases().back()) = Tensor::from_rows({{0.0, -800.0}});
  Graph g(&store);
  const auto pred = decode_regression_gaussian(g, dec, g.constant(random_matrix(rng, 6, 2, 0.01)),
                                               g.constant(random_matrix(rng, 6, 1, 0.01)));
  for (double s : pred.stddev.value().elems()) {
    EXPECT_GE(s, dec.sigma_min);
    EXPECT_NEAR(s, dec.sigma_min, 1e-12);
  }
  const Tensor y = Tensor::from_rows({{0.5}, {1.5}});
  const double nll = mean_gaussian_nll(g.constant(y), g.constant(Tensor::matrix(2, 1, 1.0)), y).value().item();
  EXPECT_NEAR(nll, 0.5 * std::log(2 * M_PI), 1e-15);
}

TEST(GaussianHead, NllGradientMatchesFiniteDifferences) {
  Rng rng(6);
  ParamStore store;
  RegressionDecoder dec = make_regression_decoder(store, "d", small_config(RegressionDecoderMode::hypernet, true), 3, 1, 1, rng);
  const Tensor r = random_matrix(rng, 5, 3), x = random_matrix(rng, 5, 1), y = random_matrix(rng, 5, 1);
  const double err = test::param_grad_error(store, [&](Graph& g) {
    auto p = decode_regression_gaussian(g, dec, g.constant(r), g.constant(x));
    return mean_gaussian_nll(p.mean, p.stddev, y);
  });
  EXPECT_LT(err, 1e-4);
  Graph g(&store);
  EXPECT_THROW(decode_regression_gaussian(
                   g, make_regression_decoder(store, "e", small_config(RegressionDecoderMode::concat), 3, 1, 1, rng),
                   g.constant(r), g.constant(x)),
               ConfigError);
}

ClassificationDecoderConfig leo_config(std::size_t hidden = 0) {
  ClassificationDecoderConfig c;
  c.hidden_layers = hidden;
  c.width = 7;
  return c;
}

TEST(DecodeClassification, IdenticalClassBlocksGiveUniformProbabilities) {
  Rng rng(7);
  ParamStore store;
  const std::size_t K = 4, dc = 3, dx = 5;
  ClassificationDecoder dec = make_classification_decoder(store, "c", leo_config(1), K, dc, dx, rng);
  Tensor r = Tensor::matrix(2, K * dc);
  const Tensor block = random_matrix(rng, 1, dc);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = 0; j < dc; ++j) r(i, k * dc + j) = block[j];
  Graph g(&store);
  const Tensor p = decode_classification(g, dec, g.constant(r), g.constant(random_matrix(rng, 2, dx)), SampleMode::mean).value();
  for (double v : p.elems()) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(DecodeClassification, ProbabilitiesSumToOneAndMeanEqualsZeroNoise) {
  Rng rng(8);
  ParamStore store;
  const std::size_t K = 5, dc = 2, dx = 4, m = 6;
  ClassificationDecoder dec = make_classification_decoder(store, "c", leo_config(), K, dc, dx, rng);
  const Tensor r = random_matrix(rng, m, K * dc), x = random_matrix(rng, m, dx);
  Graph g(&store);
  const Tensor mean = decode_classification(g, dec, g.constant(r), g.constant(x), SampleMode::mean).value();
  const Tensor zero_noise = Tensor::matrix(m * K, dx);
  const Tensor rep =
      decode_classification(g, dec, g.constant(r), g.constant(x), SampleMode::reparameterized, nullptr, &zero_noise).value();
  EXPECT_EQ(max_abs_diff(mean, rep), 0.0);
  Rng draw(3);
  const Tensor sampled =
      decode_classification(g, dec, g.constant(r), g.constant(x), SampleMode::reparameterized, &draw).value();
  for (const Tensor* t : {&mean, &sampled}) {
    for (std::size_t i = 0; i < m; ++i) {
      double total = 0;
      for (std::size_t k = 0; k < K; ++k) {
        EXPECT_GE((*t)(i, k), 0.0);
        total += (*t)(i, k);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
  EXPECT_GT(max_abs_diff(mean, sampled), 0.0);
  EXPECT_THROW(decode_classification(g, dec, g.constant(r), g.constant(x), SampleMode::reparameterized), UsageError);
}

TEST(DecodeClassification, InvariantToCommonShiftOfClassWeights) {
  // logits_k = x.w^k; adding c to every w^k adds x.c to every logit.
  Rng rng(9);
  Graph g;
  const Tensor x = random_matrix(rng, 3, 4);
  const Tensor w = random_matrix(rng, 3, 5 * 4);
  Tensor shifted = w;
  const Tensor c = random_matrix(rng, 1, 4, 10.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 5; ++k)
      for (std::size_t j = 0; j < 4; ++j) shifted(i, k * 4 + j) += c[j];
  const Tensor a = softmax_rows(rowwise_linear(g.constant(x), g.constant(w))).value();
  const Tensor b = softmax_rows(rowwise_linear(g.constant(x), g.constant(shifted))).value();
  EXPECT_LT(max_abs_diff(a, b), 1e-12);
}

TEST(DecodeClassification, GradientsMatchFiniteDifferences) {
  Rng rng(10);
  ParamStore store;
  const std::size_t K = 3, dc = 2, dx = 3, m = 4;
  ClassificationDecoder dec = make_classification_decoder(store, "c", leo_config(1), K, dc, dx, rng);
  const Tensor r = random_matrix(rng, m, K * dc), x = random_matrix(rng, m, dx);
  const Tensor y = test::one_hot_rows(rng, m, K);
  const Tensor noise = random_matrix(rng, m * K, dx);
  const double err = test::param_grad_error(store, [&](Graph& g) {
    return mean_softmax_cross_entropy(
        decode_classification_logits(g, dec, g.constant(r), g.constant(x), SampleMode::reparameterized, nullptr, &noise), y);
  });
  EXPECT_LT(err, 1e-4);
}

TEST(DecodeClassification, ConfigErrors) {
  Rng rng(11);
  ParamStore store;
  EXPECT_THROW(make_classification_decoder(store, "c", leo_config(), 1, 2, 3, rng), ConfigError);
  ClassificationDecoderConfig id;
  id.mode = ClassificationDecoderMode::identity;
  EXPECT_THROW(make_classification_decoder(store, "c", id, 3, 2, 3, rng), ConfigError);
  ClassificationDecoder dec = make_classification_decoder(store, "c", id, 3, 1, 3, rng);
  Graph g(&store);
  const Tensor r = random_matrix(rng, 2, 3);
  EXPECT_EQ(max_abs_diff(decode_classification_logits(g, dec, g.constant(r), g.constant(Tensor::matrix(2, 3)), SampleMode::mean).value(), r),
            0.0);
}

}  // namespace
}  // namespace metafun
