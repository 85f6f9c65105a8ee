#include "metafun/fgd.hpp"

#include <cmath>

#include "metafun/errors.hpp"
#include "metafun/kernels.hpp"

namespace metafun::fgd {

Tensor grad_squared(const Tensor& f, const Tensor& y) {
  require_same_shape(f, y, "fgd::grad_squared");
  Tensor g = f;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] -= y[i];
  return g;
}

Tensor grad_cross_entropy(const Tensor& logits, const Tensor& y) {
  require_same_shape(logits, y, "fgd::grad_cross_entropy");
  require_one_hot(y, "fgd::grad_cross_entropy");
  Tensor p;
  kernels::softmax_rows(logits, p);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= y[i];
  return p;
}

Tensor gated_cross_entropy_grad(const Tensor& logits, const Tensor& y) {
  require_same_shape(logits, y, "fgd::gated_cross_entropy_grad");
  require_one_hot(y, "fgd::gated_cross_entropy_grad");
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double msum = 0.0;
    for (std::size_t k = 0; k < logits.cols(); ++k) msum += std::exp(logits(i, k));
    for (std::size_t k = 0; k < logits.cols(); ++k) {
      const double mk = std::exp(logits(i, k));
      const double u_plus = mk / msum - 1.0;
      const double u_minus = mk / msum;
      out(i, k) = y(i, k) * u_plus + (1.0 - y(i, k)) * u_minus;
    }
  }
  return out;
}

ClassificationForms gradient_forms(Graph& g) {
  (void)g;
  return gated_gradient_forms();
}

Tensor loss_grad(const Config& cfg, const Tensor& f, const Tensor& y) {
  switch (cfg.loss) {
    case Loss::squared:
      return grad_squared(f, y);
    case Loss::cross_entropy:
      return grad_cross_entropy(f, y);
  }
  throw ConfigError("fgd: unknown loss");
}

Tensor kernel(const Config& cfg, const Tensor& a, const Tensor& b) {
  Tensor gram;
  if (cfg.embedding) {
    kernels::reference::rbf_gram(cfg.embedding(a), cfg.embedding(b), cfg.lengthscale, gram);
  } else {
    kernels::reference::rbf_gram(a, b, cfg.lengthscale, gram);
  }
  return gram;
}

namespace {

void validate(const Config& cfg, const Tensor& context_x, const Tensor& context_y) {
  if (context_x.rows() == 0) throw DataError("fgd: empty context");
  if (context_y.rows() != context_x.rows()) throw DimensionError("fgd: context x/y row mismatch");
  if (!(cfg.lengthscale > 0.0)) throw ConfigError("fgd: lengthscale must be positive");
  if (!(cfg.alpha >= 0.0)) throw ConfigError("fgd: alpha must be non-negative");
}

// f - alpha * gram * grad, in place.
void descend(Tensor& f, const Tensor& gram, const Tensor& grad, double alpha) {
  const Tensor delta = kernels::reference::matmul(gram, grad);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] -= alpha * delta[i];
}

}  // namespace

Tensor step(const Config& cfg, const Tensor& f_values, const Tensor& context_x, const Tensor& context_y,
            const Tensor& query_x) {
  validate(cfg, context_x, context_y);
  const std::size_t nc = context_x.rows();
  if (f_values.rows() != nc + query_x.rows()) throw DimensionError("fgd::step: f_values rows != |C| + |Q|");
  const Tensor grad = loss_grad(cfg, slice_rows(f_values, 0, nc), context_y);
  const Tensor points = query_x.rows() ? concat_rows(context_x, query_x) : context_x;
  Tensor out = f_values;
  descend(out, kernel(cfg, points, context_x), grad, cfg.alpha);
  return out;
}

Tensor evaluate(const Config& cfg, const State& state, const Tensor& query_x, std::size_t out_dim) {
  Tensor f = Tensor::matrix(query_x.rows(), out_dim, cfg.f0);
  if (state.coefficients.empty() || query_x.rows() == 0) return f;
  const Tensor gram = kernel(cfg, query_x, state.context_x);
  for (const Tensor& c : state.coefficients) descend(f, gram, c, cfg.alpha);
  return f;
}

Run run(const Config& cfg, const Tensor& context_x, const Tensor& context_y, const Tensor& query_x) {
  validate(cfg, context_x, context_y);
  const std::size_t nc = context_x.rows();
  const std::size_t d = context_y.cols();
  Run out;

  // Path (a): every point tracked through every step.
  Tensor f = Tensor::matrix(nc + query_x.rows(), d, cfg.f0);
  out.trajectory.push_back(f);
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    f = step(cfg, f, context_x, context_y, query_x);
    out.trajectory.push_back(f);
  }
  out.tracked = slice_rows(f, nc, query_x.rows());

  // Path (b): only context values are tracked; queries are rebuilt at the end.
  out.state.context_x = context_x;
  const Tensor gram_cc = kernel(cfg, context_x, context_x);
  Tensor fc = Tensor::matrix(nc, d, cfg.f0);
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    Tensor grad = loss_grad(cfg, fc, context_y);
    descend(fc, gram_cc, grad, cfg.alpha);
    out.state.coefficients.push_back(std::move(grad));
  }
  out.reconstructed = evaluate(cfg, out.state, query_x, d);
  return out;
}

EncoderParams encoder_params(ParamStore& store, const Config& cfg, std::size_t x_dim, std::size_t y_dim,
                             bool gated) {
  if (cfg.embedding) throw ConfigError("fgd::encoder_params: only the identity embedding has an encoder form");
  if (!(cfg.lengthscale > 0.0)) throw ConfigError("fgd: lengthscale must be positive");
  if (!(cfg.alpha >= 0.0)) throw ConfigError("fgd: alpha must be non-negative");
  Rng unused(0);
  EncoderParams p;
  const bool classify = cfg.loss == Loss::cross_entropy;
  p.updater = GradientUpdater{classify ? GradientLoss::cross_entropy : GradientLoss::squared, classify ? y_dim : 0,
                              classify && gated};
  PoolingConfig pc;
  pc.mode = PoolingMode::kernel;
  pc.embedding_identity = true;
  pc.lengthscale = cfg.lengthscale;
  pc.train_lengthscale = false;
  p.pooling = Pooling::create(store, "fgd.pooling", pc, x_dim, unused);
  p.log_alpha = store.add("fgd.log_alpha", Tensor::scalar(std::log(cfg.alpha)), false);
  if (cfg.f0 != 0.0) {
    p.init_mode = InitMode::constant;
    p.init_constant = store.add("fgd.f0", Tensor::matrix(1, y_dim, cfg.f0), false);
  }
  p.iterations = cfg.steps;
  p.repr_dim = y_dim;
  return p;
}

std::vector<Tensor> encoder_trajectory(const Config& cfg, const Tensor& context_x, const Tensor& context_y,
                                       const Tensor& query_x, bool gated) {
  ParamStore store;
  const EncoderParams params = encoder_params(store, cfg, context_x.cols(), context_y.cols(), gated);
  Graph g(&store);
  const EpisodeInputs inputs{context_x, context_y, query_x};
  Encoder enc(g, params, inputs);
  std::vector<Tensor> out;
  for (const Repr& r : enc.trajectory()) out.push_back(r.values.value());
  return out;
}

}  // namespace metafun::fgd
