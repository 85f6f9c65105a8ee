#include "metafun/encoder.hpp"

#include <cmath>

#include "metafun/errors.hpp"

namespace metafun {

namespace {

template <class... Fs>
struct overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

}  // namespace

void require_one_hot(const Tensor& y, const char* what) {
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double total = 0.0;
    for (std::size_t k = 0; k < y.cols(); ++k) {
      const double v = y(i, k);
      if (v != 0.0 && v != 1.0) throw DataError(std::string(what) + ": label row " + std::to_string(i) + " is not one-hot");
      total += v;
    }
    if (total != 1.0) throw DataError(std::string(what) + ": label row " + std::to_string(i) + " does not sum to 1");
  }
}

Var local_update_regression(Graph& g, const Mlp& u, Var x, Var y, Var r) {
  if (x.rows() != y.rows() || x.rows() != r.rows()) throw DimensionError("local_update_regression: row mismatch");
  const Var parts[] = {x, y, r};
  return u.apply(g, concat_cols(parts));
}

Var local_update_classification(Graph& g, const ClassificationForms& forms, Var r, const Tensor& y,
                                std::size_t ways) {
  (void)g;
  if (ways < 2) throw ConfigError("local_update_classification: need at least 2 classes");
  require_one_hot(y, "local_update_classification");
  if (y.cols() != ways || y.rows() != r.rows()) throw DimensionError("local_update_classification: label shape");
  if (r.cols() % ways != 0) throw DimensionError("local_update_classification: repr width not divisible by K");
  const std::size_t n = r.rows();
  const std::size_t class_dim = r.cols() / ways;

  Var blocks = reshape(r, n * ways, class_dim);
  Var mk = forms.m(blocks);
  Var msum = repeat_rows(group_sum_rows(mk, ways), ways);
  Var pos = forms.u_plus(mk, msum);
  Var negv = forms.u_minus(mk, msum);

  Tensor gate = y.reshaped(n * ways, 1);
  Tensor gate_c = gate;
  for (double& v : gate_c.elems()) v = 1.0 - v;
  Var gated = add(mul_col(pos, r.graph->constant(std::move(gate))), mul_col(negv, r.graph->constant(std::move(gate_c))));
  if (forms.projection) gated = forms.projection(gated);
  return reshape(gated, n, ways * gated.cols());
}

ClassificationForms learned_forms(Graph& g, const ClassificationUpdater& up) {
  ClassificationForms f;
  f.m = [&g, &up](Var blocks) { return up.m.apply(g, blocks); };
  f.u_plus = [&g, &up](Var mk, Var msum) {
    const Var parts[] = {mk, msum};
    return up.u_plus.apply(g, concat_cols(parts));
  };
  f.u_minus = [&g, &up](Var mk, Var msum) {
    const Var parts[] = {mk, msum};
    return up.u_minus.apply(g, concat_cols(parts));
  };
  f.projection = [&g, &up](Var h) { return up.projection.apply(g, h); };
  return f;
}

ClassificationForms gated_gradient_forms() {
  ClassificationForms f;
  f.m = [](Var blocks) { return exp(blocks); };
  f.u_plus = [](Var mk, Var msum) { return add_scalar(mul(mk, reciprocal(msum)), -1.0); };
  f.u_minus = [](Var mk, Var msum) { return mul(mk, reciprocal(msum)); };
  return f;
}

Var local_update_gradient(Graph& g, const GradientUpdater& up, Var r, const Tensor& y) {
  switch (up.loss) {
    case GradientLoss::squared:
      if (!r.value().same_shape(y)) {
        throw DimensionError("gradient updater (squared): repr width must equal dim(y)");
      }
      return sub(r, g.constant(y));
    case GradientLoss::cross_entropy:
      require_one_hot(y, "gradient updater");
      if (!r.value().same_shape(y)) {
        throw DimensionError("gradient updater (cross-entropy): repr must hold one logit per class");
      }
      if (up.gated) return local_update_classification(g, gated_gradient_forms(), r, y, y.cols());
      return sub(softmax_rows(r), g.constant(y));
  }
  throw ConfigError("gradient updater: unknown loss");
}

RegressionUpdater make_regression_updater(ParamStore& store, const std::string& name, std::size_t x_dim,
                                          std::size_t y_dim, std::size_t repr_dim, std::size_t width,
                                          std::size_t layers, Rng& rng) {
  return {Mlp::create(store, name + ".u", mlp_widths(x_dim + y_dim + repr_dim, width, layers, repr_dim), rng)};
}

ClassificationUpdater make_classification_updater(ParamStore& store, const std::string& name, std::size_t ways,
                                                  std::size_t class_dim, std::size_t width, std::size_t layers,
                                                  Rng& rng) {
  if (layers < 1) throw ConfigError("classification updater: nn-layers must be at least 1");
  ClassificationUpdater up;
  up.ways = ways;
  up.m = Mlp::create(store, name + ".m", mlp_widths(class_dim, width, layers - 1, width), rng);
  // With r = 0 and zero biases every u would be exactly 0 and only biases
  // would get gradients; small random m biases break that fixed point.
  for (ParamId b : up.m.biases())
    for (double& v : store.value(b).elems()) v = 0.1 * rng.normal();
  up.u_plus = Mlp::create(store, name + ".u_plus", mlp_widths(2 * width, width, layers - 1, width), rng);
  up.u_minus = Mlp::create(store, name + ".u_minus", mlp_widths(2 * width, width, layers - 1, width), rng);
  up.projection = Mlp::create(store, name + ".proj", {width, class_dim}, rng);
  return up;
}

// ------------------------------------------------------------------- Encoder

Encoder::Encoder(Graph& g, const EncoderParams& params, const EpisodeInputs& inputs)
    : g_(&g), params_(&params), inputs_(&inputs) {
  if (inputs.context_x.rows() == 0) throw DataError("encoder: empty context");
  if (inputs.context_y.rows() != inputs.context_x.rows()) throw DimensionError("encoder: context x/y row mismatch");
  if (inputs.target_x.cols() != inputs.context_x.cols()) throw DimensionError("encoder: context/target x width mismatch");
  context_x_ = g.constant(inputs.context_x);
  context_y_ = g.constant(inputs.context_y);
  target_x_ = g.constant(inputs.target_x);
  all_x_ = g.constant(concat_rows(inputs.context_x, inputs.target_x));
}

Var Encoder::alpha() {
  if (!alpha_) alpha_ = exp(g_->param(params_->log_alpha));
  return *alpha_;
}

Var Encoder::queries() {
  if (!queries_) queries_ = params_->pooling.embed(*g_, all_x_);
  return *queries_;
}

Repr Encoder::init_repr() {
  const std::size_t n = inputs_->context_size() + inputs_->target_size();
  const std::size_t d = params_->repr_dim;
  switch (params_->init_mode) {
    case InitMode::zero:
      return {g_->constant(Tensor::matrix(n, d)), 0};
    case InitMode::constant:
      if (!params_->init_constant) throw ConfigError("encoder: constant init without a learned vector");
      return {repeat_rows(g_->param(*params_->init_constant), n), 0};
    case InitMode::parametric:
      if (!params_->init_net) throw ConfigError("encoder: parametric init without a network");
      return {params_->init_net->apply(*g_, all_x_), 0};
  }
  throw ConfigError("encoder: unknown initial representation mode");
}

Var Encoder::context_rows(const Repr& repr) const {
  return slice_rows(repr.values, 0, inputs_->context_size());
}

Var Encoder::target_rows(const Repr& repr) const {
  return slice_rows(repr.values, inputs_->context_size(), inputs_->target_size());
}

Var Encoder::local_updates(const Repr& repr) {
  Var r = context_rows(repr);
  return std::visit(overloaded{
                        [&](const RegressionUpdater& up) {
                          return local_update_regression(*g_, up.u, context_x_, context_y_, r);
                        },
                        [&](const ClassificationUpdater& up) {
                          return local_update_classification(*g_, learned_forms(*g_, up), r, inputs_->context_y,
                                                             up.ways);
                        },
                        [&](const GradientUpdater& up) { return local_update_gradient(*g_, up, r, inputs_->context_y); },
                    },
                    params_->updater);
}

Var Encoder::functional_update(const Repr& repr) {
  Var u = local_updates(repr);
  if (u.cols() != repr.values.cols()) throw DimensionError("encoder: updater output width differs from d_r");
  Var q = queries();
  Var k = slice_rows(q, 0, inputs_->context_size());
  return params_->pooling.pool_embedded(*g_, q, k, u);
}

Repr Encoder::step(const Repr& repr) {
  Var delta = functional_update(repr);
  return {sub(repr.values, scale_by(delta, alpha())), repr.iteration + 1};
}

Repr Encoder::encode() {
  Repr r = init_repr();
  for (std::size_t t = 0; t < params_->iterations; ++t) r = step(r);
  return r;
}

std::vector<Repr> Encoder::trajectory() {
  std::vector<Repr> out{init_repr()};
  for (std::size_t t = 0; t < params_->iterations; ++t) out.push_back(step(out.back()));
  return out;
}

Repr encode(Graph& g, const EncoderParams& params, const EpisodeInputs& inputs) {
  return Encoder(g, params, inputs).encode();
}

}  // namespace metafun
