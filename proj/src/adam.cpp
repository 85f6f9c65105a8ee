#include "metafun/adam.hpp"

#include <cmath>

#include "metafun/errors.hpp"

namespace metafun {

AdamState::AdamState(const ParamStore& store, AdamConfig config) : config_(config) {
  m_.reserve(store.size());
  v_.reserve(store.size());
  for (ParamId i = 0; i < store.size(); ++i) {
    m_.emplace_back(store.value(i).shape(), 0.0);
    v_.emplace_back(store.value(i).shape(), 0.0);
  }
}

void adam_step(AdamState& state, ParamStore& params, std::span<const Tensor> grads) {
  if (grads.size() != params.size() || state.m_.size() != params.size()) {
    throw DimensionError("adam_step: gradient count does not match parameter count");
  }
  for (ParamId i = 0; i < params.size(); ++i) {
    if (!grads[i].same_shape(params.value(i))) {
      throw DimensionError("adam_step: gradient shape mismatch for " + params.name(i));
    }
  }
  const AdamConfig& c = state.config_;
  ++state.steps_;
  const double t = static_cast<double>(state.steps_);
  const double corr1 = 1.0 - std::pow(c.beta1, t);
  const double corr2 = 1.0 - std::pow(c.beta2, t);
  for (ParamId i = 0; i < params.size(); ++i) {
    if (!params.trainable(i)) continue;
    Tensor& p = params.value(i);
    Tensor& m = state.m_[i];
    Tensor& v = state.v_[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double mhat = m[k] / corr1;
      const double vhat = v[k] / corr2;
      p[k] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

}  // namespace metafun
