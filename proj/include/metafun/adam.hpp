#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "metafun/graph.hpp"

namespace metafun {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment estimates for every parameter of a store; frozen parameters keep
/// their moments at zero and are never updated.
class AdamState {
 public:
  AdamState(const ParamStore& store, AdamConfig config);

  std::uint64_t steps() const noexcept { return steps_; }
  const AdamConfig& config() const noexcept { return config_; }
  const Tensor& first_moment(ParamId id) const { return m_.at(id); }
  const Tensor& second_moment(ParamId id) const { return v_.at(id); }

 private:
  friend void adam_step(AdamState&, ParamStore&, std::span<const Tensor>);

  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

/// One bias-corrected Adam update; `grads[i]` pairs with parameter i.
void adam_step(AdamState& state, ParamStore& params, std::span<const Tensor> grads);

}  // namespace metafun
