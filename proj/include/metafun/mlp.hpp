#pragma once

#include <string>
#include <vector>

#include "metafun/graph.hpp"
#include "metafun/rng.hpp"

namespace metafun {

enum class Activation { relu };

/// Glorot-uniform weights U(-sqrt(6/(in+out)), +sqrt(6/(in+out))).
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Stack of affine layers with activations between them; the last layer is
/// affine only. Weights are [in, out] and act on row vectors: y = x W + b.
class Mlp {
 public:
  Mlp() = default;

  /// Registers weights "<name>.w<i>" / "<name>.b<i>" in `store`.
  static Mlp create(ParamStore& store, const std::string& name, std::vector<std::size_t> widths, Rng& rng,
                    Activation activation = Activation::relu);

  Var apply(Graph& g, Var x) const;

  const std::vector<std::size_t>& widths() const noexcept { return widths_; }
  std::size_t in_dim() const { return widths_.front(); }
  std::size_t out_dim() const { return widths_.back(); }
  std::size_t layer_count() const noexcept { return weights_.size(); }
  const std::vector<ParamId>& weights() const noexcept { return weights_; }
  const std::vector<ParamId>& biases() const noexcept { return biases_; }
  Activation activation() const noexcept { return activation_; }

 private:
  std::vector<std::size_t> widths_;
  std::vector<ParamId> weights_;
  std::vector<ParamId> biases_;
  Activation activation_ = Activation::relu;
};

/// `hidden` copies of `width` framed by the input and output widths.
std::vector<std::size_t> mlp_widths(std::size_t in, std::size_t width, std::size_t hidden, std::size_t out);

}  // namespace metafun
