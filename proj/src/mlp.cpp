#include "metafun/mlp.hpp"

#include <cmath>

#include "metafun/errors.hpp"

namespace metafun {

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w = Tensor::matrix(fan_in, fan_out);
  for (double& v : w.elems()) v = rng.uniform(-limit, limit);
  return w;
}

Mlp Mlp::create(ParamStore& store, const std::string& name, std::vector<std::size_t> widths, Rng& rng,
                Activation activation) {
  if (widths.size() < 2) throw ConfigError("Mlp " + name + ": need at least input and output widths");
  for (std::size_t w : widths)
    if (w == 0) throw ConfigError("Mlp " + name + ": zero width");
  Mlp net;
  net.widths_ = std::move(widths);
  net.activation_ = activation;
  for (std::size_t l = 0; l + 1 < net.widths_.size(); ++l) {
    const std::size_t in = net.widths_[l], out = net.widths_[l + 1];
    net.weights_.push_back(store.add(name + ".w" + std::to_string(l), glorot_uniform(in, out, rng)));
    net.biases_.push_back(store.add(name + ".b" + std::to_string(l), Tensor::matrix(1, out)));
  }
  return net;
}

Var Mlp::apply(Graph& g, Var x) const {
  if (x.cols() != in_dim()) {
    throw DimensionError("Mlp: input width " + std::to_string(x.cols()) + " does not match " +
                         std::to_string(in_dim()));
  }
  Var h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = add_row(matmul(h, g.param(weights_[l])), g.param(biases_[l]));
    if (l + 1 < weights_.size()) h = relu(h);
  }
  return h;
}

std::vector<std::size_t> mlp_widths(std::size_t in, std::size_t width, std::size_t hidden, std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden, width);
  w.push_back(out);
  return w;
}

}  // namespace metafun
