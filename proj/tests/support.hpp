#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "metafun/finite_diff.hpp"
#include "metafun/graph.hpp"
#include "metafun/rng.hpp"
#include "metafun/tensor.hpp"

namespace metafun::test {

inline Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.elems()) v = scale * rng.normal();
  return t;
}

inline Tensor one_hot_rows(Rng& rng, std::size_t rows, std::size_t classes) {
  Tensor t = Tensor::matrix(rows, classes);
  for (std::size_t i = 0; i < rows; ++i) t(i, rng.below(classes)) = 1.0;
  return t;
}

using InputLoss = std::function<Var(Graph&, const std::vector<Var>&)>;

/// Worst relative error between backward() and central differences over
/// every entry of every input.
inline double input_grad_error(const std::vector<Tensor>& inputs, const InputLoss& loss, double h = 1e-5,
                               const ParamStore* store = nullptr) {
  Graph g(store);
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(g.input(t));
  g.backward(loss(g, vars));
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = g.grad(vars[k]);
    auto f = [&](std::span<const double> x) {
      std::vector<Tensor> moved = inputs;
      std::copy(x.begin(), x.end(), moved[k].data());
      Graph g2(store);
      std::vector<Var> v2;
      for (const Tensor& t : moved) v2.push_back(g2.input(t));
      return loss(g2, v2).value().item();
    };
    const auto numeric = finite_diff_grad(f, inputs[k].elems(), h);
    for (std::size_t i = 0; i < numeric.size(); ++i) worst = std::max(worst, relative_error(analytic[i], numeric[i]));
  }
  return worst;
}

using ParamLoss = std::function<Var(Graph&)>;

/// Worst relative error over (up to `max_coords`, evenly strided) scalar
/// coordinates of the trainable parameters in `store`.
inline double param_grad_error(ParamStore& store, const ParamLoss& loss, std::size_t max_coords = 400,
                               double h = 1e-5) {
  std::map<ParamId, Tensor> analytic;
  {
    Graph g(&store);
    analytic = backward(g, loss(g));
  }
  struct Coord {
    ParamId id;
    std::size_t k;
  };
  std::vector<Coord> coords;
  for (ParamId id = 0; id < store.size(); ++id) {
    if (!store.trainable(id)) continue;
    for (std::size_t k = 0; k < store.value(id).size(); ++k) coords.push_back({id, k});
  }
  const std::size_t stride = std::max<std::size_t>(1, coords.size() / max_coords);
  double worst = 0.0;
  for (std::size_t c = 0; c < coords.size(); c += stride) {
    auto [id, k] = coords[c];
    double& slot = store.value(id)[k];
    const double saved = slot;
    auto eval = [&](double v) {
      slot = v;
      Graph g(&store);
      return loss(g).value().item();
    };
    const double num = (eval(saved + h) - eval(saved - h)) / (2.0 * h);
    slot = saved;
    const auto it = analytic.find(id);
    const double ana = it == analytic.end() ? 0.0 : it->second[k];
    worst = std::max(worst, relative_error(ana, num));
  }
  return worst;
}

}  // namespace metafun::test
