#include "metafun/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "metafun/errors.hpp"
#include "metafun/kernels.hpp"

namespace metafun {

// ---------------------------------------------------------------- ParamStore

ParamId ParamStore::add(std::string name, Tensor value, bool trainable) {
  params_.push_back({std::move(name), std::move(value), trainable});
  return params_.size() - 1;
}

std::optional<ParamId> ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  return std::nullopt;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::vector<double> ParamStore::flatten() const {
  std::vector<double> flat;
  flat.reserve(scalar_count());
  for (const auto& p : params_) flat.insert(flat.end(), p.value.elems().begin(), p.value.elems().end());
  return flat;
}

void ParamStore::assign(std::span<const double> flat) {
  if (flat.size() != scalar_count()) {
    throw DimensionError("ParamStore::assign: expected " + std::to_string(scalar_count()) + " scalars, got " +
                         std::to_string(flat.size()));
  }
  std::size_t off = 0;
  for (auto& p : params_) {
    std::copy_n(flat.data() + off, p.value.size(), p.value.data());
    off += p.value.size();
  }
}

// --------------------------------------------------------------------- Graph

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = std::any_of(inputs.begin(), inputs.end(), [&](std::size_t i) { return nodes_[i].needs_grad; });
  node.inputs = std::move(inputs);
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Graph::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Graph::param(ParamId id) {
  if (!params_) throw UsageError("Graph::param: graph has no parameter store");
  if (auto it = param_nodes_.find(id); it != param_nodes_.end()) return {this, it->second};
  Node node;
  node.external = &params_->value(id);
  node.param = id;
  node.needs_grad = params_->trainable(id);
  nodes_.push_back(std::move(node));
  param_nodes_.emplace(id, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

Var Graph::input(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = true;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Tensor& Graph::grad_ref(std::size_t id) {
  Node& n = nodes_[id];
  const Tensor& v = n.get();
  if (n.grad.size() != v.size() || !n.grad.same_shape(v)) n.grad = Tensor(v.shape(), 0.0);
  return n.grad;
}

const Tensor& Graph::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (!n.grad.same_shape(n.get())) {
    // Never reached by backward: expose zeros.
    const_cast<Node&>(n).grad = Tensor(n.get().shape(), 0.0);
  }
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw UsageError("backward: node belongs to a different graph");
  if (value(loss).size() != 1) {
    throw UsageError("backward: loss must be a scalar node, got " + value(loss).shape_string());
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad_ref(loss.id).fill(1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, i);
  }
}

std::map<ParamId, Tensor> Graph::param_grads() const {
  std::map<ParamId, Tensor> out;
  for (const auto& [pid, nid] : param_nodes_) {
    const Node& n = nodes_[nid];
    if (!n.needs_grad) continue;
    out.emplace(pid, n.grad.same_shape(n.get()) ? n.grad : Tensor(n.get().shape(), 0.0));
  }
  return out;
}

std::map<ParamId, Tensor> Graph::take_param_grads() {
  std::map<ParamId, Tensor> out;
  for (const auto& [pid, nid] : param_nodes_) {
    Node& n = nodes_[nid];
    if (!n.needs_grad || !n.grad.same_shape(n.get())) continue;
    out.emplace(pid, std::move(n.grad));
    n.grad = Tensor();
  }
  return out;
}

std::map<ParamId, Tensor> backward(Graph& g, Var loss) {
  g.backward(loss);
  return g.param_grads();
}

// ----------------------------------------------------------------------- ops

namespace {

void same_graph(Var a, Var b, const char* what) {
  if (a.graph != b.graph || a.graph == nullptr) throw UsageError(std::string(what) + ": operands from different graphs");
}

void axpy(Tensor& dst, const Tensor& src, double c = 1.0) {
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += c * s[i];
}

Tensor scale_copy(const Tensor& src, double c) {
  Tensor out = src;
  for (double& v : out.elems()) v *= c;
  return out;
}

template <typename Forward, typename Deriv>
Var unary(Var a, Forward fwd, Deriv deriv) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  const std::size_t ai = a.id;
  return a.graph->push(std::move(out), {ai}, [ai, deriv](Graph& g, std::size_t self) {
    if (!g.needs_grad(ai)) return;
    const Tensor& gy = g.grad_ref(self);
    const Tensor& x = g.value(ai);
    const Tensor& y = g.value(self);
    Tensor& gx = g.grad_ref(ai);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += gy[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  same_graph(a, b, "matmul");
  Tensor out = kernels::matmul(a.value(), b.value());
  const std::size_t ai = a.id, bi = b.id;
  return a.graph->push(std::move(out), {ai, bi}, [ai, bi](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_ref(self);
    if (g.needs_grad(ai)) kernels::matmul_nt_acc(gy, g.value(bi), g.grad_ref(ai));
    if (g.needs_grad(bi)) kernels::matmul_tn_acc(g.value(ai), gy, g.grad_ref(bi));
  });
}

Var matmul_nt(Var a, Var b) {
  same_graph(a, b, "matmul_nt");
  Tensor out = kernels::matmul_nt(a.value(), b.value());
  const std::size_t ai = a.id, bi = b.id;
  return a.graph->push(std::move(out), {ai, bi}, [ai, bi](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_ref(self);
    if (g.needs_grad(ai)) kernels::matmul_acc(gy, g.value(bi), g.grad_ref(ai));
    if (g.needs_grad(bi)) kernels::matmul_tn_acc(gy, g.value(ai), g.grad_ref(bi));
  });
}

Var add(Var a, Var b) {
  same_graph(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  axpy(out, b.value());
  const std::size_t ai = a.id, bi = b.id;
  return a.graph->push(std::move(out), {ai, bi}, [ai, bi](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_ref(self);
    if (g.needs_grad(ai)) axpy(g.grad_ref(ai), gy);
    if (g.needs_grad(bi)) axpy(g.grad_ref(bi), gy);
  });
}

Var sub(Var a, Var b) {
  same_graph(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  axpy(out, b.value(), -1.0);
  const std::size_t ai = a.id, bi = b.id;
  return a.graph->push(std::move(out), {ai, bi}, [ai, bi](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_ref(self);
    if (g.needs_grad(ai)) axpy(g.grad_ref(ai), gy);
    if (g.needs_grad(bi)) axpy(g.grad_ref(bi), gy, -1.0);
  });
}

Var add_row(Var a, Var row) {
  same_graph(a, row, "add_row");
  const Tensor& x = a.value();
  const Tensor& r = row.value();
  if (r.rows() != 1 || r.cols() != x.cols()) {
    throw DimensionError("add_row: row " + r.shape_string() + " does not broadcast over " + x.shape_string());
  }
  Tensor out = x;
  const std::size_t n = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += r[j];
  const std::size_t ai = a.id, ri = row.id;
  return a.graph->push(std::move(out), {ai, ri}, [ai, ri, n](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_ref(self);
    if (g.needs_grad(ai)) axpy(g.grad_ref(ai), gy);
    if (g.needs_grad(ri)) {
      Tensor& gr = g.grad_ref(ri);
      for (std::size_t i = 0; i < gy.rows(); ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += gy(i, j);
    }
  });
}

Var mul(Var a, Var b) {
  same_graph(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.graph->push(std::move(out), {ai, bi}, [ai, bi](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_ref(self);
    if (g.needs_grad(ai)) {
      Tensor& ga = g.grad_ref(ai);
      const Tensor& bv = g.value(bi);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (g.needs_grad(bi)) {
      Tensor& gb = g.grad_ref(bi);
      const Tensor& av = g.value(ai);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

Var mul_col(Var a, Var col) {
  same_graph(a, col, "mul_col");
  const Tensor& x = a.value();
  const Tensor& c = col.value();
  if (c.cols() != 1 || c.rows() != x.rows()) {
    throw DimensionError("mul_col: column " + c.shape_string() + " does not match " + x.shape_string());
  }
  Tensor out = x;
  const std::size_t n = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) *= c[i];
  const std::size_t ai = a.id, ci = col.id;
  return a.graph->push(std::move(out), {ai, ci}, [ai, ci, n](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_ref(self);
    const Tensor& x = g.value(ai);
    const Tensor& c = g.value(ci);
    if (g.needs_grad(ai)) {
      Tensor& ga = g.grad_ref(ai);
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < n; ++j) ga(i, j) += gy(i, j) * c[i];
    }
    if (g.needs_grad(ci)) {
      Tensor& gc = g.grad_ref(ci);
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < n; ++j) gc[i] += gy(i, j) * x(i, j);
    }
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.elems()) v *= c;
  const std::size_t ai = a.id;
  return a.graph->push(std::move(out), {ai}, [ai, c](Graph& g, std::size_t self) {
    if (g.needs_grad(ai)) axpy(g.grad_ref(ai), g.grad_ref(self), c);
  });
}

Var scale_by(Var a, Var s) {
  same_graph(a, s, "scale_by");
  const double c = s.value().item();
  Tensor out = a.value();
  for (double& v : out.elems()) v *= c;
  const std::size_t ai = a.id, si = s.id;
  return a.graph->push(std::move(out), {ai, si}, [ai, si](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_ref(self);
    if (g.needs_grad(ai)) axpy(g.grad_ref(ai), gy, g.value(si)[0]);
    if (g.needs_grad(si)) {
      const Tensor& x = g.value(ai);
      double acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) acc += gy[i] * x[i];
      g.grad_ref(si)[0] += acc;
    }
  });
}

Var add_scalar(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.elems()) v += c;
  const std::size_t ai = a.id;
  return a.graph->push(std::move(out), {ai}, [ai](Graph& g, std::size_t self) {
    if (g.needs_grad(ai)) axpy(g.grad_ref(ai), g.grad_ref(self));
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var relu(Var a) {
  // NaN passes through so a diverged input still surfaces in the loss.
  return unary(a, [](double x) { return x > 0.0 || std::isnan(x) ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var softplus(Var a) {
  return unary(
      a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var reciprocal(Var a) {
  return unary(a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

Var softmax_rows(Var a) {
  Tensor out;
  kernels::softmax_rows(a.value(), out);
  const std::size_t ai = a.id;
  return a.graph->push(std::move(out), {ai}, [ai](Graph& g, std::size_t self) {
    if (!g.needs_grad(ai)) return;
    const Tensor& gy = g.grad_ref(self);
    const Tensor& y = g.value(self);
    Tensor& ga = g.grad_ref(ai);
    const std::size_t n = y.cols();
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gy(i, j) * y(i, j);
      for (std::size_t j = 0; j < n; ++j) ga(i, j) += y(i, j) * (gy(i, j) - dot);
    }
  });
}

Var rbf_gram(Var q, Var k, Var log_lengthscale) {
  same_graph(q, k, "rbf_gram");
  same_graph(q, log_lengthscale, "rbf_gram");
  const double ell = std::exp(log_lengthscale.value().item());
  Tensor gram;
  Tensor sqdist;
  kernels::rbf_gram(q.value(), k.value(), ell, gram, &sqdist);
  const std::size_t qi = q.id, ki = k.id, li = log_lengthscale.id;
  return q.graph->push(std::move(gram), {qi, ki, li},
                       [qi, ki, li, sqdist = std::move(sqdist)](Graph& g, std::size_t self) {
                         const Tensor& gy = g.grad_ref(self);
                         const Tensor& G = g.value(self);
                         const double ell = std::exp(g.value(li)[0]);
                         const double inv_l2 = 1.0 / (ell * ell);
                         const std::size_t m = G.rows(), n = G.cols();
                         // w = dL/dG * G; dL/dD = -w / (2 l^2)
                         Tensor w = Tensor::matrix(m, n);
                         for (std::size_t i = 0; i < G.size(); ++i) w[i] = gy[i] * G[i];
                         if (g.needs_grad(li)) {
                           double acc = 0.0;
                           for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * sqdist[i];
                           g.grad_ref(li)[0] += acc * inv_l2;
                         }
                         const bool gq = g.needs_grad(qi), gk = g.needs_grad(ki);
                         if (!gq && !gk) return;
                         // dD/dq_i = 2 (q_i - k_j); fold the -1/(2 l^2) factor in.
                         Tensor dd = w;
                         for (double& v : dd.elems()) v *= -inv_l2;
                         const Tensor& Q = g.value(qi);
                         const Tensor& K = g.value(ki);
                         const std::size_t d = Q.cols();
                         if (gq) {
                           Tensor& gQ = g.grad_ref(qi);
                           kernels::matmul_acc(scale_copy(dd, -1.0), K, gQ);
                           for (std::size_t i = 0; i < m; ++i) {
                             double rs = 0.0;
                             for (std::size_t j = 0; j < n; ++j) rs += dd(i, j);
                             for (std::size_t t = 0; t < d; ++t) gQ(i, t) += rs * Q(i, t);
                           }
                         }
                         if (gk) {
                           Tensor& gK = g.grad_ref(ki);
                           kernels::matmul_tn_acc(scale_copy(dd, -1.0), Q, gK);
                           for (std::size_t j = 0; j < n; ++j) {
                             double cs = 0.0;
                             for (std::size_t i = 0; i < m; ++i) cs += dd(i, j);
                             for (std::size_t t = 0; t < d; ++t) gK(j, t) += cs * K(j, t);
                           }
                         }
                       });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  for (const Var& p : parts) {
    same_graph(parts[0], p, "concat_cols");
    if (p.rows() != m) throw DimensionError("concat_cols: row count mismatch");
    ids.push_back(p.id);
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor out = Tensor::matrix(m, total);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(v.data() + i * v.cols(), v.cols(), out.data() + i * total + off);
    off += v.cols();
  }
  return parts[0].graph->push(std::move(out), ids, [ids, widths, total](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_ref(self);
    std::size_t off = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (g.needs_grad(ids[p])) {
        Tensor& gp = g.grad_ref(ids[p]);
        for (std::size_t i = 0; i < gy.rows(); ++i)
          for (std::size_t j = 0; j < widths[p]; ++j) gp(i, j) += gy[i * total + off + j];
      }
      off += widths[p];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  const std::size_t n = parts[0].cols();
  std::size_t total = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    same_graph(parts[0], p, "concat_rows");
    if (p.cols() != n) throw DimensionError("concat_rows: column count mismatch");
    ids.push_back(p.id);
    total += p.rows();
  }
  Tensor out = Tensor::matrix(total, n);
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().elems().begin(), p.value().elems().end(), out.data() + off);
    off += p.value().size();
  }
  return parts[0].graph->push(std::move(out), ids, [ids](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_ref(self);
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t sz = g.value(id).size();
      if (g.needs_grad(id)) {
        Tensor& gp = g.grad_ref(id);
        for (std::size_t i = 0; i < sz; ++i) gp[i] += gy[off + i];
      }
      off += sz;
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& x = a.value();
  if (begin + count > x.cols()) throw DimensionError("slice_cols: range out of bounds for " + x.shape_string());
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = Tensor::matrix(m, count);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(x.data() + i * n + begin, count, out.data() + i * count);
  const std::size_t ai = a.id;
  return a.graph->push(std::move(out), {ai}, [ai, begin, count, n](Graph& g, std::size_t self) {
    if (!g.needs_grad(ai)) return;
    const Tensor& gy = g.grad_ref(self);
    Tensor& ga = g.grad_ref(ai);
    for (std::size_t i = 0; i < gy.rows(); ++i)
      for (std::size_t j = 0; j < count; ++j) ga[i * n + begin + j] += gy(i, j);
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tensor out = metafun::slice_rows(a.value(), begin, count);
  const std::size_t ai = a.id;
  const std::size_t n = a.cols();
  return a.graph->push(std::move(out), {ai}, [ai, begin, n](Graph& g, std::size_t self) {
    if (!g.needs_grad(ai)) return;
    const Tensor& gy = g.grad_ref(self);
    Tensor& ga = g.grad_ref(ai);
    for (std::size_t i = 0; i < gy.size(); ++i) ga[begin * n + i] += gy[i];
  });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  Tensor out = a.value().reshaped(rows, cols);
  const std::size_t ai = a.id;
  return a.graph->push(std::move(out), {ai}, [ai](Graph& g, std::size_t self) {
    if (g.needs_grad(ai)) axpy(g.grad_ref(ai), g.grad_ref(self));
  });
}

Var group_sum_rows(Var a, std::size_t group) {
  const Tensor& x = a.value();
  if (group == 0 || x.rows() % group != 0) throw DimensionError("group_sum_rows: rows not divisible by group");
  const std::size_t n = x.rows() / group, w = x.cols();
  Tensor out = Tensor::matrix(n, w);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < w; ++j) out(i / group, j) += x(i, j);
  const std::size_t ai = a.id;
  return a.graph->push(std::move(out), {ai}, [ai, group, w](Graph& g, std::size_t self) {
    if (!g.needs_grad(ai)) return;
    const Tensor& gy = g.grad_ref(self);
    Tensor& ga = g.grad_ref(ai);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < w; ++j) ga(i, j) += gy(i / group, j);
  });
}

Var repeat_rows(Var a, std::size_t group) {
  const Tensor& x = a.value();
  if (group == 0) throw DimensionError("repeat_rows: zero group");
  const std::size_t w = x.cols();
  Tensor out = Tensor::matrix(x.rows() * group, w);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = x(i / group, j);
  const std::size_t ai = a.id;
  return a.graph->push(std::move(out), {ai}, [ai, group, w](Graph& g, std::size_t self) {
    if (!g.needs_grad(ai)) return;
    const Tensor& gy = g.grad_ref(self);
    Tensor& ga = g.grad_ref(ai);
    for (std::size_t i = 0; i < gy.rows(); ++i)
      for (std::size_t j = 0; j < w; ++j) ga(i / group, j) += gy(i, j);
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().elems()) s += v;
  const std::size_t ai = a.id;
  return a.graph->push(Tensor::scalar(s), {ai}, [ai](Graph& g, std::size_t self) {
    if (!g.needs_grad(ai)) return;
    const double gy = g.grad_ref(self)[0];
    for (double& v : g.grad_ref(ai).elems()) v += gy;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var rowwise_linear(Var x, Var w) {
  same_graph(x, w, "rowwise_linear");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const std::size_t m = xv.rows(), a = xv.cols();
  if (wv.rows() != m || a == 0 || wv.cols() % a != 0) {
    throw DimensionError("rowwise_linear: weights " + wv.shape_string() + " incompatible with inputs " +
                         xv.shape_string());
  }
  const std::size_t b = wv.cols() / a;
  Tensor out = Tensor::matrix(m, b);
  for (std::size_t j = 0; j < m; ++j) {
    const double* xr = xv.data() + j * a;
    const double* wr = wv.data() + j * a * b;
    for (std::size_t o = 0; o < b; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < a; ++i) s += xr[i] * wr[o * a + i];
      out(j, o) = s;
    }
  }
  const std::size_t xi = x.id, wi = w.id;
  return x.graph->push(std::move(out), {xi, wi}, [xi, wi, a, b](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_ref(self);
    const Tensor& xv = g.value(xi);
    const Tensor& wv = g.value(wi);
    const bool gx = g.needs_grad(xi), gw = g.needs_grad(wi);
    for (std::size_t j = 0; j < gy.rows(); ++j) {
      for (std::size_t o = 0; o < b; ++o) {
        const double go = gy(j, o);
        if (gx) {
          double* gxr = g.grad_ref(xi).data() + j * a;
          const double* wr = wv.data() + j * a * b + o * a;
          for (std::size_t i = 0; i < a; ++i) gxr[i] += go * wr[i];
        }
        if (gw) {
          double* gwr = g.grad_ref(wi).data() + j * a * b + o * a;
          const double* xr = xv.data() + j * a;
          for (std::size_t i = 0; i < a; ++i) gwr[i] += go * xr[i];
        }
      }
    }
  });
}

// -------------------------------------------------------------------- losses

Var mean_squared_error(Var pred, const Tensor& target) {
  require_same_shape(pred.value(), target, "mean_squared_error");
  const Tensor& p = pred.value();
  const std::size_t m = p.rows();
  if (m == 0) throw DimensionError("mean_squared_error: no rows");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - target[i]) * (p[i] - target[i]);
  const std::size_t pi = pred.id;
  return pred.graph->push(Tensor::scalar(s / static_cast<double>(m)), {pi},
                          [pi, target, m](Graph& g, std::size_t self) {
                            if (!g.needs_grad(pi)) return;
                            const double c = 2.0 * g.grad_ref(self)[0] / static_cast<double>(m);
                            const Tensor& p = g.value(pi);
                            Tensor& gp = g.grad_ref(pi);
                            for (std::size_t i = 0; i < p.size(); ++i) gp[i] += c * (p[i] - target[i]);
                          });
}

Var mean_gaussian_nll(Var mu, Var sigma, const Tensor& target) {
  same_graph(mu, sigma, "mean_gaussian_nll");
  require_same_shape(mu.value(), target, "mean_gaussian_nll");
  require_same_shape(sigma.value(), target, "mean_gaussian_nll");
  const Tensor& mv = mu.value();
  const Tensor& sv = sigma.value();
  const std::size_t m = mv.rows();
  if (m == 0) throw DimensionError("mean_gaussian_nll: no rows");
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double s = 0.0;
  for (std::size_t i = 0; i < mv.size(); ++i) {
    const double z = (target[i] - mv[i]) / sv[i];
    s += half_log_2pi + std::log(sv[i]) + 0.5 * z * z;
  }
  const std::size_t mi = mu.id, si = sigma.id;
  return mu.graph->push(Tensor::scalar(s / static_cast<double>(m)), {mi, si},
                        [mi, si, target, m](Graph& g, std::size_t self) {
                          const double c = g.grad_ref(self)[0] / static_cast<double>(m);
                          const Tensor& mv = g.value(mi);
                          const Tensor& sv = g.value(si);
                          const bool gm = g.needs_grad(mi), gs = g.needs_grad(si);
                          for (std::size_t i = 0; i < mv.size(); ++i) {
                            const double r = target[i] - mv[i];
                            const double inv = 1.0 / sv[i];
                            if (gm) g.grad_ref(mi)[i] += c * (-r * inv * inv);
                            if (gs) g.grad_ref(si)[i] += c * (inv - r * r * inv * inv * inv);
                          }
                        });
}

Var mean_softmax_cross_entropy(Var logits, const Tensor& targets) {
  require_same_shape(logits.value(), targets, "mean_softmax_cross_entropy");
  const Tensor& z = logits.value();
  const std::size_t m = z.rows(), k = z.cols();
  if (m == 0) throw DimensionError("mean_softmax_cross_entropy: no rows");
  const double floor_log = std::log(kProbabilityFloor);
  Tensor probs;
  kernels::softmax_rows(z, probs);
  // Entries whose log-probability is clipped at the floor carry no gradient.
  Tensor active = Tensor::matrix(m, k);
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* zr = z.data() + i * k;
    const double mx = *std::max_element(zr, zr + k);
    double tot = 0.0;
    for (std::size_t j = 0; j < k; ++j) tot += std::exp(zr[j] - mx);
    const double lse = mx + std::log(tot);
    for (std::size_t j = 0; j < k; ++j) {
      const double lp = zr[j] - lse;
      const bool clipped = lp < floor_log;
      active(i, j) = clipped ? 0.0 : 1.0;
      s -= targets(i, j) * (clipped ? floor_log : lp);
    }
  }
  const std::size_t li = logits.id;
  return logits.graph->push(
      Tensor::scalar(s / static_cast<double>(m)), {li},
      [li, targets, probs = std::move(probs), active = std::move(active), m, k](Graph& g, std::size_t self) {
        if (!g.needs_grad(li)) return;
        const double c = g.grad_ref(self)[0] / static_cast<double>(m);
        Tensor& gz = g.grad_ref(li);
        for (std::size_t i = 0; i < m; ++i) {
          double mass = 0.0;
          for (std::size_t j = 0; j < k; ++j) mass += targets(i, j) * active(i, j);
          for (std::size_t j = 0; j < k; ++j)
            gz(i, j) += c * (probs(i, j) * mass - targets(i, j) * active(i, j));
        }
      });
}

}  // namespace metafun
