#include "metafun/kernels.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "metafun/errors.hpp"

namespace metafun::kernels {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

bool fork_rows(std::size_t rows) {
#ifdef _OPENMP
  return rows >= kParallelRowThreshold && !omp_in_parallel() && omp_get_max_threads() > 1;
#else
  (void)rows;
  return false;
#endif
}

void check_inner(std::size_t lhs, std::size_t rhs, const char* what) {
  if (lhs != rhs) {
    throw DimensionError(std::string(what) + ": inner extents differ (" + std::to_string(lhs) + " vs " +
                         std::to_string(rhs) + ")");
  }
}

void check_out(const Tensor& out, std::size_t m, std::size_t n, const char* what) {
  if (out.rows() != m || out.cols() != n) throw DimensionError(std::string(what) + ": output shape mismatch");
}

double sqdist_row(const double* q, const double* k, std::size_t d) {
  double s = 0.0;
  for (std::size_t t = 0; t < d; ++t) {
    const double diff = q[t] - k[t];
    s += diff * diff;
  }
  return s;
}

void softmax_row(const double* in, double* out, std::size_t n) {
  if (n == 0) return;
  const double mx = *std::max_element(in, in + n);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(in[j] - mx);
    total += out[j];
  }
  const double inv = 1.0 / total;
  for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
}

}  // namespace

void gemm(Transpose ta, Transpose tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double beta, double* c) {
  if (m == 0 || n == 0) return;
  const auto mi = static_cast<Eigen::Index>(m);
  const auto ni = static_cast<Eigen::Index>(n);
  const auto ki = static_cast<Eigen::Index>(k);
  Map cm(c, mi, ni);
  if (beta == 0.0) {
    cm.setZero();
  } else if (beta != 1.0) {
    cm *= beta;
  }
  if (k == 0) return;
  if (ta == Transpose::no && tb == Transpose::no) {
    cm.noalias() += ConstMap(a, mi, ki) * ConstMap(b, ki, ni);
  } else if (ta == Transpose::no) {
    cm.noalias() += ConstMap(a, mi, ki) * ConstMap(b, ni, ki).transpose();
  } else if (tb == Transpose::no) {
    cm.noalias() += ConstMap(a, ki, mi).transpose() * ConstMap(b, ki, ni);
  } else {
    cm.noalias() += ConstMap(a, ki, mi).transpose() * ConstMap(b, ni, ki).transpose();
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_inner(a.cols(), b.rows(), "matmul");
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  gemm(Transpose::no, Transpose::no, a.rows(), b.cols(), a.cols(), a.data(), b.data(), 0.0, out.data());
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_inner(a.cols(), b.cols(), "matmul_nt");
  Tensor out = Tensor::matrix(a.rows(), b.rows());
  gemm(Transpose::no, Transpose::yes, a.rows(), b.rows(), a.cols(), a.data(), b.data(), 0.0, out.data());
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  check_inner(a.rows(), b.rows(), "matmul_tn");
  Tensor out = Tensor::matrix(a.cols(), b.cols());
  gemm(Transpose::yes, Transpose::no, a.cols(), b.cols(), a.rows(), a.data(), b.data(), 0.0, out.data());
  return out;
}

void matmul_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  check_inner(a.cols(), b.rows(), "matmul_acc");
  check_out(out, a.rows(), b.cols(), "matmul_acc");
  gemm(Transpose::no, Transpose::no, a.rows(), b.cols(), a.cols(), a.data(), b.data(), 1.0, out.data());
}

void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  check_inner(a.cols(), b.cols(), "matmul_nt_acc");
  check_out(out, a.rows(), b.rows(), "matmul_nt_acc");
  gemm(Transpose::no, Transpose::yes, a.rows(), b.rows(), a.cols(), a.data(), b.data(), 1.0, out.data());
}

void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  check_inner(a.rows(), b.rows(), "matmul_tn_acc");
  check_out(out, a.cols(), b.cols(), "matmul_tn_acc");
  gemm(Transpose::yes, Transpose::no, a.cols(), b.cols(), a.rows(), a.data(), b.data(), 1.0, out.data());
}

void rbf_gram(const Tensor& q, const Tensor& k, double lengthscale, Tensor& gram, Tensor* sqdist) {
  if (!(lengthscale > 0.0)) throw ConfigError("rbf_gram: lengthscale must be positive");
  check_inner(q.cols(), k.cols(), "rbf_gram");
  const std::size_t m = q.rows();
  const std::size_t n = k.rows();
  const std::size_t d = q.cols();
  gram = Tensor::matrix(m, n);
  if (sqdist) *sqdist = Tensor::matrix(m, n);
  const double scale = -0.5 / (lengthscale * lengthscale);
  const bool par = fork_rows(m);
  const auto rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (par)
  for (long i = 0; i < rows; ++i) {
    const double* qi = q.data() + static_cast<std::size_t>(i) * d;
    for (std::size_t j = 0; j < n; ++j) {
      const double s = sqdist_row(qi, k.data() + j * d, d);
      gram(static_cast<std::size_t>(i), j) = std::exp(scale * s);
      if (sqdist) (*sqdist)(static_cast<std::size_t>(i), j) = s;
    }
  }
}

void softmax_rows(const Tensor& a, Tensor& out) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  out = Tensor::matrix(m, n);
  const bool par = fork_rows(m);
  const auto rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (par)
  for (long i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    softmax_row(a.data() + r * n, out.data() + r * n, n);
  }
}

namespace reference {

void gemm(Transpose ta, Transpose tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double beta, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) {
        const double av = ta == Transpose::no ? a[i * k + t] : a[t * m + i];
        const double bv = tb == Transpose::no ? b[t * n + j] : b[j * k + t];
        s += av * bv;
      }
      c[i * n + j] = (beta == 0.0 ? 0.0 : beta * c[i * n + j]) + s;
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_inner(a.cols(), b.rows(), "reference::matmul");
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  reference::gemm(Transpose::no, Transpose::no, a.rows(), b.cols(), a.cols(), a.data(), b.data(), 0.0,
                  out.data());
  return out;
}

void rbf_gram(const Tensor& q, const Tensor& k, double lengthscale, Tensor& gram) {
  if (!(lengthscale > 0.0)) throw ConfigError("rbf_gram: lengthscale must be positive");
  check_inner(q.cols(), k.cols(), "reference::rbf_gram");
  gram = Tensor::matrix(q.rows(), k.rows());
  for (std::size_t i = 0; i < q.rows(); ++i)
    for (std::size_t j = 0; j < k.rows(); ++j)
      gram(i, j) = std::exp(-sqdist_row(q.data() + i * q.cols(), k.data() + j * k.cols(), q.cols()) /
                            (2.0 * lengthscale * lengthscale));
}

void softmax_rows(const Tensor& a, Tensor& out) {
  out = Tensor::matrix(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) softmax_row(a.data() + i * a.cols(), out.data() + i * a.cols(), a.cols());
}

}  // namespace reference

}  // namespace metafun::kernels
