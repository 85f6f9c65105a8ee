#pragma once

#include <cstddef>

#include "metafun/tensor.hpp"

// Dense kernels behind the autodiff graph. The default entry points are the
// optimised ones (Eigen GEMM, OpenMP row-parallel elementwise kernels); the
// `reference` namespace keeps plain serial loops that tests and the benchmark
// compare against.
namespace metafun::kernels {

enum class Transpose { no, yes };

/// C = op(A) * op(B) + beta * C, row-major, op(A) is [m,k], op(B) is [k,n].
void gemm(Transpose ta, Transpose tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double beta, double* c);

Tensor matmul(const Tensor& a, const Tensor& b);     // a * b
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // a^T * b

// Accumulating forms used by backward passes: out += ...
void matmul_acc(const Tensor& a, const Tensor& b, Tensor& out);
void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& out);
void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out);

/// G[i,j] = exp(-|q_i - k_j|^2 / (2 l^2)); squared distances kept in `sqdist`
/// when non-null (needed for the lengthscale gradient).
void rbf_gram(const Tensor& q, const Tensor& k, double lengthscale, Tensor& gram, Tensor* sqdist);

/// Row-wise softmax with max subtraction.
void softmax_rows(const Tensor& a, Tensor& out);

/// Rows above which the elementwise kernels fork an OpenMP team (when not
/// already inside a parallel region).
inline constexpr std::size_t kParallelRowThreshold = 256;

namespace reference {

void gemm(Transpose ta, Transpose tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double beta, double* c);
Tensor matmul(const Tensor& a, const Tensor& b);
void rbf_gram(const Tensor& q, const Tensor& k, double lengthscale, Tensor& gram);
void softmax_rows(const Tensor& a, Tensor& out);

}  // namespace reference

}  // namespace metafun::kernels
