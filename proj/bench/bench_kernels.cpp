// Optimised kernels vs the serial reference loops, plus one meta-batch
// gradient in both the parallel and serial forms.

#include <benchmark/benchmark.h>

#include "metafun/kernels.hpp"
#include "metafun/rng.hpp"
#include "metafun/tasks.hpp"
#include "metafun/training.hpp"

namespace {

using namespace metafun;

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.elems()) v = rng.normal();
  return t;
}

void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::matmul(a, b));
}
void BM_matmul_reference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::reference::matmul(a, b));
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_matmul_reference)->Arg(64)->Arg(128)->Arg(256);

void BM_rbf_gram(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor q = random_matrix(n, 128, 3), k = random_matrix(20, 128, 4);
  Tensor gram, sq;
  for (auto _ : state) {
    kernels::rbf_gram(q, k, 1.0, gram, &sq);
    benchmark::DoNotOptimize(gram.data());
  }
}
void BM_rbf_gram_reference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor q = random_matrix(n, 128, 3), k = random_matrix(20, 128, 4);
  Tensor gram;
  for (auto _ : state) {
    kernels::reference::rbf_gram(q, k, 1.0, gram);
    benchmark::DoNotOptimize(gram.data());
  }
}
BENCHMARK(BM_rbf_gram)->Arg(128)->Arg(1024);
BENCHMARK(BM_rbf_gram_reference)->Arg(128)->Arg(1024);

void BM_softmax_rows(benchmark::State& state) {
  const Tensor a = random_matrix(static_cast<std::size_t>(state.range(0)), 64, 5);
  Tensor out;
  for (auto _ : state) {
    kernels::softmax_rows(a, out);
    benchmark::DoNotOptimize(out.data());
  }
}
void BM_softmax_rows_reference(benchmark::State& state) {
  const Tensor a = random_matrix(static_cast<std::size_t>(state.range(0)), 64, 5);
  Tensor out;
  for (auto _ : state) {
    kernels::reference::softmax_rows(a, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_softmax_rows)->Arg(128)->Arg(4096);
BENCHMARK(BM_softmax_rows_reference)->Arg(128)->Arg(4096);

template <bool Parallel>
void BM_meta_batch_gradient(benchmark::State& state) {
  TrainConfig c;
  c.nn_sizes = 64;
  c.decoder = DecoderChoice::concat;
  const Model model = build_model(c, TaskKind::regression, 1, 1);
  auto sampler = make_sinusoid_sampler({});
  Rng rng(6);
  std::vector<Episode> eps;
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t i = 0; i < 16; ++i) {
    eps.push_back(sampler->sample(rng, Split::train));
    seeds.push_back(i);
  }
  for (auto _ : state) {
    auto g = Parallel ? meta_batch_gradient(model, eps, seeds) : meta_batch_gradient_serial(model, eps, seeds);
    benchmark::DoNotOptimize(g.loss);
  }
}
BENCHMARK(BM_meta_batch_gradient<true>)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_meta_batch_gradient<false>)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
