#include <benchmark/benchmark.h>

#include <random>

#include "padrec/kernels.hpp"

namespace {

padrec::Tensor random_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  padrec::Tensor t({n, d});
  for (auto& v : t.values()) v = g(rng);
  return t;
}

void bm_mmd_biased(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_matrix(n, 64, 1), y = random_matrix(n, 64, 2);
  const auto bank = padrec::default_gaussian_bank();
  for (auto _ : state) benchmark::DoNotOptimize(padrec::mmd2_biased(x, y, bank));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(bm_mmd_biased)->RangeMultiplier(2)->Range(16, 256)->Complexity(benchmark::oNSquared);

// forward plus backward through the tape, the per-batch cost of the align phase
void bm_mmd_backward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  padrec::Parameter px("x", random_matrix(n, 64, 3)), py("y", random_matrix(n, 64, 4));
  const auto bank = padrec::default_gaussian_bank();
  for (auto _ : state) {
    padrec::Tape tape(true);
    auto loss = padrec::mmd2_biased(tape.param(px), tape.param(py), bank);
    tape.backward(loss);
    benchmark::DoNotOptimize(px.grad.data());
  }
}
BENCHMARK(bm_mmd_backward)->Arg(32)->Arg(64)->Arg(128);

void bm_permutation_test(benchmark::State& state) {
  const auto x = random_matrix(64, 16, 5), y = random_matrix(64, 16, 6);
  const auto bank = padrec::default_gaussian_bank();
  for (auto _ : state) benchmark::DoNotOptimize(padrec::mmd_permutation_test(x, y, bank, 100, 7).p_value);
}
BENCHMARK(bm_permutation_test);

}  // namespace
