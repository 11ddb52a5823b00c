// Serial reference kernels against the OpenMP kernels on one Brownian workload.
#include <benchmark/benchmark.h>

#include <cmath>
#include <memory>

#include "fklab/diffusion.hpp"
#include "fklab/feynman_kac.hpp"
#include "fklab/girsanov.hpp"
#include "fklab/reference.hpp"
#include "fklab/stochastic_calculus.hpp"

namespace {

using namespace fklab;

FKProblem problem() {
  FKProblem p;
  p.spec = DiffusionSpec::brownian(1, 1.0, InitialLaw::gaussian({0.0}, 1.0));
  p.potential = [](double, std::span<const double>) { return 0.3; };
  p.terminal = [](std::span<const double> x) { return std::exp(-0.5 * x[0] * x[0]); };
  p.initial_weight = [](std::span<const double>) { return 1.0; };
  return p;
}

const PathEnsemble& shared_ensemble() {
  static const PathEnsemble e = simulate(problem().spec, TimeGrid::uniform(1.0, 128), 20000, 11);
  return e;
}

const SpaceBox kBox = SpaceBox::uniform(1, -4.0, 4.0, 40);

void BM_SimulateReference(benchmark::State& st) {
  const FKProblem p = problem();
  for (auto _ : st)
    benchmark::DoNotOptimize(reference::simulate(p.spec, TimeGrid::uniform(1.0, 128), st.range(0), 11));
}

void BM_SimulateParallel(benchmark::State& st) {
  const FKProblem p = problem();
  for (auto _ : st)
    benchmark::DoNotOptimize(simulate(p.spec, TimeGrid::uniform(1.0, 128), st.range(0), 11, Execution::Parallel));
}

void BM_BackwardReference(benchmark::State& st) {
  const FKProblem p = problem();
  for (auto _ : st) benchmark::DoNotOptimize(reference::fk_backward(p, shared_ensemble(), kBox));
}

void BM_BackwardSerial(benchmark::State& st) {
  const FKProblem p = problem();
  FieldOptions o;
  o.execution = Execution::Serial;
  for (auto _ : st) benchmark::DoNotOptimize(fk_solve_backward(p, shared_ensemble(), kBox, o));
}

void BM_BackwardParallel(benchmark::State& st) {
  const FKProblem p = problem();
  for (auto _ : st) benchmark::DoNotOptimize(fk_solve_backward(p, shared_ensemble(), kBox));
}

void BM_DerivativeReference(benchmark::State& st) {
  const ScalarFn u = [](double, std::span<const double> x) { return x[0] * x[0]; };
  for (auto _ : st) benchmark::DoNotOptimize(reference::plain_forward_derivative(shared_ensemble(), u, 8, kBox));
}

void BM_DerivativeParallel(benchmark::State& st) {
  const ScalarFn u = [](double, std::span<const double> x) { return x[0] * x[0]; };
  for (auto _ : st) benchmark::DoNotOptimize(forward_derivative(shared_ensemble(), u, 8.0 / 128, kBox));
}

}  // namespace

BENCHMARK(BM_SimulateReference)->Arg(20000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SimulateParallel)->Arg(20000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DerivativeReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DerivativeParallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
