#include <cmath>
#include <memory>

#include "doctest.h"
#include "fklab/errors.hpp"
#include "fklab/feynman_kac.hpp"
#include "fklab/girsanov.hpp"
#include "fklab/reference.hpp"

using namespace fklab;

namespace {

FKProblem gaussian_problem(double c) {
  FKProblem p;
  p.spec = DiffusionSpec::brownian(1, 1.0, InitialLaw::gaussian({0.0}, 1.0));
  p.potential = [c](double, std::span<const double>) { return c; };
  p.terminal = [](std::span<const double> x) { return std::exp(-0.5 * x[0] * x[0]); };
  p.initial_weight = [](std::span<const double>) { return 1.0; };
  return p;
}

// g(t, x) for Brownian motion, V = c and g_T = exp(-x^2/2).
double g_exact(double c, double t, double x) {
  const double s = 2 - t;
  return std::exp(c * (1 - t)) / std::sqrt(s) * std::exp(-x * x / (2 * s));
}

}  // namespace

TEST_CASE("backward field matches the closed form within its error bars") {
  const FKProblem p = gaussian_problem(0.3);
  const PathEnsemble e = simulate(p.spec, TimeGrid::uniform(1.0, 32), 40000, 17);
  const SpaceBox box = SpaceBox::uniform(1, -3.0, 3.0, 30);
  const ScalarField g = fk_solve_backward(p, e, box);
  std::size_t valid = 0, within = 0;
  for (std::size_t k : {0u, 16u, 31u})
    for (std::size_t c = 0; c < box.total_cells(); ++c) {
      if (!g.valid(k, c)) continue;
      ++valid;
      const double ex = g_exact(0.3, e.grid().time(k), box.center(c)[0]);
      // 1e-2 relative covers the cell-averaging bias of the curved closed form.
      if (std::abs(g.value(k, c) - ex) <= 3 * g.std_error[g.at(k, c)] + 1e-2 * ex) ++within;
    }
  CHECK(valid > 60);
  CHECK(static_cast<double>(within) >= 0.95 * static_cast<double>(valid));
  // Last knot is g_T itself up to cell averaging.
  CHECK(g.value(32, 15) == doctest::Approx(g_exact(0.3, 1.0, box.center(15)[0])).epsilon(0.01));
}

TEST_CASE("parallel backward field agrees with the serial reference") {
  const FKProblem p = gaussian_problem(-0.2);
  const PathEnsemble e = simulate(p.spec, TimeGrid::uniform(1.0, 16), 6000, 3);
  const SpaceBox box = SpaceBox::uniform(1, -3.0, 3.0, 12);
  const ScalarField a = fk_solve_backward(p, e, box);
  FieldOptions serial;
  serial.execution = Execution::Serial;
  const ScalarField s = fk_solve_backward(p, e, box, serial);
  const ScalarField r = reference::fk_backward(p, e, box);
  CHECK(a.values == s.values);
  CHECK(a.mask == r.mask);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    if (!a.mask[i]) continue;
    CHECK(a.values[i] == doctest::Approx(r.values[i]).epsilon(1e-12));
    CHECK(a.std_error[i] == doctest::Approx(r.std_error[i]).epsilon(1e-9));
  }
}

TEST_CASE("constant potential with unit data gives an exact exponential") {
  FKProblem p = gaussian_problem(0.5);
  p.terminal = [](std::span<const double>) { return 1.0; };
  const PathEnsemble e = simulate(p.spec, TimeGrid::uniform(1.0, 8), 4000, 5);
  const SpaceBox box = SpaceBox::uniform(1, -2.0, 2.0, 8);
  const ScalarField g = fk_solve_backward(p, e, box);
  for (std::size_t k = 0; k <= 8; ++k)
    for (std::size_t c = 0; c < 8; ++c)
      if (g.valid(k, c)) CHECK(g.value(k, c) == doctest::Approx(std::exp(0.5 * (1 - e.grid().time(k)))).epsilon(1e-12));
  const ScalarField f = fk_solve_forward(p, e, box);
  for (std::size_t c = 0; c < 8; ++c)
    if (f.valid(8, c)) CHECK(f.value(8, c) == doctest::Approx(std::exp(0.5)).epsilon(1e-12));
}

TEST_CASE("semigroup composition reproduces the one-stage field") {
  const FKProblem p = gaussian_problem(0.3);
  const PathEnsemble e = simulate(p.spec, TimeGrid::uniform(1.0, 16), 30000, 8);
  const SpaceBox box = SpaceBox::uniform(1, -3.0, 3.0, 20);
  const ScalarField g = fk_solve_backward(p, e, box);
  // Both routes start from the same terminal slice on the box.
  FieldSlice uT = g.slice(16);
  for (std::size_t c = 0; c < uT.values.size(); ++c) {
    uT.values[c] = p.terminal(box.center(c));
    uT.std_error[c] = 0;
    uT.mask[c] = 1;
  }
  const SemigroupResult one = fk_semigroup_apply(p, e, 0, 16, uT);
  const SemigroupResult mid = fk_semigroup_apply(p, e, 8, 16, uT);
  const SemigroupResult two = fk_semigroup_apply(p, e, 0, 8, mid.slice);
  const SemigroupCheck chk = compare_slices(one.slice, two.slice, 2.0);
  CHECK(chk.joint_cells > 10);
  CHECK(chk.fraction >= 0.9);
  // A slice always agrees with itself, including exact zero-error slices.
  FieldSlice s = g.slice(0);
  std::fill(s.std_error.begin(), s.std_error.end(), 0.0);
  CHECK(compare_slices(s, s).fraction == 1.0);
}

TEST_CASE("log transform floors small values") {
  ScalarField g(TimeGrid::uniform(1.0, 1), SpaceBox::uniform(1, 0.0, 1.0, 4));
  const double vals[] = {1.0, 1e-5, 0.5, 2.0};
  for (std::size_t c = 0; c < 4; ++c) {
    g.values[g.at(0, c)] = vals[c];
    g.mask[g.at(0, c)] = 1;
  }
  const LogTransformResult r = log_transform(g);
  CHECK(r.floor == doctest::Approx(2e-3));
  CHECK(r.below_floor == 1);
  CHECK(r.psi.valid(0, 0));
  CHECK_FALSE(r.psi.valid(0, 1));
  CHECK(r.psi.value(0, 3) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("weights normalize to mean one") {
  const auto e = std::make_shared<PathEnsemble>(PathEnsemble(TimeGrid::uniform(1.0, 1), 1, 4));
  const WeightedEnsemble w = make_weighted(e, {0.0, std::log(3.0), -std::numeric_limits<double>::infinity(), 0.0});
  CHECK(w.killed == 1);
  double s = 0;
  for (double v : w.weights) s += v;
  CHECK(s / 4 == doctest::Approx(1.0));
  CHECK(w.weights[1] == doctest::Approx(3 * w.weights[0]));
  CHECK(w.log_normalizer == doctest::Approx(std::log(5.0 / 4)));
  CHECK(w.ess == doctest::Approx(25.0 / 11));
  const double ninf = -std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(make_weighted(e, {ninf, ninf, ninf, ninf}), Error);
}

TEST_CASE("FK weights agree with the reference log weights") {
  const FKProblem p = gaussian_problem(0.4);
  const auto e = std::make_shared<PathEnsemble>(simulate(p.spec, TimeGrid::uniform(1.0, 16), 2000, 1));
  const WeightedEnsemble w = fk_weights(p, e);
  const auto ref = reference::fk_log_weights(p, *e);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(w.log_weights[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("relative entropy of an exponential tilt") {
  // g_T = e^{l x}: P is Brownian motion with drift l from N(l, 1), so H = l^2/2 + l^2 T/2.
  const double l = 0.6;
  FKProblem p = gaussian_problem(0.0);
  p.terminal = [l](std::span<const double> x) { return std::exp(l * x[0]); };
  const auto e = std::make_shared<PathEnsemble>(simulate(p.spec, TimeGrid::uniform(1.0, 32), 60000, 4));
  const WeightedEnsemble w = fk_weights(p, e);
  const EntropyEstimate H = relative_entropy(w);
  CHECK(std::abs(H.value - l * l) < 4 * H.std_error + 0.01);
  // psi = log g = l x + l^2 (T - t) / 2 has gradient l; the kinetic term is l^2 T / 2.
  const SpaceBox box = SpaceBox::uniform(1, -4.0, 4.0, 40);
  ScalarField psi(e->grid(), box);
  for (std::size_t k = 0; k < psi.rows(); ++k)
    for (std::size_t c = 0; c < psi.cells(); ++c) {
      psi.values[psi.at(k, c)] = l * box.center(c)[0] + 0.5 * l * l * (1 - e->grid().time(k));
      psi.mask[psi.at(k, c)] = 1;
    }
  const EntropyDecomposition d = decompose_entropy(w, psi, p.spec);
  CHECK(d.kinetic == doctest::Approx(0.5 * l * l).epsilon(0.05));
  CHECK(d.h0 == doctest::Approx(0.5 * l * l).epsilon(0.15));
  CHECK(d.coverage > 0.9);
}

TEST_CASE("entropy chain bound holds between two tilts") {
  FKProblem p = gaussian_problem(0.0), q = gaussian_problem(0.0);
  p.terminal = [](std::span<const double> x) { return std::exp(0.5 * x[0]); };
  q.terminal = [](std::span<const double> x) { return std::exp(0.3 * x[0]); };
  const auto e = std::make_shared<PathEnsemble>(simulate(p.spec, TimeGrid::uniform(1.0, 8), 20000, 6));
  const ChainBound b = entropy_chain_bound(fk_weights(p, e), fk_weights(q, e));
  CHECK(b.holds);
  CHECK(b.lhs <= b.rhs);
}

TEST_CASE("Born factorization of the time marginal") {
  const FKProblem p = gaussian_problem(0.3);
  const TimeGrid grid = TimeGrid::uniform(1.0, 16);
  const auto e = std::make_shared<PathEnsemble>(simulate(p.spec, grid, 40000, 12));
  const PathEnsemble indep = simulate(p.spec, grid, 40000, 13);
  const SpaceBox box = SpaceBox::uniform(1, -4.0, 4.0, 40);
  const ScalarField g = fk_solve_backward(p, indep, box), f = fk_solve_forward(p, indep, box);
  const BornResult r = born_marginal_check(fk_weights(p, e), f, g, 8);
  CHECK(r.tv < 0.05);
  CHECK(r.coverage > 0.9);
}
