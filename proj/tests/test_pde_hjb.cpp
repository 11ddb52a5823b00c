#include <cmath>

#include "doctest.h"
#include "fklab/errors.hpp"
#include "fklab/hjb.hpp"
#include "fklab/pde_oracle.hpp"

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

double g_exact(double c, double t, double x) {
  const double s = 2 - t;
  return std::exp(c * (1 - t)) / std::sqrt(s) * std::exp(-x * x / (2 * s));
}

ScalarField exact_field(const TimeGrid& grid, const SpaceBox& box, const std::function<double(double, double)>& f) {
  ScalarField out(grid, box);
  for (std::size_t k = 0; k < out.rows(); ++k)
    for (std::size_t c = 0; c < out.cells(); ++c) {
      out.values[out.at(k, c)] = f(grid.time(k), box.center(c)[0]);
      out.mask[out.at(k, c)] = 1;
    }
  return out;
}

}  // namespace

TEST_CASE("Crank-Nicolson matches the Gaussian closed form") {
  const FKProblem p = gaussian_problem(0.3);
  PdeGrid g;
  g.time = TimeGrid::uniform(1.0, 256);
  const PdeSolution s = solve_fk_backward(p, g);
  double worst = 0;
  for (std::size_t j = 0; j <= g.J; ++j) {
    const double x = g.node(j);
    if (std::abs(x) > 4) continue;
    worst = std::max(worst, std::abs(s.field.value(0, j) - g_exact(0.3, 0, x)));
  }
  CHECK(worst < 1e-4);
  CHECK(s.field.value(0, 200) == doctest::Approx(std::exp(0.3) / std::sqrt(2.0)).epsilon(1e-4));
  const PdeLogResult l = psi_from_pde(s.field);
  CHECK(l.psi.value(0, 200) == doctest::Approx(0.3 - 0.5 * std::log(2.0)).epsilon(1e-4));
}

TEST_CASE("heat flow obeys the maximum principle") {
  const FKProblem p = gaussian_problem(0.0);
  PdeGrid g;
  g.J = 200;
  g.time = TimeGrid::uniform(1.0, 64);
  const PdeSolution s = solve_fk_backward(p, g);
  CHECK(s.checked_max_principle);
  CHECK(s.max_principle);
  for (double v : s.field.values) CHECK((v >= s.data_min - 1e-12 && v <= s.data_max + 1e-12));
}

TEST_CASE("forward equation with a constant potential grows exponentially") {
  FKProblem p = gaussian_problem(0.4);
  PdeGrid g;
  g.J = 200;
  g.time = TimeGrid::uniform(1.0, 64);
  const PdeSolution s = solve_fk_forward(p, g, [](double, double) { return 0.0; });
  // Crank-Nicolson advances a constant rate by the Pade factor each step.
  const double step = (1 + 0.2 / 64) / (1 - 0.2 / 64);
  CHECK(s.field.value(64, 100) == doctest::Approx(std::pow(step, 64)).epsilon(1e-9));
  CHECK(s.field.value(64, 100) == doctest::Approx(std::exp(0.4)).epsilon(1e-5));
  PdeGrid bad = g;
  bad.J = 1;
  CHECK_THROWS_AS(solve_fk_backward(p, bad), Error);
}

TEST_CASE("grid gradient is exact on linear fields") {
  const SpaceBox box = SpaceBox::uniform(1, -2.0, 2.0, 16);
  ScalarField psi = exact_field(TimeGrid::uniform(1.0, 2), box, [](double t, double x) { return 1.5 * x - t; });
  psi.mask[psi.at(1, 7)] = 0;
  const VectorFieldEstimate g = gradient_grid(psi);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t c = 0; c < 16; ++c)
      if (g.valid(k, c)) CHECK(g.value(k, c, 0) == doctest::Approx(1.5).epsilon(1e-12));
  CHECK_FALSE(g.valid(1, 7));
  CHECK(g.valid(1, 6));
}

TEST_CASE("HJB residual vanishes on the exact solution") {
  // psi = log g for the Gaussian case; L psi = -|grad psi|^2 / 2 - V solves the HJB equation.
  const double c = 0.3;
  const FKProblem p = gaussian_problem(c);
  const TimeGrid grid = TimeGrid::uniform(1.0, 8);
  const SpaceBox box = SpaceBox::uniform(1, -3.0, 3.0, 24);
  auto grad = [](double t, double x) { return -x / (2 - t); };
  const ScalarField L = exact_field(grid, box, [&](double t, double x) { return -0.5 * grad(t, x) * grad(t, x) - c; });
  VectorFieldEstimate G(grid, box, 1);
  for (std::size_t k = 0; k < G.rows(); ++k)
    for (std::size_t cell = 0; cell < G.cells(); ++cell) {
      G.values[G.at(k, cell)] = grad(grid.time(k), box.center(cell)[0]);
      G.mask[G.at(k, cell)] = 1;
    }
  const ScalarField mass = exact_field(grid, box, [](double, double x) { return std::exp(-x * x / 2); });
  const ResidualReport r = hjb_residual(G, L, p, mass);
  CHECK(r.relative_l1 < 1e-12);
  CHECK(r.pass);
  // A wrong potential shows up at its own size.
  const ResidualReport off = hjb_residual(G, exact_field(grid, box, [&](double t, double x) {
                                            return -0.5 * grad(t, x) * grad(t, x);
                                          }),
                                          p, mass);
  CHECK_FALSE(off.pass);
  CHECK(off.l1 == doctest::Approx(c).epsilon(1e-9));
}

TEST_CASE("residual summaries respect time windows and listed times") {
  const TimeGrid grid = TimeGrid::uniform(1.0, 4);
  const SpaceBox box = SpaceBox::uniform(1, 0.0, 1.0, 2);
  ScalarField res = exact_field(grid, box, [](double t, double) { return t; });
  ScalarField scale = exact_field(grid, box, [](double, double) { return 1.0; });
  const ScalarField mass = exact_field(grid, box, [](double, double) { return 1.0; });
  ResidualOptions o;
  o.times = {0.25, 0.75};
  const ResidualReport r = summarize("t", res, scale, mass, o);
  CHECK(r.l1 == doctest::Approx(0.5));
  CHECK(r.valid_cells == 4);
  ResidualOptions w;
  w.t_max = 0.25;
  CHECK(summarize("t", res, scale, mass, w).l1 == doctest::Approx(0.125));
  ScalarField none = res;
  std::fill(none.mask.begin(), none.mask.end(), 0);
  CHECK_THROWS_AS(summarize("t", none, scale, mass, o), Error);
}

TEST_CASE("refinement check allows noise") {
  ResidualReport coarse, fine;
  coarse.l1 = 0.1;
  coarse.pooled_std_error = 0.01;
  fine.l1 = 0.11;
  fine.pooled_std_error = 0.01;
  CHECK(refinement_decreases(coarse, fine, 2));
  fine.l1 = 0.2;
  CHECK_FALSE(refinement_decreases(coarse, fine, 2));
}

TEST_CASE("FK residual is small for the PDE solution on an ensemble") {
  const FKProblem p = gaussian_problem(0.3);
  const TimeGrid grid = TimeGrid::uniform(1.0, 64);
  const PathEnsemble e = simulate(p.spec, grid, 20000, 31);
  PdeGrid pg;
  pg.J = 400;
  pg.time = grid;
  const ScalarField g = solve_fk_backward(p, pg).field;
  const SpaceBox box = SpaceBox::uniform(1, -3.0, 3.0, 24);
  const ScalarField mass = p_cell_mass(e, nullptr, box);
  FkResidualInputs in;
  in.h = 0.0625;
  in.knots = {0, 16, 32, 48};
  ResidualOptions o;
  o.times = {0.0, 0.25, 0.5, 0.75};
  const ResidualReport r = fk_residual(g, p, e, box, mass, in, o);
  CHECK(r.relative_l1 < 0.1);
  CHECK(r.valid_cells > 40);
}
