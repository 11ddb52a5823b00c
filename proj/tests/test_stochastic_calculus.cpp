#include <cmath>
#include <random>

#include "doctest.h"
#include "fklab/errors.hpp"
#include "fklab/reference.hpp"
#include "fklab/stochastic_calculus.hpp"

using namespace fklab;

namespace {

// Share of valid cells in the listed rows with |est - exact| <= z se + slack.
template <class Exact>
double share_within(const ScalarField& f, const std::vector<std::size_t>& rows, Exact&& exact, double z,
                    double slack = 0) {
  std::size_t valid = 0, ok = 0;
  for (std::size_t k : rows)
    for (std::size_t c = 0; c < f.cells(); ++c) {
      if (!f.valid(k, c)) continue;
      ++valid;
      const double ex = exact(f.grid.time(k), f.box.center(c)[0]);
      if (std::abs(f.value(k, c) - ex) <= z * f.std_error[f.at(k, c)] + slack) ++ok;
    }
  REQUIRE(valid > 0);
  return static_cast<double>(ok) / static_cast<double>(valid);
}

}  // namespace

TEST_CASE("box convolution contracts L1 and L2 norms") {
  const TimeGrid g = TimeGrid::uniform(1.0, 50);
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(g.knots());
    for (double& x : v) x = nd(rng) * (1 + trial % 7);
    for (double h : {0.02, 0.1, 0.34})
      for (KernelShape shape : {KernelShape::LeftBox, KernelShape::RightBox}) {
        const auto w = convolve_time(g, v, {shape, h}, BoundaryMode::Truncate);
        for (double p : {1.0, 2.0}) CHECK(trapezoid_norm(g, w, p) <= trapezoid_norm(g, v, p) + 1e-12);
      }
  }
}

TEST_CASE("convolution error grows with the bandwidth for Lipschitz series") {
  const TimeGrid g = TimeGrid::uniform(2.0, 200);
  std::vector<double> v(g.knots());
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = std::sin(3 * g.time(k)) + 0.5 * std::abs(g.time(k) - 1);
  double prev = 0;
  for (double h : {0.01, 0.02, 0.05, 0.1, 0.2, 0.4}) {
    auto w = convolve_time(g, v, {KernelShape::LeftBox, h}, BoundaryMode::Truncate);
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= v[k];
    const double d = trapezoid_norm(g, w, 2);
    CHECK(d >= prev);
    prev = d;
  }
}

TEST_CASE("renormalized convolution keeps constants and linear series exact inside") {
  const TimeGrid g = TimeGrid::uniform(1.0, 20);
  std::vector<double> c(g.knots(), 2.5), lin(g.knots());
  for (std::size_t k = 0; k < lin.size(); ++k) lin[k] = 4 * g.time(k);
  for (double x : convolve_time(g, c, {KernelShape::RightBox, 0.2})) CHECK(x == doctest::Approx(2.5));
  const auto w = convolve_time(g, lin, {KernelShape::LeftBox, 0.2});
  CHECK(w[0] == doctest::Approx(0.4));
  CHECK(w[10] == doctest::Approx(2.4));
  CHECK_THROWS_AS(convolve_time(g, c, {KernelShape::LeftBox, 0.01}), Error);
  CHECK(trapezoid_norm(g, c, 2) == doctest::Approx(2.5));
}

TEST_CASE("generator of Brownian motion on x^2 is the diffusion coefficient") {
  const double eps = 0.8;
  const auto spec = DiffusionSpec::brownian(1, 1.0, InitialLaw::gaussian({0.0}, 1.0), eps);
  const PathEnsemble e = simulate(spec, TimeGrid::uniform(1.0, 32), 20000, 2);
  const SpaceBox box = SpaceBox::uniform(1, -2.0, 2.0, 10);
  const ScalarFn sq = [](double, std::span<const double> x) { return x[0] * x[0]; };
  const DerivativeEstimate d = forward_derivative(e, sq, 0.125, box);
  CHECK(d.steps == 4);
  CHECK(d.has_half);
  CHECK(d.has_quarter);
  CHECK(share_within(d.raw, {0, 8, 16}, [&](double, double) { return eps; }, 4) >= 0.9);
  const ScalarFn x = [](double, std::span<const double> y) { return y[0]; };
  const DerivativeEstimate G = carre_du_champ(e, x, x, 0.125, box);
  CHECK(share_within(G.raw, {0, 8, 16}, [&](double, double) { return eps; }, 4) >= 0.9);
  // Functions of time alone have an exact, noiseless derivative.
  const ScalarFn t2 = [](double t, std::span<const double>) { return 3 * t; };
  const DerivativeEstimate dt = forward_derivative(e, t2, 0.125, box);
  for (std::size_t c = 0; c < 10; ++c)
    if (dt.raw.valid(4, c)) CHECK(dt.raw.value(4, c) == doctest::Approx(3.0).epsilon(1e-12));
  // Backward increments look into the past: (u(t - h) - u(t)) / h is -3 here.
  const DerivativeEstimate bt = backward_derivative(e, t2, 0.125, box);
  for (std::size_t c = 0; c < 10; ++c)
    if (bt.raw.valid(16, c)) CHECK(bt.raw.value(16, c) == doctest::Approx(-3.0).epsilon(1e-12));
}

TEST_CASE("plain derivative agrees with the serial reference") {
  const auto spec = DiffusionSpec::ou(1, 1.0, 1.0, 1.0, InitialLaw::gaussian({0.0}, 0.5));
  const PathEnsemble e = simulate(spec, TimeGrid::uniform(1.0, 16), 5000, 7);
  const SpaceBox box = SpaceBox::uniform(1, -2.0, 2.0, 8);
  const ScalarFn u = [](double t, std::span<const double> x) { return std::sin(x[0]) + t; };
  const DerivativeEstimate d = forward_derivative(e, u, 0.125, box);
  const ScalarField r = reference::plain_forward_derivative(e, u, 2, box);
  CHECK(d.raw.mask == r.mask);
  for (std::size_t i = 0; i < r.values.size(); ++i)
    if (r.mask[i]) {
      CHECK(d.raw.values[i] == doctest::Approx(r.values[i]).epsilon(1e-10));
      CHECK(d.raw.std_error[i] == doctest::Approx(r.std_error[i]).epsilon(1e-8));
    }
  DerivativeOptions serial;
  serial.execution = Execution::Serial;
  CHECK(forward_derivative(e, u, 0.125, box, {}, serial).raw.values == d.raw.values);
}

TEST_CASE("OU drift from forward, backward and martingale-adjusted estimators") {
  const double k = 1.0;
  const auto spec = DiffusionSpec::ou(1, 1.0, k, 1.0, InitialLaw::gaussian({0.0}, 0.5));
  const PathEnsemble e = simulate(spec, TimeGrid::uniform(1.0, 32), 40000, 9);
  const SpaceBox box = SpaceBox::uniform(1, -1.5, 1.5, 12);
  const ScalarFn x = [](double, std::span<const double> y) { return y[0]; };
  auto drift = [k](double, double y) { return -k * y; };
  const DerivativeEstimate fwd = forward_derivative(e, x, 0.125, box);
  CHECK(share_within(fwd.extrapolated, {0, 8, 16}, drift, 4, 0.05) >= 0.9);
  // The stationary OU reversal is OU again, so the backward derivative also reads -k x.
  const DerivativeEstimate bwd = backward_derivative(e, x, 0.125, box);
  CHECK(share_within(bwd.extrapolated, {16, 24, 32}, drift, 4, 0.05) >= 0.9);
  DerivativeOptions ma;
  ma.estimator = DerivativeEstimator::MartingaleAdjusted;
  ma.spec = &spec;
  const DerivativeEstimate adj = forward_derivative(e, x, 0.125, box, {}, ma);
  CHECK(share_within(adj.extrapolated, {0, 8, 16}, drift, 4, 0.05) >= 0.9);
  // The control variate removes most of the noise.
  CHECK(adj.raw.std_error[adj.raw.at(8, 6)] < 0.2 * fwd.raw.std_error[fwd.raw.at(8, 6)]);
  const VectorFieldEstimate v = nelson_velocity(e, 0.125, box);
  const VectorFieldEstimate rel = nelson_velocity(e, 0.125, box, {}, &spec);
  CHECK(v.value(8, 2, 0) == doctest::Approx(-k * box.center(2)[0]).epsilon(0.2));
  CHECK(std::abs(rel.value(8, 2, 0)) < 4 * rel.error(8, 2, 0) + 0.02);
}

TEST_CASE("knot subsets leave other rows masked") {
  const auto spec = DiffusionSpec::brownian(1, 1.0, InitialLaw::gaussian({0.0}, 1.0));
  const PathEnsemble e = simulate(spec, TimeGrid::uniform(1.0, 16), 4000, 3);
  const SpaceBox box = SpaceBox::uniform(1, -2.0, 2.0, 4);
  const ScalarFn sq = [](double, std::span<const double> x) { return x[0] * x[0]; };
  DerivativeOptions o;
  o.knots = {4, 16};
  const DerivativeEstimate part = forward_derivative(e, sq, 0.125, box, {}, o);
  const DerivativeEstimate full = forward_derivative(e, sq, 0.125, box);
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK_FALSE(part.raw.valid(3, c));
    CHECK(part.raw.value(4, c) == full.raw.value(4, c));
  }
  o.knots = {17};
  CHECK_THROWS_AS(forward_derivative(e, sq, 0.125, box, {}, o), Error);
}

TEST_CASE("exit-time truncation freezes paths") {
  const auto spec = DiffusionSpec::brownian(1, 1.0, InitialLaw::point({0.0}));
  const PathEnsemble e = simulate(spec, TimeGrid::uniform(1.0, 32), 500, 3);
  const TruncatedEnsemble same = exit_time_truncate(e, std::numeric_limits<double>::infinity());
  CHECK(same.ensemble.data() == e.data());
  CHECK(same.exited == 0);
  const TruncatedEnsemble t = exit_time_truncate(e, 0.5);
  CHECK(t.exited > 0);
  CHECK(t.exit_fraction == doctest::Approx(static_cast<double>(t.exited) / 500));
  for (std::size_t i = 0; i < 500; ++i) {
    const std::size_t k = t.exit_knot[i];
    if (k == TruncatedEnsemble::never) continue;
    CHECK(std::abs(e.state(i, k)[0]) >= 0.5);
    CHECK(t.ensemble.state(i, 32)[0] == e.state(i, k)[0]);
  }
}
