#include <omp.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "fklab/diffusion.hpp"
#include "fklab/errors.hpp"
#include "fklab/reference.hpp"

using namespace fklab;

namespace {

double knot_mean(const PathEnsemble& e, std::size_t k) {
  double s = 0;
  for (std::size_t i = 0; i < e.count(); ++i) s += e.state(i, k)[0];
  return s / static_cast<double>(e.count());
}

double knot_var(const PathEnsemble& e, std::size_t k) {
  const double m = knot_mean(e, k);
  double s = 0;
  for (std::size_t i = 0; i < e.count(); ++i) s += (e.state(i, k)[0] - m) * (e.state(i, k)[0] - m);
  return s / static_cast<double>(e.count() - 1);
}

}  // namespace

TEST_CASE("time grid knots and bandwidths") {
  const TimeGrid g = TimeGrid::uniform(1.0, 64);
  CHECK(g.steps() == 64);
  CHECK(g.knots() == 65);
  CHECK(g.is_uniform());
  CHECK(g.knot_of(0.5) == 32);
  CHECK(g.knot_of(1.0) == 64);
  CHECK_THROWS_AS(g.knot_of(0.5 + 1.0 / 128), Error);
  CHECK(g.steps_for(0.25) == 16);
  CHECK_THROWS_AS(g.steps_for(0.001), Error);
  CHECK_FALSE(TimeGrid({0.0, 0.1, 0.3}).is_uniform());
  CHECK_THROWS_AS(TimeGrid({0.0, 0.2, 0.1}), Error);
}

TEST_CASE("path seeds are distinct and stable") {
  CHECK(path_seed(7, 0) == path_seed(7, 0));
  CHECK(path_seed(7, 0) != path_seed(7, 1));
  CHECK(path_seed(7, 0) != path_seed(8, 0));
  // Masters one increment apart must not give shifted copies of the same stream.
  const std::uint64_t shifted = 72ull ^ 0x9e3779b97f4a7c15ull;
  for (std::uint64_t i = 0; i < 8; ++i) CHECK(path_seed(shifted, i) != path_seed(72, i + 1));
}

TEST_CASE("simulate matches the serial reference bit for bit") {
  const auto spec = DiffusionSpec::ou(2, 1.0, 0.7, 0.5, InitialLaw::gaussian({0.0, 1.0}, 0.3));
  const TimeGrid g = TimeGrid::uniform(1.0, 32);
  const PathEnsemble par = simulate(spec, g, 3000, 42);
  const PathEnsemble ser = simulate(spec, g, 3000, 42, Execution::Serial);
  const PathEnsemble ref = reference::simulate(spec, g, 3000, 42);
  CHECK(par == ser);
  CHECK(par.data() == ref.data());
  CHECK(simulate(spec, g, 3000, 43).data() != par.data());
}

TEST_CASE("simulate is independent of the thread count") {
  const auto spec = DiffusionSpec::brownian(1, 1.0, InitialLaw::point({0.0}));
  const TimeGrid g = TimeGrid::uniform(1.0, 16);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const PathEnsemble a = simulate(spec, g, 5000, 9);
  omp_set_num_threads(3);
  const PathEnsemble b = simulate(spec, g, 5000, 9);
  omp_set_num_threads(saved);
  CHECK(a == b);
}

TEST_CASE("regenerate_path rebuilds a stored path") {
  const auto spec = DiffusionSpec::brownian(2, 1.0, InitialLaw::uniform_box({-1, -1}, {1, 1}), 0.5);
  const TimeGrid g = TimeGrid::uniform(1.0, 20);
  const PathEnsemble e = simulate(spec, g, 50, 5);
  std::vector<double> out(g.knots() * 2);
  regenerate_path(spec, g, e.seeds()[17], out);
  const auto p = e.path(17);
  CHECK(std::equal(out.begin(), out.end(), p.begin()));
}

TEST_CASE("Brownian marginals have the right moments") {
  const double eps = 0.5;
  const auto spec = DiffusionSpec::brownian(1, 1.0, InitialLaw::point({0.3}), eps);
  const PathEnsemble e = simulate(spec, TimeGrid::uniform(1.0, 8), 40000, 11);
  const double n = 40000;
  CHECK(e.state(0, 0)[0] == 0.3);
  for (std::size_t k : {4u, 8u}) {
    const double t = e.grid().time(k), v = eps * t;
    CHECK(std::abs(knot_mean(e, k) - 0.3) < 4 * std::sqrt(v / n));
    CHECK(std::abs(knot_var(e, k) - v) < 4 * v * std::sqrt(2 / n));
  }
}

TEST_CASE("OU weak error shrinks with the step") {
  // Exact: X_0 = 1, mean e^{-kT}, variance eps (1 - e^{-2kT}) / 2k. Euler bias in the mean is O(dt).
  const double k = 2, eps = 1, T = 1;
  const auto spec = DiffusionSpec::ou(1, T, k, eps, InitialLaw::point({1.0}));
  const double exact = std::exp(-k * T);
  // The Euler mean is (1 - k dt)^M, so the weak bias is available without sampling noise.
  auto bias = [&](std::size_t M) {
    return std::abs(std::pow(1 - k * T / static_cast<double>(M), static_cast<double>(M)) - exact);
  };
  CHECK(bias(64) < bias(32));
  CHECK(bias(32) / bias(64) == doctest::Approx(2.0).epsilon(0.1));
  const PathEnsemble e = simulate(spec, TimeGrid::uniform(T, 64), 40000, 21);
  const double m = knot_mean(e, 64), sd = std::sqrt(eps * (1 - std::exp(-2 * k * T)) / (2 * k));
  CHECK(std::abs(m - std::pow(1 - k * T / 64, 64)) < 4 * sd / std::sqrt(40000.0));
}

TEST_CASE("non-finite states raise with the path and step") {
  DiffusionSpec spec = DiffusionSpec::brownian(1, 1.0, InitialLaw::point({1.0}));
  spec.drift = [](double, std::span<const double> x, std::span<double> o) { o[0] = 1e200 * x[0] * x[0]; };
  try {
    simulate(spec, TimeGrid::uniform(1.0, 16), 4, 1);
    FAIL("expected NonFiniteState");
  } catch (const NonFiniteStateError& e) {
    CHECK(e.code() == ErrorCode::NonFiniteState);
    CHECK(e.step() >= 1);
  }
}

TEST_CASE("reverse flips the time order") {
  const auto spec = DiffusionSpec::brownian(1, 1.0, InitialLaw::point({0.0}));
  const PathEnsemble e = simulate(spec, TimeGrid::uniform(1.0, 10), 5, 3);
  const PathEnsemble r = reverse(e);
  CHECK(r.direction() == Direction::Reversed);
  for (std::size_t k = 0; k <= 10; ++k) CHECK(r.state(2, k)[0] == e.state(2, 10 - k)[0]);
  CHECK(reverse(r).data() == e.data());
}

TEST_CASE("trapezoid integrals along paths") {
  const auto spec = DiffusionSpec::brownian(1, 2.0, InitialLaw::point({0.0}));
  const PathEnsemble e = simulate(spec, TimeGrid::uniform(2.0, 40), 3, 3);
  // Integrand linear in t is integrated exactly.
  const ScalarFn W = [](double t, std::span<const double>) { return 3 * t + 1; };
  const auto I = integrate_along(e, W);
  for (double v : I) CHECK(v == doctest::Approx(3 * 2.0 + 2.0).epsilon(1e-12));
  std::vector<double> cum(41), tail(41);
  cumulative_integral(e.grid(), e.path(0), 1, W, cum);
  tail_integral(e.grid(), e.path(0), 1, W, tail);
  for (std::size_t k = 0; k <= 40; ++k) CHECK(cum[k] + tail[k] == doctest::Approx(8.0).epsilon(1e-12));
  // -inf at one knot kills the tail integral only from that knot backward.
  const ScalarFn kill = [](double t, std::span<const double>) {
    return std::abs(t - 1.0) < 1e-12 ? -std::numeric_limits<double>::infinity() : 0.0;
  };
  tail_integral(e.grid(), e.path(0), 1, kill, tail);
  CHECK(tail[40] == 0);
  CHECK(tail[21] == 0);
  CHECK(std::isinf(tail[20]));
  CHECK(std::isinf(tail[0]));
}

TEST_CASE("binary ensemble round trip") {
  const auto spec = DiffusionSpec::brownian(2, 1.0, InitialLaw::point({0.0, 0.0}));
  const PathEnsemble e = simulate(spec, TimeGrid::uniform(1.0, 7), 13, 3);
  std::stringstream ss;
  write_binary(e, ss);
  const PathEnsemble back = read_binary(ss);
  CHECK(back.data() == e.data());
  CHECK(back.grid() == e.grid());
  CHECK(back.dim() == 2);
  std::stringstream bad("nonsense");
  CHECK_THROWS_AS(read_binary(bad), Error);
}

TEST_CASE("initial laws sample with the right spread") {
  Rng rng(5);
  const InitialLaw t = InitialLaw::student_t(1, 5.0, 1.0);
  const InitialLaw u = InitialLaw::uniform_box({2.0}, {3.0});
  double su = 0, x = 0;
  for (int i = 0; i < 20000; ++i) {
    u.sample(rng, std::span<double>(&x, 1));
    CHECK((x >= 2.0 && x <= 3.0));
    su += x;
  }
  CHECK(su / 20000 == doctest::Approx(2.5).epsilon(0.01));
  CHECK(u.density(std::vector<double>{2.5}) == doctest::Approx(1.0));
  CHECK(u.density(std::vector<double>{3.5}) == 0.0);
  CHECK(t.density(std::vector<double>{0.0}) > t.density(std::vector<double>{2.0}));
  CHECK_FALSE(InitialLaw::point({1.0}).density);
}
