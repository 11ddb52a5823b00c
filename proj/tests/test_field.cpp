#include <cmath>
#include <sstream>

#include "doctest.h"
#include "fklab/binning.hpp"
#include "fklab/errors.hpp"
#include "fklab/field.hpp"

using namespace fklab;

TEST_CASE("space box locates and centers cells") {
  const SpaceBox b = SpaceBox::uniform(2, -1.0, 1.0, 4);
  CHECK(b.total_cells() == 16);
  CHECK(b.width(0) == 0.5);
  CHECK(b.locate(std::vector<double>{-0.9, 0.9}) == std::optional<std::size_t>(3));
  CHECK(b.locate(std::vector<double>{0.9, -0.9}) == std::optional<std::size_t>(12));
  CHECK_FALSE(b.locate(std::vector<double>{1.5, 0.0}));
  CHECK(b.locate(std::vector<double>{1.0, 1.0}) == std::optional<std::size_t>(15));
  const auto c = b.center(6);
  CHECK(c[0] == doctest::Approx(-0.25));
  CHECK(c[1] == doctest::Approx(0.25));
  for (std::size_t i = 0; i < 16; ++i) CHECK(b.locate(b.center(i)) == std::optional<std::size_t>(i));
  SpaceBox bad = b;
  bad.hi[0] = -2;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("interpolation is exact for affine data between centers") {
  const SpaceBox b = SpaceBox::uniform(2, 0.0, 1.0, 5);
  ScalarField f(TimeGrid::uniform(1.0, 1), b);
  for (std::size_t c = 0; c < b.total_cells(); ++c) {
    const auto x = b.center(c);
    f.values[f.at(0, c)] = 2 * x[0] - 3 * x[1] + 1;
    f.std_error[f.at(0, c)] = 0.1;
    f.mask[f.at(0, c)] = 1;
  }
  for (double x : {0.15, 0.33, 0.5, 0.81})
    for (double y : {0.12, 0.47, 0.88}) {
      const auto r = f.interpolate(0, std::vector<double>{x, y});
      REQUIRE(r);
      CHECK(r->value == doctest::Approx(2 * x - 3 * y + 1).epsilon(1e-12));
      CHECK(r->variance <= 0.01 + 1e-15);
    }
  CHECK_FALSE(f.interpolate(0, std::vector<double>{1.2, 0.5}));
  // An invalid own cell gives nothing; an invalid neighbour is dropped and weights renormalize.
  f.mask[f.at(0, 12)] = 0;
  CHECK_FALSE(f.interpolate(0, b.center(12)));
  const auto r = f.interpolate(0, std::vector<double>{0.35, 0.35});
  REQUIRE(r);
  CHECK(std::isfinite(r->value));
  const FieldSlice s = f.slice(0);
  CHECK(s.valid_count() == 24);
  CHECK(s.interpolate(std::vector<double>{0.15, 0.15})->value == doctest::Approx(f.interpolate(0, std::vector<double>{0.15, 0.15})->value));
}

TEST_CASE("scalar field binary round trip") {
  ScalarField f(TimeGrid::uniform(2.0, 3), SpaceBox::uniform(1, -2.0, 2.0, 6));
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    f.values[i] = std::sin(static_cast<double>(i));
    f.std_error[i] = 0.01 * static_cast<double>(i);
    f.samples[i] = i * 3;
    f.mask[i] = i % 3 != 0;
  }
  std::stringstream ss;
  write_binary(f, ss);
  const ScalarField g = read_binary_field(ss);
  CHECK(g.values == f.values);
  CHECK(g.std_error == f.std_error);
  CHECK(g.samples == f.samples);
  CHECK(g.mask == f.mask);
  CHECK(g.grid == f.grid);
  CHECK(g.box == f.box);
}

TEST_CASE("auto box covers the central mass") {
  PathEnsemble e(TimeGrid::uniform(1.0, 1), 1, 1000);
  for (std::size_t i = 0; i < 1000; ++i) {
    e.state(i, 0)[0] = static_cast<double>(i);
    e.state(i, 1)[0] = static_cast<double>(i);
  }
  const SpaceBox b = auto_box(e, 10, 0.9);
  CHECK(b.lo[0] == doctest::Approx(50).epsilon(0.02));
  CHECK(b.hi[0] == doctest::Approx(949).epsilon(0.02));
}

TEST_CASE("cell tables fit weighted regressions") {
  // y = 2 + 3 z exactly: intercept and slope are recovered, with zero residual error.
  CellTable t(TableShape{1, 1, 1, 1});
  for (int i = 0; i < 20; ++i) {
    const double z = 0.1 * i - 1, y = 2 + 3 * z;
    t.add(0, 0, 1.0 + 0.05 * i, &z, &y);
  }
  const CellFit f = t.fit(0, 0);
  REQUIRE(f.ok);
  CHECK(f.coef[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(f.coef[1] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(f.std_error[0] < 1e-6);
  CHECK(t.count(0, 0) == 20);
  // Weighted mean with no regressors.
  CellTable m(TableShape{1, 1, 0, 1});
  const double a = 1, b = 4;
  m.add(0, 0, 3.0, nullptr, &a);
  m.add(0, 0, 1.0, nullptr, &b);
  CHECK(m.mean(0, 0) == doctest::Approx(1.75));
  CellTable other(TableShape{1, 1, 0, 1});
  other.add(0, 0, 4.0, nullptr, &a);
  m.merge(other);
  CHECK(m.mean(0, 0) == doctest::Approx((3 + 4 + 4) / 8.0));
  CHECK_THROWS_AS(m.merge(t), Error);
}

TEST_CASE("chunk counts depend on size only") {
  CHECK(chunk_count(100, 10) == 1);
  CHECK(chunk_count(512 * 10, 10) == 10);
  CHECK(chunk_count(1'000'000, 10) == 64);
  CHECK(chunk_count(1'000'000, std::size_t{1} << 23) == 2);
}
