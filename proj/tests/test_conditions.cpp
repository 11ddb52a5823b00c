#include <cmath>
#include <memory>
#include <random>

#include "doctest.h"
#include "fklab/conditions.hpp"
#include "fklab/errors.hpp"
#include "fklab/models.hpp"

using namespace fklab;

namespace {

const double kPi = std::acos(-1.0);

GrowthCaseSpec anisotropic_case(std::size_t n) {
  GrowthCaseSpec cs;
  cs.dim = n;
  cs.horizon = 1;
  // Constant, non-diagonal a.
  cs.diffusion = [n](double, std::span<const double>, std::span<double> a) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) a[i * n + j] = i == j ? 1.0 + 0.3 * static_cast<double>(i) : 0.2;
  };
  return cs;
}

}  // namespace

TEST_CASE("verdicts combine as a conjunction") {
  CHECK(combine(Verdict::Pass, Verdict::Pass) == Verdict::Pass);
  CHECK(combine(Verdict::Pass, Verdict::Inconclusive) == Verdict::Inconclusive);
  CHECK(combine(Verdict::Inconclusive, Verdict::Fail) == Verdict::Fail);
  CHECK(to_string(Verdict::Fail) == "FAIL");
  VerdictRecord r;
  r.add({"a", Verdict::Pass, 1, {}, ""});
  r.add({"b", Verdict::Fail, -1, {0.5}, "violated"});
  CHECK(r.overall == Verdict::Fail);
  const Json j = Json::parse(to_json(r));
  CHECK(j["overall"] == "FAIL");
  CHECK(j["hypotheses"].size() == 2);
}

TEST_CASE("scriptH agrees along both routes") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3, 3);
  for (std::size_t n : {1u, 2u, 3u}) {
    GrowthCaseSpec cs = anisotropic_case(n);
    const std::vector<std::pair<C12Function, C12Function>> pairs = {
        {C12Function::quadratic(1.3), C12Function::log_sqrt(2.0)},
        {C12Function::zero(), C12Function::quadratic(0.7)},
        {C12Function::linear(std::vector<double>(n, 0.4)), C12Function::log_sqrt(0.5)},
    };
    for (const auto& [U, Ud] : pairs) {
      cs.U = U;
      cs.U_diamond = Ud;
      for (int i = 0; i < 50; ++i) {
        std::vector<double> x(n);
        for (double& v : x) v = u(rng);
        const ScriptH h = script_H(cs, 0.5, x);
        CHECK(std::abs(h.direct - h.difference) <= 1e-10 * (1 + std::abs(h.direct)));
      }
    }
  }
}

TEST_CASE("scriptU of a quadratic potential") {
  // U = k|x|^2/2 with a = I in 1-D: |grad U|^2/2 - Delta U/2 = k^2 x^2/2 - k/2.
  GrowthCaseSpec cs = GrowthCaseSpec::from_spec(DiffusionSpec::brownian(1, 1.0, InitialLaw::point({0.0})));
  const C12Function U = C12Function::quadratic(2.0);
  CHECK(script_U(cs, U, 0.0, std::vector<double>{1.5}) == doctest::Approx(2.0 * 2.25 - 1.0));
}

TEST_CASE("Khasminskii bound for constant W") {
  for (int i = 1; i <= 9; ++i) {
    const double a = 0.1 * i;
    const KhasminskiiResult r = khasminskii_constant(a / 0.1, 0.1);
    CHECK(r.alpha == doctest::Approx(a));
    CHECK(r.exp_moment == doctest::Approx(std::exp(a)));
    CHECK(r.bound == doctest::Approx(1 / (1 - a)));
    CHECK(r.holds);
  }
  CHECK(std::isinf(khasminskii_constant(20, 0.1).bound));
  const auto spec = DiffusionSpec::brownian(1, 1.0, InitialLaw::point({0.0}));
  const PathEnsemble e = simulate(spec, TimeGrid::uniform(1.0, 40), 2000, 3);
  const ScalarFn W = [](double, std::span<const double>) { return 5.0; };
  const KhasminskiiResult r = khasminskii_bound(e, W, 0.1, SpaceBox::uniform(1, -3.0, 3.0, 6));
  CHECK(r.alpha == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.exp_moment == doctest::Approx(std::exp(0.5)).epsilon(1e-12));
  CHECK(r.holds);
  CHECK(r.windows == 10);
}

TEST_CASE("Kato integrals against radial closed forms") {
  KatoInput one{[](std::span<const double>) { return 1.0; }, 3, {}, {}};
  const std::vector<double> o{0, 0, 0};
  CHECK(std::abs(kato_integral(one, o, 1.0) - 2 * kPi) < 1e-4);
  CHECK(std::abs(kato_integral(one, o, 0.5) - 2 * kPi * 0.25) < 1e-4);
  KatoInput coul{[](std::span<const double> x) { return 1 / std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]); }, 3,
                 {{0, 0, 0}}, {}};
  CHECK(std::abs(kato_integral(coul, o, 1.0) - 4 * kPi) < 1e-4);
  CHECK(std::abs(kato_integral(coul, o, 0.25) - kPi) < 1e-4);
}

TEST_CASE("Kato verdicts") {
  const Json suite = Json::parse(R"([
    {"name": "unit", "W": {"type": "constant", "c": 1.0}},
    {"name": "coulomb", "W": {"type": "coulomb", "strength": 1.0}, "singular_points": [[0, 0, 0]]},
    {"name": "inverse-square", "W": {"type": "monomial", "coef": 1.0, "power": -2.0}, "singular_points": [[0, 0, 0]]}
  ])");
  const Verdict want[] = {Verdict::Pass, Verdict::Pass, Verdict::Fail};
  for (std::size_t i = 0; i < 3; ++i) {
    const KatoCase k = make_kato_case(suite[i], "kato");
    const KatoRecord r = kato_check_brownian(k.input);
    CHECK(r.verdict == want[i]);
    CHECK(r.sup_values.size() == r.alphas.size());
  }
}

TEST_CASE("growth verdicts for the classical cases") {
  auto verdict = [](const char* text) {
    const GrowthCase g = make_growth_case(Json::parse(text), "growth");
    return g.theorem == 30 ? growth_check_thm30(g.spec, g.problem).overall
                           : growth_check_thm32(g.spec, g.problem, g.inputs).overall;
  };
  CHECK(verdict(R"({"theorem": 30, "preset": "trivial"})") == Verdict::Pass);
  CHECK(verdict(R"({"theorem": 32, "preset": "brownian",
                    "V": {"type": "monomial", "coef": -1.0, "power": -0.5}})") == Verdict::Pass);
  CHECK(verdict(R"({"theorem": 32, "preset": "ou", "k": 1.0,
                    "V": {"type": "sum", "terms": [{"type": "quadratic", "lambda": 0.5}, {"type": "log_plus", "coef": -2.0}]},
                    "W": {"type": "constant", "c": 2.0}})") == Verdict::Pass);
  CHECK(verdict(R"({"theorem": 32, "preset": "ou", "k": 1.0, "V": {"type": "quadratic", "lambda": 1.0},
                    "W": {"type": "constant", "c": 2.0}})") == Verdict::Fail);
  CHECK(verdict(R"({"theorem": 30, "preset": "ou", "k": 1.0, "gamma": 1.0, "c": 2.0,
                    "V": {"type": "quadratic", "lambda": 1.0}})") == Verdict::Fail);
  CHECK(verdict(R"({"theorem": 32, "preset": "brownian", "V": {"type": "monomial", "coef": 1.0, "power": 4.0},
                    "W": {"type": "constant", "c": 1.0}})") == Verdict::Fail);
}

TEST_CASE("growth case configs name the bad key") {
  try {
    make_growth_case(Json::parse(R"({"theorem": 31, "preset": "ou"})"), "conditions.growth[0]");
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigError);
    CHECK(std::string(e.what()).find("conditions.growth[0].theorem") != std::string::npos);
  }
}

TEST_CASE("entropy domain guard") {
  const auto spec = DiffusionSpec::brownian(1, 1.0, InitialLaw::gaussian({0.0}, 1.0));
  const auto e = std::make_shared<PathEnsemble>(simulate(spec, TimeGrid::uniform(1.0, 4), 20000, 8));
  const WeightedEnsemble w = make_weighted(e, std::vector<double>(20000, 0.0));
  const DomainGuard g = entropy_domain_guard(w, [](std::span<const double> x) { return x[0] * x[0]; });
  CHECK(g.pass);
  CHECK(g.mean == doctest::Approx(1.0).epsilon(0.05));
  const DomainGuard no = entropy_domain_guard(w, [](std::span<const double> x) { return x[0] * x[0]; }, false);
  CHECK_FALSE(no.pass);
}
