#include "fklab/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "fklab/errors.hpp"

namespace fklab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string join(const std::string& where, const char* key) { return where.empty() ? key : where + "." + key; }

[[noreturn]] void bad(const std::string& key, const std::string& why) {
  fail(ErrorCode::ConfigError, "config key '" + key + "': " + why);
}

double norm(std::span<const double> x) {
  double s = 0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

double dist(std::span<const double> x, const std::vector<double>& c) {
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - c[i]) * (x[i] - c[i]);
  return std::sqrt(s);
}

double log_plus(double r) { return r > 1 ? std::log(r) : 0.0; }

std::string type_of(const Json& j, const std::string& where) {
  if (j.is_string()) return j.get<std::string>();
  if (!j.is_object()) bad(where, "expected an object or a type name");
  return config_string(j, where, "type", "");
}

}  // namespace

const Json& config_at(const Json& j, const std::string& where, const char* key) {
  if (!j.is_object() || !j.contains(key)) bad(join(where, key), "missing");
  return j.at(key);
}

double config_number(const Json& j, const std::string& where, const char* key) {
  const Json& v = config_at(j, where, key);
  if (!v.is_number()) bad(join(where, key), "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) bad(join(where, key), "not finite");
  return d;
}

double config_number(const Json& j, const std::string& where, const char* key, double fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  return config_number(j, where, key);
}

std::size_t config_count(const Json& j, const std::string& where, const char* key) {
  const Json& v = config_at(j, where, key);
  if (!v.is_number()) bad(join(where, key), "expected a positive integer");
  const double d = v.get<double>();
  if (!(d >= 1) || d != std::floor(d) || d > 1e12) bad(join(where, key), "expected a positive integer");
  return static_cast<std::size_t>(d);
}

std::size_t config_count(const Json& j, const std::string& where, const char* key, std::size_t fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  return config_count(j, where, key);
}

std::string config_string(const Json& j, const std::string& where, const char* key, const std::string& fallback) {
  if (!j.is_object() || !j.contains(key)) {
    if (fallback.empty()) bad(join(where, key), "missing");
    return fallback;
  }
  const Json& v = j.at(key);
  if (!v.is_string()) bad(join(where, key), "expected a string");
  return v.get<std::string>();
}

bool config_bool(const Json& j, const std::string& where, const char* key, bool fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  const Json& v = j.at(key);
  if (!v.is_boolean()) bad(join(where, key), "expected true or false");
  return v.get<bool>();
}

std::vector<double> config_vector(const Json& j, const std::string& where, const char* key) {
  const Json& v = config_at(j, where, key);
  std::vector<double> out;
  if (v.is_number()) return {v.get<double>()};
  if (!v.is_array()) bad(join(where, key), "expected a number or an array of numbers");
  for (const auto& e : v) {
    if (!e.is_number()) bad(join(where, key), "expected an array of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

std::vector<double> config_vector(const Json& j, const std::string& where, const char* key, std::size_t dim,
                                  double fallback) {
  if (!j.is_object() || !j.contains(key)) return std::vector<double>(dim, fallback);
  std::vector<double> v = config_vector(j, where, key);
  if (v.size() == 1 && dim > 1) v.assign(dim, v[0]);
  if (v.size() != dim) bad(join(where, key), "expected " + std::to_string(dim) + " entries");
  return v;
}

namespace {

InitialLaw make_law(const Json& j, std::size_t dim, const std::string& where) {
  const std::string t = type_of(j, where);
  if (t == "point") return InitialLaw::point(config_vector(j, where, "x", dim, 0.0));
  if (t == "gaussian") {
    const double var = config_number(j, where, "variance", 1.0);
    if (!(var > 0)) bad(join(where, "variance"), "must be positive");
    return InitialLaw::gaussian(config_vector(j, where, "mean", dim, 0.0), var);
  }
  if (t == "uniform") return InitialLaw::uniform_box(config_vector(j, where, "lo", dim, -1.0), config_vector(j, where, "hi", dim, 1.0));
  if (t == "student_t") {
    const double dof = config_number(j, where, "dof", 3.0), scale = config_number(j, where, "scale", 1.0);
    if (!(dof > 0) || !(scale > 0)) bad(where, "student_t needs positive dof and scale");
    return InitialLaw::student_t(dim, dof, scale);
  }
  bad(join(where, "type"), "unknown initial law '" + t + "'");
}

// Mean and variance (per axis) of a Gaussian or point law, for closed-form reversals.
bool gaussian_moments(const Json& j, const std::string& where, double& mean, double& var) {
  const std::string t = type_of(j, where);
  if (t == "point") {
    mean = config_vector(j, where, "x", 1, 0.0)[0];
    var = 0;
    return true;
  }
  if (t == "gaussian") {
    mean = config_vector(j, where, "mean", 1, 0.0)[0];
    var = config_number(j, where, "variance", 1.0);
    return true;
  }
  return false;
}

}  // namespace

DiffusionSpec make_diffusion(const Json& model, const std::string& where) {
  if (!model.is_object()) bad(where, "expected an object");
  const std::size_t dim = config_count(model, where, "dim", 1);
  const double T = config_number(model, where, "horizon", 1.0);
  const double eps = config_number(model, where, "eps", 1.0);
  if (!(T > 0)) bad(join(where, "horizon"), "must be positive");
  if (!(eps > 0)) bad(join(where, "eps"), "must be positive");
  const Json law_cfg = model.contains("initial_law") ? model.at("initial_law") : Json{{"type", "point"}};
  InitialLaw law = make_law(law_cfg, dim, join(where, "initial_law"));
  const Json drift = model.contains("drift") ? model.at("drift") : Json{{"type", "zero"}};
  const std::string dw = join(where, "drift");
  const std::string t = type_of(drift, dw);
  if (t == "zero") return DiffusionSpec::brownian(dim, T, std::move(law), eps);
  if (t == "ou") {
    const double k = config_number(drift, dw, "k");
    if (!(k > 0)) bad(join(dw, "k"), "must be positive");
    return DiffusionSpec::ou(dim, T, k, eps, std::move(law));
  }
  if (t == "polynomial") {
    // b_i(x) = sum_p c_p x_i^p
    const std::vector<double> c = config_vector(drift, dw, "coefficients");
    DiffusionSpec s = DiffusionSpec::brownian(dim, T, std::move(law), eps);
    s.drift = [c](double, std::span<const double> x, std::span<double> out) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        double acc = 0;
        for (std::size_t p = c.size(); p-- > 0;) acc = acc * x[i] + c[p];
        out[i] = acc;
      }
    };
    return s;
  }
  bad(join(dw, "type"), "unknown drift '" + t + "'");
}

std::function<double(double, double)> reversed_drift(const Json& model, const std::string& where) {
  if (config_count(model, where, "dim", 1) != 1) return {};
  const double eps = config_number(model, where, "eps", 1.0);
  const Json drift = model.contains("drift") ? model.at("drift") : Json{{"type", "zero"}};
  const std::string t = type_of(drift, join(where, "drift"));
  double k = 0;
  if (t == "ou")
    k = config_number(drift, join(where, "drift"), "k");
  else if (t != "zero")
    return {};
  const Json law = model.contains("initial_law") ? model.at("initial_law") : Json{{"type", "point"}};
  double m = 0, v = 0;
  if (!gaussian_moments(law, join(where, "initial_law"), m, v)) return {};
  // Gaussian marginal N(m_t, v_t); reversed drift is -b + a d_x log p_t.
  return [k, eps, m, v](double t, double x) {
    double mt, vt;
    if (k > 0) {
      const double e = std::exp(-k * t);
      mt = m * e;
      vt = v * e * e + eps / (2 * k) * (1 - e * e);
    } else {
      mt = m;
      vt = v + eps * t;
    }
    vt = std::max(vt, 1e-12);
    return k * x - eps * (x - mt) / vt;
  };
}

double GridData::operator()(std::span<const double> x) const {
  const std::size_t n = lo.size();
  std::vector<std::size_t> base(n);
  std::vector<double> frac(n);
  for (std::size_t a = 0; a < n; ++a) {
    const double step = (hi[a] - lo[a]) / static_cast<double>(points[a] - 1);
    const double u = std::clamp((x[a] - lo[a]) / step, 0.0, static_cast<double>(points[a] - 1));
    const std::size_t i = std::min(static_cast<std::size_t>(u), points[a] - 2);
    base[a] = i;
    frac[a] = u - static_cast<double>(i);
  }
  double acc = 0;
  for (std::size_t corner = 0; corner < (std::size_t{1} << n); ++corner) {
    double w = 1;
    std::size_t flat = 0;
    for (std::size_t a = 0; a < n; ++a) {
      const bool up = (corner >> a) & 1;
      w *= up ? frac[a] : 1 - frac[a];
      flat = flat * points[a] + base[a] + (up ? 1 : 0);
    }
    if (w != 0) acc += w * values[flat];
  }
  return acc;
}

GridData make_grid_data(const Json& j, std::size_t dim, const std::string& where) {
  GridData g;
  g.lo = config_vector(j, where, "lo", dim, -1.0);
  g.hi = config_vector(j, where, "hi", dim, 1.0);
  g.values = config_vector(j, where, "values");
  std::size_t total = 1;
  if (j.contains("points")) {
    for (double p : config_vector(j, where, "points", dim, 0.0)) g.points.push_back(static_cast<std::size_t>(p));
  } else {
    const double side = std::round(std::pow(static_cast<double>(g.values.size()), 1.0 / static_cast<double>(dim)));
    g.points.assign(dim, static_cast<std::size_t>(side));
  }
  for (std::size_t a = 0; a < dim; ++a) {
    if (g.points[a] < 2) bad(join(where, "points"), "needs at least 2 points per axis");
    if (!(g.hi[a] > g.lo[a])) bad(join(where, "hi"), "must exceed lo");
    total *= g.points[a];
  }
  if (total != g.values.size()) bad(join(where, "values"), "expected " + std::to_string(total) + " values");
  for (double v : g.values)
    if (std::isnan(v)) bad(join(where, "values"), "NaN entry");
  return g;
}

StateFn make_state_potential(const Json& j, std::size_t dim, const std::string& where) {
  const std::string t = type_of(j, where);
  if (t == "zero") return [](std::span<const double>) { return 0.0; };
  if (t == "constant") {
    const double c = config_number(j, where, "c");
    return [c](std::span<const double>) { return c; };
  }
  if (t == "quadratic") {
    const double lam = config_number(j, where, "lambda");
    const std::vector<double> c = config_vector(j, where, "center", dim, 0.0);
    return [lam, c](std::span<const double> x) {
      const double r = dist(x, c);
      return lam * r * r;
    };
  }
  if (t == "coulomb") {
    const double q = config_number(j, where, "strength", 1.0);
    const double soft = config_number(j, where, "softening", 0.0);
    if (soft < 0) bad(join(where, "softening"), "must be nonnegative");
    const std::vector<double> c = config_vector(j, where, "center", dim, 0.0);
    return [q, soft, c](std::span<const double> x) { return q / (dist(x, c) + soft); };
  }
  if (t == "monomial") {
    const double coef = config_number(j, where, "coef", 1.0), p = config_number(j, where, "power");
    return [coef, p](std::span<const double> x) {
      const double r = norm(x);
      if (r == 0 && p < 0) return coef > 0 ? kInf : -kInf;
      return coef * std::pow(r, p);
    };
  }
  if (t == "log_plus") {
    const double coef = config_number(j, where, "coef", 1.0);
    return [coef](std::span<const double> x) { return coef * log_plus(norm(x)); };
  }
  if (t == "grid") {
    auto g = std::make_shared<GridData>(make_grid_data(j, dim, where));
    return [g](std::span<const double> x) { return (*g)(x); };
  }
  if (t == "sum") {
    const Json& terms = config_at(j, where, "terms");
    if (!terms.is_array() || terms.empty()) bad(join(where, "terms"), "expected a nonempty array");
    std::vector<StateFn> fs;
    for (std::size_t i = 0; i < terms.size(); ++i)
      fs.push_back(make_state_potential(terms[i], dim, join(where, "terms") + "[" + std::to_string(i) + "]"));
    return [fs](std::span<const double> x) {
      double acc = 0;
      for (const auto& f : fs) acc += f(x);
      return acc;
    };
  }
  bad(join(where, "type"), "unknown potential '" + t + "'");
}

ScalarFn make_potential(const Json& j, std::size_t dim, const std::string& where) {
  StateFn f = make_state_potential(j, dim, where);
  return [f = std::move(f)](double, std::span<const double> x) { return f(x); };
}

StateFn make_boundary(const Json& j, std::size_t dim, const std::string& where) {
  const std::string t = type_of(j, where);
  if (t == "one") return [](std::span<const double>) { return 1.0; };
  if (t == "gaussian") {
    const std::vector<double> mu = config_vector(j, where, "mean", dim, 0.0);
    const double s = config_number(j, where, "scale", 1.0);
    if (!(s > 0)) bad(join(where, "scale"), "must be positive");
    double amp = config_number(j, where, "amplitude", 1.0);
    if (config_bool(j, where, "normalized", false)) amp = std::pow(2 * M_PI * s * s, -0.5 * static_cast<double>(dim));
    return [mu, s, amp](std::span<const double> x) {
      const double r = dist(x, mu);
      return amp * std::exp(-r * r / (2 * s * s));
    };
  }
  if (t == "indicator") {
    const std::vector<double> lo = config_vector(j, where, "lo", dim, -1.0), hi = config_vector(j, where, "hi", dim, 1.0);
    return [lo, hi](std::span<const double> x) {
      for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] < lo[i] || x[i] > hi[i]) return 0.0;
      return 1.0;
    };
  }
  if (t == "grid") {
    auto g = std::make_shared<GridData>(make_grid_data(j, dim, where));
    for (double v : g->values)
      if (v < 0) bad(join(where, "values"), "boundary data must be nonnegative");
    return [g](std::span<const double> x) { return (*g)(x); };
  }
  bad(join(where, "type"), "unknown boundary data '" + t + "'");
}

std::optional<Verdict> parse_verdict(const Json& j, const std::string& where, const char* key) {
  if (!j.is_object() || !j.contains(key)) return std::nullopt;
  const std::string s = config_string(j, where, key, "");
  if (s == "PASS") return Verdict::Pass;
  if (s == "FAIL") return Verdict::Fail;
  if (s == "INCONCLUSIVE") return Verdict::Inconclusive;
  bad(join(where, key), "expected PASS, FAIL or INCONCLUSIVE");
}

GrowthCase make_growth_case(const Json& j, const std::string& where) {
  GrowthCase g;
  g.name = config_string(j, where, "name", "growth");
  g.theorem = static_cast<int>(config_number(j, where, "theorem", 30));
  if (g.theorem != 30 && g.theorem != 32) bad(join(where, "theorem"), "expected 30 or 32");
  g.expect = parse_verdict(j, where, "expect");
  const std::string preset = config_string(j, where, "preset", "trivial");
  const std::size_t n = config_count(j, where, "dim", 1);
  const double eps = config_number(j, where, "eps", 1.0);
  if (!(eps > 0)) bad(join(where, "eps"), "must be positive");
  const double nd = static_cast<double>(n);

  GrowthCaseSpec& cs = g.spec;
  cs.dim = n;
  cs.horizon = config_number(j, where, "horizon", 1.0);
  cs.diffusion = [n, eps](double, std::span<const double>, std::span<double> a) {
    std::fill(a.begin(), a.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) a[i * n + i] = eps;
  };
  cs.U = C12Function::zero();
  cs.U_diamond = C12Function::zero();
  cs.c = config_number(j, where, "c", 0.0);
  cs.kappa = config_number(j, where, "kappa", 1.0);

  auto gauss_log = [n](double var) {
    return [n, var](std::span<const double> x) {
      const double r = norm(x);
      return -0.5 * static_cast<double>(n) * std::log(2 * M_PI * var) - r * r / (2 * var);
    };
  };
  Json f0 = Json{{"type", "one"}}, gT = Json{{"type", "one"}};
  StateFn U0;  // e^{-U} multiplies f0, gT into h0, hT in the OU preset
  if (preset == "trivial") {
    cs.log_m_density = gauss_log(1.0);
    cs.log_r0_density = gauss_log(1.0);
    if (g.theorem == 32) {
      // Lebesgue integrability of e^{-U*} needs a growing U*; |x|^2/2 keeps R_0 Gaussian admissible.
      cs.U_star = [](std::span<const double> x) {
        const double r = norm(x);
        return 0.5 * r * r;
      };
      f0 = gT = Json{{"type", "gaussian"}, {"normalized", true}};
    } else {
      cs.U_star = [](std::span<const double>) { return 0.0; };
    }
  } else if (preset == "brownian") {
    cs.U_star = [nd](std::span<const double> x) { return (nd + 1) * log_plus(norm(x)); };
    cs.log_m_density = [](std::span<const double>) { return 0.0; };
    cs.log_r0_density = [](std::span<const double>) { return 0.0; };
    f0 = gT = Json{{"type", "indicator"}, {"lo", -1.0}, {"hi", 1.0}};
  } else if (preset == "ou") {
    const double k = config_number(j, where, "k", 1.0);
    if (!(k > 0)) bad(join(where, "k"), "must be positive");
    cs.U = C12Function::quadratic(k / eps);
    cs.log_m_density = [k, eps](std::span<const double> x) {
      const double r = norm(x);
      return -k * r * r / eps;
    };
    cs.log_r0_density = gauss_log(eps / (2 * k));
    cs.U_star = [](std::span<const double>) { return 0.0; };
    if (g.theorem == 30) cs.U_diamond = C12Function::log_sqrt(config_number(j, where, "gamma", nd));
    U0 = [k, eps](std::span<const double> x) {
      const double r = norm(x);
      return k * r * r / (2 * eps);
    };
  } else {
    bad(join(where, "preset"), "unknown preset '" + preset + "'");
  }
  if (j.contains("audit")) {
    const Json& a = j.at("audit");
    const std::string aw = join(where, "audit");
    cs.audit.radius = config_number(a, aw, "radius", cs.audit.radius);
    cs.audit.points_per_axis = config_count(a, aw, "points_per_axis", cs.audit.points_per_axis);
    cs.audit.rings = config_count(a, aw, "rings", cs.audit.rings);
    cs.audit.directions = config_count(a, aw, "directions", cs.audit.directions);
    cs.audit.time_points = config_count(a, aw, "time_points", cs.audit.time_points);
    cs.audit.tolerance = config_number(a, aw, "tolerance", cs.audit.tolerance);
  }

  if (j.contains("f0")) f0 = j.at("f0");
  if (j.contains("gT")) gT = j.at("gT");
  g.problem.f0 = make_boundary(f0, n, join(where, "f0"));
  g.problem.gT = make_boundary(gT, n, join(where, "gT"));
  g.problem.V = make_potential(j.contains("V") ? j.at("V") : Json{{"type", "zero"}}, n, join(where, "V"));

  if (g.theorem == 32) {
    Thm32Inputs& in = g.inputs;
    in.p = config_number(j, where, "p", 2.0);
    in.W = make_state_potential(j.contains("W") ? j.at("W") : Json{{"type", "zero"}}, n, join(where, "W"));
    auto with_u = [U0](StateFn f) -> StateFn {
      if (!U0) return f;
      return [f, U0](std::span<const double> x) { return f(x) * std::exp(-U0(x)); };
    };
    auto log_with_u = [U0](StateFn f) -> StateFn {
      if (!U0) return {};
      return [f, U0](std::span<const double> x) {
        const double v = f(x);
        return v > 0 ? std::log(v) - U0(x) : -std::numeric_limits<double>::infinity();
      };
    };
    if (j.contains("h0")) {
      in.h0 = make_boundary(j.at("h0"), n, join(where, "h0"));
    } else {
      in.h0 = with_u(g.problem.f0);
      in.log_h0 = log_with_u(g.problem.f0);
    }
    if (j.contains("hT")) {
      in.hT = make_boundary(j.at("hT"), n, join(where, "hT"));
    } else {
      in.hT = with_u(g.problem.gT);
      in.log_hT = log_with_u(g.problem.gT);
    }
  }
  return g;
}

KatoCase make_kato_case(const Json& j, const std::string& where) {
  KatoCase k;
  k.name = config_string(j, where, "name", "kato");
  k.expect = parse_verdict(j, where, "expect");
  const std::size_t n = config_count(j, where, "dim", 3);
  k.input.dim = n;
  k.input.W = make_state_potential(config_at(j, where, "W"), n, join(where, "W"));
  if (j.contains("singular_points")) {
    const Json& sp = j.at("singular_points");
    if (!sp.is_array()) bad(join(where, "singular_points"), "expected an array of points");
    for (std::size_t i = 0; i < sp.size(); ++i) {
      Json wrap = Json{{"p", sp[i]}};
      k.input.singular_points.push_back(
          config_vector(wrap, join(where, "singular_points") + "[" + std::to_string(i) + "]", "p", n, 0.0));
    }
  }
  if (j.contains("analytic")) {
    const Json& a = j.at("analytic");
    const std::string aw = join(where, "analytic");
    k.analytic = config_number(a, aw, "value");
    k.analytic_alpha = config_number(a, aw, "alpha", 1.0);
    k.analytic_point = config_vector(a, aw, "x", n, 0.0);
  }
  return k;
}

}  // namespace fklab
