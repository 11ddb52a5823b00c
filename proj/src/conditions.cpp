#include "fklab/conditions.hpp"

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

#include "fklab/binning.hpp"
#include "fklab/errors.hpp"
#include "json.hpp"

namespace fklab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
using Gauss = boost::math::quadrature::gauss<double, 20>;

double log_plus(double v) { return v > 1 ? std::log(v) : 0.0; }

struct Audit {
  std::vector<std::vector<double>> grid;
  std::vector<std::vector<std::vector<double>>> rings;  // rings[j] = points at radius R 2^{j+1}
  std::vector<double> times;
};

std::vector<std::vector<double>> directions(std::size_t n, std::size_t count) {
  std::vector<std::vector<double>> d;
  if (n == 1) return {{1.0}, {-1.0}};
  if (n == 2) {
    for (std::size_t i = 0; i < count; ++i) {
      const double th = 2 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(count);
      d.push_back({std::cos(th), std::sin(th)});
    }
    return d;
  }
  for (std::size_t a = 0; a < n; ++a)
    for (double s : {1.0, -1.0}) {
      std::vector<double> v(n, 0.0);
      v[a] = s;
      d.push_back(v);
    }
  const double c = 1 / std::sqrt(static_cast<double>(n));
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    std::vector<double> v(n);
    for (std::size_t a = 0; a < n; ++a) v[a] = (mask >> a) & 1U ? -c : c;
    d.push_back(v);
  }
  return d;
}

Audit make_audit(const GrowthCaseSpec& cs) {
  const AuditGrid& g = cs.audit;
  const std::size_t n = cs.dim;
  if (n < 1 || n > 3) fail(ErrorCode::InvalidArgument, "growth audits support dimensions 1 to 3");
  if (g.rings < 3) fail(ErrorCode::InvalidArgument, "far-field audit needs at least 3 rings");
  Audit a;
  const std::size_t ppa = std::max<std::size_t>(2, n == 3 ? std::min<std::size_t>(g.points_per_axis, 21) : g.points_per_axis);
  std::size_t total = 1;
  for (std::size_t k = 0; k < n; ++k) total *= ppa;
  for (std::size_t i = 0; i < total; ++i) {
    std::vector<double> x(n);
    std::size_t r = i;
    for (std::size_t k = 0; k < n; ++k) {
      x[k] = -g.radius + 2 * g.radius * static_cast<double>(r % ppa) / static_cast<double>(ppa - 1);
      r /= ppa;
    }
    a.grid.push_back(x);
  }
  const auto dirs = directions(n, g.directions);
  for (std::size_t j = 1; j <= g.rings; ++j) {
    const double R = std::ldexp(g.radius, static_cast<int>(j));
    std::vector<std::vector<double>> ring;
    for (const auto& d : dirs) {
      std::vector<double> x(n);
      for (std::size_t k = 0; k < n; ++k) x[k] = R * d[k];
      ring.push_back(x);
    }
    a.rings.push_back(ring);
  }
  const std::size_t tp = std::max<std::size_t>(1, g.time_points);
  for (std::size_t i = 0; i < tp; ++i)
    a.times.push_back(tp == 1 ? 0.0 : cs.horizon * static_cast<double>(i) / static_cast<double>(tp - 1));
  return a;
}

using PointFn = std::function<double(double, std::span<const double>)>;

std::string point_str(const std::vector<double>& x) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
  os << ')';
  return os.str();
}

double checked(double v, const char* name, double t, const std::vector<double>& x) {
  if (std::isnan(v))
    fail(ErrorCode::NonFinite, std::string(name) + " is NaN at t = " + std::to_string(t) + ", x = " + point_str(x));
  return v;
}

// Pointwise slack >= 0 on the grid plus far-field trend.
HypothesisResult audit_slack(const std::string& name, const Audit& a, const std::vector<double>& times,
                             const PointFn& slack, double tol) {
  HypothesisResult h;
  h.name = name;
  h.margin = kInf;
  for (double t : times)
    for (const auto& x : a.grid) {
      const double s = checked(slack(t, x), name.c_str(), t, x);
      if (s < h.margin) {
        h.margin = s;
        h.worst_point = x;
      }
    }
  std::vector<double> ring_min;
  for (const auto& ring : a.rings) {
    double m = kInf;
    for (double t : times)
      for (const auto& x : ring) {
        const double s = checked(slack(t, x), name.c_str(), t, x);
        m = std::min(m, s);
        if (s < h.margin) {
          h.margin = s;
          h.worst_point = x;
        }
      }
    ring_min.push_back(m);
  }
  if (h.margin < -tol) {
    h.status = Verdict::Fail;
    h.note = "violated";
    return h;
  }
  bool nondecreasing = true;
  for (std::size_t j = 1; j < ring_min.size(); ++j)
    if (!(ring_min[j] >= ring_min[j - 1] - tol)) nondecreasing = false;
  if (nondecreasing) {
    h.status = Verdict::Pass;
    h.note = "holds on the grid; far-field slack nondecreasing";
    return h;
  }
  const std::size_t m = ring_min.size();
  const double d1 = ring_min[m - 1] - ring_min[m - 2], d0 = ring_min[m - 2] - ring_min[m - 3];
  if (std::isfinite(d0) && std::isfinite(d1) && d0 != 0) {
    const double rho = d1 / d0;
    if (rho >= 0 && rho < 0.9) {
      const double limit = ring_min[m - 1] + d1 * rho / (1 - rho);
      if (limit >= -tol) {
        h.status = Verdict::Pass;
        h.note = "holds on the grid; far-field slack converges to " + std::to_string(limit);
        return h;
      }
      h.note = "far-field slack extrapolates below zero (" + std::to_string(limit) + ")";
      h.status = Verdict::Inconclusive;
      return h;
    }
  }
  h.status = Verdict::Inconclusive;
  h.note = "far-field trend is not decisive";
  return h;
}

// sup of q over the grid and rings stays finite.
HypothesisResult audit_bounded(const std::string& name, const Audit& a, const std::vector<double>& times,
                               const PointFn& q, double tol) {
  HypothesisResult h;
  h.name = name;
  double sup = -kInf;
  for (double t : times)
    for (const auto& x : a.grid) {
      const double v = checked(q(t, x), name.c_str(), t, x);
      if (v > sup) {
        sup = v;
        h.worst_point = x;
      }
    }
  std::vector<double> ring_max;
  for (const auto& ring : a.rings) {
    double m = -kInf;
    for (double t : times)
      for (const auto& x : ring) {
        const double v = checked(q(t, x), name.c_str(), t, x);
        m = std::max(m, v);
        if (v > sup) {
          sup = v;
          h.worst_point = x;
        }
      }
    ring_max.push_back(m);
  }
  h.margin = sup;
  if (std::isinf(sup)) {
    h.status = Verdict::Fail;
    h.note = "unbounded (infinite value)";
    return h;
  }
  const std::size_t m = ring_max.size();
  bool flat = true;
  for (std::size_t j = 1; j < m; ++j)
    if (ring_max[j] > ring_max[j - 1] + tol) flat = false;
  if (flat) {
    h.status = Verdict::Pass;
    h.note = "sup " + std::to_string(sup) + ", far field nonincreasing";
    return h;
  }
  const double d1 = ring_max[m - 1] - ring_max[m - 2], d0 = ring_max[m - 2] - ring_max[m - 3];
  if (d1 <= tol) {
    h.status = Verdict::Pass;
    h.note = "sup " + std::to_string(sup) + ", far field levels off";
  } else if (d0 > 0 && d1 / d0 < 0.9) {
    const double rho = d1 / d0;
    h.margin = ring_max[m - 1] + d1 * rho / (1 - rho);
    h.status = Verdict::Pass;
    h.note = "far field converges, extrapolated sup " + std::to_string(h.margin);
  } else if (d0 > 0 && d1 / d0 >= 1) {
    h.status = Verdict::Fail;
    h.note = "grows along doubling radii";
  } else {
    h.status = Verdict::Inconclusive;
    h.note = "far-field trend is not decisive";
  }
  return h;
}

double integrate_box(const std::function<double(std::span<const double>)>& f, std::size_t n, const double* lo,
                     const double* hi, std::size_t sub) {
  std::array<double, 3> x{};
  std::function<double(std::size_t)> rec = [&](std::size_t axis) -> double {
    const double w = (hi[axis] - lo[axis]) / static_cast<double>(sub);
    double total = 0;
    for (std::size_t s = 0; s < sub; ++s) {
      const double a = lo[axis] + static_cast<double>(s) * w;
      total += Gauss::integrate(
          [&](double v) {
            x[axis] = v;
            return axis + 1 == n ? f(std::span<const double>(x.data(), n)) : rec(axis + 1);
          },
          a, a + w);
    }
    return total;
  };
  return rec(0);
}

// int exp(L(x)) dx over R^n by cube shells of doubling radius.
HypothesisResult audit_integral(const std::string& name, std::size_t n, const AuditGrid& g,
                                const std::function<double(std::span<const double>)>& log_integrand) {
  HypothesisResult h;
  h.name = name;
  bool infinite = false;
  auto f = [&](std::span<const double> x) {
    const double L = log_integrand(x);
    if (std::isnan(L)) fail(ErrorCode::NonFinite, name + " integrand is NaN");
    if (L == kInf) infinite = true;
    return std::exp(std::min(L, 700.0));
  };
  const double R0 = g.radius;
  std::array<double, 3> lo{}, hi{};
  for (std::size_t a = 0; a < n; ++a) lo[a] = -R0, hi[a] = R0;
  const double inner = integrate_box(f, n, lo.data(), hi.data(), n == 3 ? 4 : 8);
  std::vector<double> inc;
  for (std::size_t j = 0; j < g.rings; ++j) {
    const double r0 = std::ldexp(R0, static_cast<int>(j)), r1 = 2 * r0;
    const double seg_lo[3] = {-r1, -r0, r0}, seg_hi[3] = {-r0, r0, r1};
    std::size_t combos = 1;
    for (std::size_t a = 0; a < n; ++a) combos *= 3;
    double shell = 0;
    for (std::size_t c = 0; c < combos; ++c) {
      std::size_t r = c;
      bool centre = true;
      for (std::size_t a = 0; a < n; ++a) {
        const std::size_t s = r % 3;
        r /= 3;
        lo[a] = seg_lo[s];
        hi[a] = seg_hi[s];
        if (s != 1) centre = false;
      }
      if (!centre) shell += integrate_box(f, n, lo.data(), hi.data(), 2);
    }
    inc.push_back(shell);
  }
  double total = inner;
  for (double v : inc) total += v;
  if (infinite || std::isinf(total)) {
    h.status = Verdict::Fail;
    h.margin = -kInf;
    h.note = "integrand is infinite";
    return h;
  }
  const std::size_t m = inc.size();
  const double last = inc[m - 1], prev = inc[m - 2];
  if (last <= 1e-12 * std::max(total, 1e-300)) {
    h.status = Verdict::Pass;
    h.margin = 1;
    h.note = "integral " + std::to_string(total) + ", tail negligible";
    return h;
  }
  const double rho = prev > 0 ? last / prev : kInf;
  h.margin = 1 - rho;
  if (rho < 0.9) {
    h.status = Verdict::Pass;
    h.note = "integral ~ " + std::to_string(total + last * rho / (1 - rho)) + ", shells shrink by " + std::to_string(rho);
  } else if (rho >= 1) {
    h.status = Verdict::Fail;
    h.note = "shell contributions do not shrink (ratio " + std::to_string(rho) + ")";
  } else {
    h.status = Verdict::Inconclusive;
    h.note = "slowly converging shells (ratio " + std::to_string(rho) + ")";
  }
  return h;
}

struct Derivs {
  std::vector<double> a, g, H;
  double dt = 0;
};

void eval(const GrowthCaseSpec& cs, const C12Function& U, double t, std::span<const double> x, Derivs& d) {
  const std::size_t n = cs.dim;
  d.a.assign(n * n, 0.0);
  d.g.assign(n, 0.0);
  d.H.assign(n * n, 0.0);
  cs.diffusion(t, x, d.a);
  if (U.grad) U.grad(t, x, d.g);
  if (U.hessian) U.hessian(t, x, d.H);
  d.dt = U.dt ? U.dt(t, x) : 0.0;
}

double quad(const std::vector<double>& a, const std::vector<double>& u, const std::vector<double>& v, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s += u[i] * a[i * n + j] * v[j];
  return s;
}

double trace_prod(const std::vector<double>& a, const std::vector<double>& H, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s += a[i * n + j] * H[j * n + i];
  return s;
}

double value_of(const C12Function& U, double t, std::span<const double> x) { return U.value ? U.value(t, x) : 0.0; }

HypothesisResult v_star_check(const GrowthCaseSpec& cs, const Audit& audit) {
  if (!cs.v_star) {
    HypothesisResult h;
    h.name = "v_star bounded";
    h.status = Verdict::Pass;
    h.margin = 0;
    h.note = "v_star = 0";
    return h;
  }
  const std::size_t n = cs.dim;
  auto q = [&](double t, std::span<const double> x) {
    std::vector<double> a(n * n), v(n);
    cs.diffusion(t, x, a);
    cs.v_star(t, x, v);
    Eigen::Map<Eigen::MatrixXd> A(a.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    Eigen::Map<Eigen::VectorXd> V(v.data(), static_cast<Eigen::Index>(n));
    const Eigen::MatrixXd G = A.completeOrthogonalDecomposition().pseudoInverse();
    const Eigen::VectorXd back = A * (G * V);
    if ((back - V).norm() > 1e-9 * (1 + V.norm())) return kInf;  // outside range(a)
    return std::sqrt(std::max(0.0, V.dot(G * V)));
  };
  return audit_bounded("v_star bounded", audit, audit.times, q, cs.audit.tolerance);
}

HypothesisResult u_star_check(const GrowthCaseSpec& cs, const Audit& audit) {
  return audit_slack("U_star >= 0", audit, {0.0},
                     [&](double, std::span<const double> x) { return cs.U_star ? cs.U_star(x) : 0.0; },
                     cs.audit.tolerance);
}

double U_star(const GrowthCaseSpec& cs, std::span<const double> x) { return cs.U_star ? cs.U_star(x) : 0.0; }
double log_m(const GrowthCaseSpec& cs, std::span<const double> x) { return cs.log_m_density ? cs.log_m_density(x) : 0.0; }
double log_r0(const GrowthCaseSpec& cs, std::span<const double> x) {
  return cs.log_r0_density ? cs.log_r0_density(x) : 0.0;
}

double v_slack_term(double V) { return V + std::log1p(std::max(V, 0.0)); }

}  // namespace

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Pass: return "PASS";
    case Verdict::Fail: return "FAIL";
    case Verdict::Inconclusive: return "INCONCLUSIVE";
  }
  return "?";
}

Verdict combine(Verdict a, Verdict b) {
  if (a == Verdict::Fail || b == Verdict::Fail) return Verdict::Fail;
  if (a == Verdict::Inconclusive || b == Verdict::Inconclusive) return Verdict::Inconclusive;
  return Verdict::Pass;
}

void VerdictRecord::add(HypothesisResult h) {
  overall = hypotheses.empty() ? h.status : combine(overall, h.status);
  hypotheses.push_back(std::move(h));
}

std::string to_json(const VerdictRecord& r, int indent) {
  nlohmann::ordered_json j;
  j["check"] = r.check;
  j["overall"] = std::string(to_string(r.overall));
  auto& hs = j["hypotheses"] = nlohmann::ordered_json::array();
  for (const auto& h : r.hypotheses) {
    nlohmann::ordered_json e;
    e["name"] = h.name;
    e["status"] = std::string(to_string(h.status));
    if (std::isfinite(h.margin))
      e["margin"] = h.margin;
    else
      e["margin"] = h.margin > 0 ? "inf" : "-inf";
    e["worst_point"] = h.worst_point;
    e["note"] = h.note;
    hs.push_back(e);
  }
  return j.dump(indent);
}

C12Function C12Function::zero() {
  C12Function f;
  f.value = [](double, std::span<const double>) { return 0.0; };
  f.grad = [](double, std::span<const double>, std::span<double> g) { std::fill(g.begin(), g.end(), 0.0); };
  f.hessian = [](double, std::span<const double>, std::span<double> h) { std::fill(h.begin(), h.end(), 0.0); };
  return f;
}

C12Function C12Function::quadratic(double c) {
  C12Function f;
  f.value = [c](double, std::span<const double> x) {
    double s = 0;
    for (double v : x) s += v * v;
    return 0.5 * c * s;
  };
  f.grad = [c](double, std::span<const double> x, std::span<double> g) {
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = c * x[i];
  };
  f.hessian = [c](double, std::span<const double> x, std::span<double> h) {
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) h[i * n + j] = i == j ? c : 0.0;
  };
  return f;
}

C12Function C12Function::log_sqrt(double gamma) {
  C12Function f;
  f.value = [gamma](double, std::span<const double> x) {
    double s = 0;
    for (double v : x) s += v * v;
    return 0.5 * gamma * std::log1p(s);
  };
  f.grad = [gamma](double, std::span<const double> x, std::span<double> g) {
    double s = 0;
    for (double v : x) s += v * v;
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = gamma * x[i] / (1 + s);
  };
  f.hessian = [gamma](double, std::span<const double> x, std::span<double> h) {
    const std::size_t n = x.size();
    double s = 0;
    for (double v : x) s += v * v;
    const double q = 1 + s;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) h[i * n + j] = gamma * ((i == j ? 1.0 / q : 0.0) - 2 * x[i] * x[j] / (q * q));
  };
  return f;
}

C12Function C12Function::linear(std::vector<double> coef) {
  C12Function f;
  f.value = [coef](double, std::span<const double> x) {
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += coef[i] * x[i];
    return s;
  };
  f.grad = [coef](double, std::span<const double> x, std::span<double> g) {
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = coef[i];
  };
  f.hessian = [](double, std::span<const double>, std::span<double> h) { std::fill(h.begin(), h.end(), 0.0); };
  return f;
}

GrowthCaseSpec GrowthCaseSpec::from_spec(const DiffusionSpec& spec) {
  GrowthCaseSpec cs;
  cs.dim = spec.dim;
  cs.horizon = spec.horizon;
  cs.diffusion = [spec](double t, std::span<const double> x, std::span<double> a) { spec.diffusion_matrix(t, x, a); };
  cs.U = C12Function::zero();
  cs.U_diamond = C12Function::zero();
  return cs;
}

double script_U(const GrowthCaseSpec& cs, const C12Function& U, double t, std::span<const double> x) {
  Derivs d;
  eval(cs, U, t, x, d);
  const double v = 0.5 * quad(d.a, d.g, d.g, cs.dim) - d.dt - 0.5 * trace_prod(d.a, d.H, cs.dim);
  if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "script U is not finite");
  return v;
}

ScriptH script_H(const GrowthCaseSpec& cs, double t, std::span<const double> x) {
  const std::size_t n = cs.dim;
  Derivs u, w;
  eval(cs, cs.U, t, x, u);
  eval(cs, cs.U_diamond, t, x, w);
  std::vector<double> gH(n), HH(n * n);
  for (std::size_t i = 0; i < n; ++i) gH[i] = w.g[i] - u.g[i];
  for (std::size_t i = 0; i < n * n; ++i) HH[i] = w.H[i] - u.H[i];
  ScriptH r;
  r.direct = -(w.dt - u.dt) + quad(u.a, u.g, gH, n) - 0.5 * trace_prod(u.a, HH, n) + 0.5 * quad(u.a, gH, gH, n);
  r.difference = script_U(cs, cs.U_diamond, t, x) - script_U(cs, cs.U, t, x);
  if (!std::isfinite(r.direct)) fail(ErrorCode::NonFinite, "script H is not finite");
  return r;
}

KhasminskiiResult khasminskii_constant(double w, double tau) {
  KhasminskiiResult r;
  r.alpha = std::abs(w) * tau;
  r.exp_moment = std::exp(r.alpha);
  r.bound = r.alpha < 1 ? 1 / (1 - r.alpha) : kInf;
  r.windows = 1;
  r.holds = r.exp_moment <= r.bound;
  return r;
}

KhasminskiiResult khasminskii_bound(const PathEnsemble& e, const ScalarFn& W, double tau, const SpaceBox& box,
                                    std::size_t min_samples) {
  const TimeGrid& g = e.grid();
  const std::size_t M = g.steps();
  const std::size_t s = g.steps_for(tau);
  const std::size_t windows = M / s;
  if (windows == 0) fail(ErrorCode::InvalidArgument, "window longer than the horizon");
  const TableShape shape{windows, box.total_cells(), 0, 2};
  auto tabs = accumulate(
      e.count(), {shape},
      [&](std::vector<CellTable>& t, std::size_t begin, std::size_t end) {
        std::vector<double> w(M + 1);
        double y[2];
        for (std::size_t i = begin; i < end; ++i) {
          for (std::size_t k = 0; k <= M; ++k) w[k] = std::abs(W(g.time(k), e.state(i, k)));
          for (std::size_t win = 0; win < windows; ++win) {
            const std::size_t k0 = win * s;
            const auto cell = box.locate(e.state(i, k0));
            if (!cell) continue;
            double I = 0;
            for (std::size_t k = k0; k < k0 + s; ++k) I += 0.5 * (w[k] + w[k + 1]) * g.dt(k);
            y[0] = I;
            y[1] = std::exp(I);
            if (!std::isfinite(y[1])) fail(ErrorCode::NonFinite, "window exponential overflowed");
            t[0].add(win, *cell, 1.0, nullptr, y);
          }
        }
      },
      Execution::Parallel);
  KhasminskiiResult r;
  r.windows = windows;
  r.exp_moment = 0;
  for (std::size_t win = 0; win < windows; ++win)
    for (std::size_t c = 0; c < box.total_cells(); ++c) {
      if (tabs[0].count(win, c) < static_cast<double>(std::max<std::size_t>(min_samples, 2))) continue;
      const CellFit f = tabs[0].fit(win, c);
      ++r.cells_used;
      r.alpha = std::max(r.alpha, f.coef[0]);
      if (f.coef[1] > r.exp_moment) {
        r.exp_moment = f.coef[1];
        r.exp_moment_std_error = f.std_error[1];
      }
    }
  if (r.cells_used == 0) fail(ErrorCode::DegenerateESS, "no start cell reached min_samples");
  r.bound = r.alpha < 1 ? 1 / (1 - r.alpha) : kInf;
  r.holds = r.exp_moment <= r.bound * (1 + 3 * r.exp_moment_std_error / r.exp_moment);
  return r;
}

VerdictRecord growth_check_thm30(const GrowthCaseSpec& cs, const Thm30Problem& p) {
  const Audit audit = make_audit(cs);
  const double tol = cs.audit.tolerance;
  const double T = cs.horizon;
  VerdictRecord rec;
  rec.check = "growth_thm30";
  rec.add(u_star_check(cs, audit));
  auto base = [&](std::span<const double> x) {
    return 2 * value_of(cs.U, 0, x) - 2 * value_of(cs.U_diamond, 0, x) + log_m(cs, x);
  };
  rec.add(audit_integral("int e^{2U0-2Ud0} dm", cs.dim, cs.audit, base));
  rec.add(audit_integral("int U* e^{2U0-2Ud0} dm", cs.dim, cs.audit, [&](std::span<const double> x) {
    const double us = U_star(cs, x);
    return (us > 0 ? std::log(us) : -kInf) + base(x);
  }));
  rec.add(audit_integral("int e^{-U*} dm", cs.dim, cs.audit,
                         [&](std::span<const double> x) { return -U_star(cs, x) + log_m(cs, x); }));
  rec.add(audit_bounded("sup |log dR0/dm| / (1+U*)", audit, {0.0},
                        [&](double, std::span<const double> x) {
                          const double a = log_r0(cs, x), b = log_m(cs, x);
                          if (a == -kInf && b == -kInf) return 0.0;
                          return std::abs(a - b) / (1 + U_star(cs, x));
                        },
                        tol));
  rec.add(audit_slack("f0 log+ f0 <= kappa e^{U0-Ud0}", audit, {0.0},
                      [&](double, std::span<const double> x) {
                        const double f = p.f0(x);
                        return cs.kappa * std::exp(value_of(cs.U, 0, x) - value_of(cs.U_diamond, 0, x)) -
                               f * log_plus(f);
                      },
                      tol));
  rec.add(audit_slack("gT log+ gT <= kappa e^{UT-UdT}", audit, {T},
                      [&](double, std::span<const double> x) {
                        const double g = p.gT(x);
                        return cs.kappa * std::exp(value_of(cs.U, T, x) - value_of(cs.U_diamond, T, x)) -
                               g * log_plus(g);
                      },
                      tol));
  rec.add(audit_slack("V + log(1+V+) <= scriptU - scriptUd + c", audit, audit.times,
                      [&](double t, std::span<const double> x) {
                        const double V = p.V(t, x);
                        if (V == -kInf) return kInf;
                        return script_U(cs, cs.U, t, x) - script_U(cs, cs.U_diamond, t, x) + cs.c - v_slack_term(V);
                      },
                      tol));
  rec.add(v_star_check(cs, audit));
  return rec;
}

VerdictRecord growth_check_thm32(const GrowthCaseSpec& cs, const Thm30Problem& p, const Thm32Inputs& in) {
  if (!(in.p >= 1)) fail(ErrorCode::InvalidArgument, "exponent p must be >= 1");
  const Audit audit = make_audit(cs);
  const double tol = cs.audit.tolerance;
  const double T = cs.horizon;
  VerdictRecord rec;
  rec.check = "growth_thm32";
  rec.add(u_star_check(cs, audit));
  const double pe = in.p;
  const double pp = pe == 1 ? kInf : (std::isinf(pe) ? 1.0 : pe / (pe - 1));
  auto h0w = [&](std::span<const double> x) { return (1 + U_star(cs, x)) * in.h0(x); };
  auto log_h = [](const StateFn& h, const StateFn& lh, std::span<const double> x) {
    if (lh) return lh(x);
    const double v = h(x);
    return v > 0 ? std::log(v) : -kInf;
  };
  if (std::isinf(pe))
    rec.add(audit_bounded("(1+U*) h0 in L^inf", audit, {0.0},
                          [&](double, std::span<const double> x) { return h0w(x); }, tol));
  else
    rec.add(audit_integral("(1+U*) h0 in L^p", cs.dim, cs.audit, [&](std::span<const double> x) {
      const double l = log_h(in.h0, in.log_h0, x);
      return l == -kInf ? -kInf : pe * (std::log1p(U_star(cs, x)) + l);
    }));
  if (std::isinf(pp))
    rec.add(audit_bounded("hT in L^inf", audit, {T}, [&](double, std::span<const double> x) { return in.hT(x); },
                          tol));
  else
    rec.add(audit_integral("hT in L^p'", cs.dim, cs.audit, [&](std::span<const double> x) {
      const double l = log_h(in.hT, in.log_hT, x);
      return l == -kInf ? -kInf : pp * l;
    }));
  rec.add(audit_integral("int e^{-U*-2U0}", cs.dim, cs.audit, [&](std::span<const double> x) {
    return -U_star(cs, x) - 2 * value_of(cs.U, 0, x);
  }));
  rec.add(audit_bounded("sup |log dR0/dx + 2U0| / (1+U*)", audit, {0.0},
                        [&](double, std::span<const double> x) {
                          return std::abs(log_r0(cs, x) + 2 * value_of(cs.U, 0, x)) / (1 + U_star(cs, x));
                        },
                        tol));
  // With a log form given, compare U + log h against log f relative to their size, which stays
  // finite where e^U overflows and h underflows.
  auto data_slack = [&](const StateFn& h, const StateFn& lh, const StateFn& f, double t, std::span<const double> x) {
    if (!lh) return std::exp(value_of(cs.U, t, x)) * h(x) - f(x);
    const double fx = f(x);
    if (fx <= 0) return kInf;
    const double a = value_of(cs.U, t, x) + lh(x), b = std::log(fx);
    if (a == -kInf) return -kInf;
    return (a - b) / (1 + std::abs(a) + std::abs(b));
  };
  rec.add(audit_slack("f0 <= e^{U0} h0", audit, {0.0},
                      [&](double, std::span<const double> x) { return data_slack(in.h0, in.log_h0, p.f0, 0, x); },
                      tol));
  rec.add(audit_slack("gT <= e^{UT} hT", audit, {T},
                      [&](double, std::span<const double> x) { return data_slack(in.hT, in.log_hT, p.gT, T, x); },
                      tol));
  rec.add(audit_slack("V + log(1+V+) <= scriptU + W", audit, audit.times,
                      [&](double t, std::span<const double> x) {
                        const double V = p.V(t, x);
                        if (V == -kInf) return kInf;
                        return script_U(cs, cs.U, t, x) + in.W(x) - v_slack_term(V);
                      },
                      tol));
  HypothesisResult kato;
  kato.name = "W in Kato class";
  if (in.assume_kato) {
    kato.status = Verdict::Pass;
    kato.note = "assumed by the caller";
  } else {
    const KatoRecord kr = in.kato ? *in.kato : kato_check_brownian(KatoInput{in.W, cs.dim, {}, {}});
    if (kr.verdict == Verdict::Inconclusive)
      fail(ErrorCode::KatoUnresolved, "Kato membership of W is inconclusive: " + kr.note);
    kato.status = kr.verdict;
    kato.margin = kr.sup_values.empty() ? 0 : kr.sup_values.back();
    kato.worst_point = kr.worst_probe;
    kato.note = kr.note;
  }
  rec.add(kato);
  rec.add(v_star_check(cs, audit));
  return rec;
}

DomainGuard entropy_domain_guard(const WeightedEnsemble& w, const StateFn& W0, bool exp_integrable) {
  const PathEnsemble& e = *w.base;
  const std::size_t N = w.count(), half = N / 2;
  DomainGuard g;
  g.exp_integrable = exp_integrable;
  std::vector<double> v(N);
  double sw = 0, swv = 0, sw_h = 0, swv_h = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const double wi = w.weights[i];
    if (wi == 0) continue;
    v[i] = W0(e.state(i, 0));
    sw += wi;
    swv += wi * v[i];
    if (i < half) {
      sw_h += wi;
      swv_h += wi * v[i];
    }
  }
  g.mean = swv / sw;
  g.half_mean = sw_h > 0 ? swv_h / sw_h : 0.0;
  double s2 = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const double wi = w.weights[i];
    if (wi == 0) continue;
    const double d = v[i] - g.mean;
    s2 += wi * wi * d * d;
  }
  g.std_error = std::sqrt(s2) / sw;
  if (!std::isfinite(g.mean) || !std::isfinite(g.std_error)) {
    g.pass = false;
    g.note = "weighted mean of W0 is not finite";
    return g;
  }
  const double scale = std::abs(g.mean);
  if (scale == 0 && g.half_mean == 0) {
    g.pass = exp_integrable;
    g.note = "W0 vanishes on the sample";
    return g;
  }
  g.relative_change = std::abs(g.mean - g.half_mean) / scale;
  const double rel_se = g.std_error / scale;
  g.pass = exp_integrable && rel_se < 0.1 && g.relative_change <= 0.05 + 3 * rel_se;
  g.note = g.pass ? "mean stable under doubling N" : "mean unstable under doubling N or dominated by few paths";
  if (!exp_integrable) g.note += "; int e^{-W0} not known finite";
  return g;
}

}  // namespace fklab
