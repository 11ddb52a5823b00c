#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include "fklab/conditions.hpp"
#include "fklab/errors.hpp"

namespace fklab {

namespace {

using GK = boost::math::quadrature::gauss_kronrod<double, 15>;
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPi = std::numbers::pi;

struct Frame {
  std::array<double, 3> e1{1, 0, 0}, e2{0, 1, 0}, e3{0, 0, 1};
};

// Orthonormal frame with e3 pointing at the nearest singular point (so the singular ray sits on
// the polar axis, where the sin(theta) weight damps it).
Frame frame_toward(const KatoInput& in, std::span<const double> x) {
  Frame f;
  if (in.dim < 2) return f;
  double best = kInf;
  std::array<double, 3> dir{0, 0, 0};
  for (const auto& s : in.singular_points) {
    std::array<double, 3> d{0, 0, 0};
    double r2 = 0;
    for (std::size_t a = 0; a < in.dim; ++a) {
      d[a] = s[a] - x[a];
      r2 += d[a] * d[a];
    }
    if (r2 > 0 && r2 < best) {
      best = r2;
      const double r = std::sqrt(r2);
      for (auto& v : d) v /= r;
      dir = d;
    }
  }
  if (best == kInf) return f;
  if (in.dim == 2) {
    f.e1 = {dir[0], dir[1], 0};
    f.e2 = {-dir[1], dir[0], 0};
    return f;
  }
  f.e3 = dir;
  const std::array<double, 3> helper = std::abs(dir[0]) < 0.9 ? std::array<double, 3>{1, 0, 0}
                                                                : std::array<double, 3>{0, 1, 0};
  std::array<double, 3> e1{dir[1] * helper[2] - dir[2] * helper[1], dir[2] * helper[0] - dir[0] * helper[2],
                           dir[0] * helper[1] - dir[1] * helper[0]};
  const double n1 = std::sqrt(e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]);
  for (auto& v : e1) v /= n1;
  f.e1 = e1;
  f.e2 = {dir[1] * e1[2] - dir[2] * e1[1], dir[2] * e1[0] - dir[0] * e1[2], dir[0] * e1[1] - dir[1] * e1[0]};
  return f;
}

double kernel_weight(std::size_t n, double r) {
  // r^{n-1} G(r)
  switch (n) {
    case 1: return r;
    case 2: return r * std::abs(std::log(r));
    default: return r;  // r^2 * r^{-1}
  }
}

// Angular integral of |W| on the sphere of radius r around x.
double sphere_integral(const KatoInput& in, std::span<const double> x, const Frame& f, double r, double tol) {
  const std::size_t n = in.dim;
  std::array<double, 3> y{};
  auto W = [&](const std::array<double, 3>& p) { return std::abs(in.W(std::span<const double>(p.data(), n))); };
  if (n == 1) {
    y[0] = x[0] + r;
    double s = W(y);
    y[0] = x[0] - r;
    return s + W(y);
  }
  if (n == 2) {
    auto g = [&](double th) {
      const double c = std::cos(th), s = std::sin(th);
      for (std::size_t a = 0; a < 2; ++a) y[a] = x[a] + r * (c * f.e1[a] + s * f.e2[a]);
      return W(y);
    };
    return GK::integrate(g, 0.0, 2 * kPi, 10, tol);
  }
  auto over_theta = [&](double th) {
    const double st = std::sin(th), ct = std::cos(th);
    auto over_phi = [&](double ph) {
      const double cp = std::cos(ph), sp = std::sin(ph);
      for (std::size_t a = 0; a < 3; ++a) y[a] = x[a] + r * (st * cp * f.e1[a] + st * sp * f.e2[a] + ct * f.e3[a]);
      return W(y);
    };
    return st * GK::integrate(over_phi, 0.0, 2 * kPi, 6, tol);
  };
  return GK::integrate(over_theta, 0.0, kPi, 8, tol);
}

struct ShellSum {
  double value = 0;
  bool divergent = false;
};

ShellSum shell_sum(const KatoInput& in, std::span<const double> x, double alpha, double abs_tol) {
  const Frame f = frame_toward(in, x);
  ShellSum out;
  double prev = -1;
  int stalls = 0;
  for (int j = 0; j < 80; ++j) {
    const double r1 = alpha * std::ldexp(1.0, -j), r0 = 0.5 * r1;
    // Integrate in u = r / r1 so tiny shells keep a well-scaled error estimate.
    auto g = [&](double u) { return r1 * kernel_weight(in.dim, r1 * u) * sphere_integral(in, x, f, r1 * u, 1e-7); };
    // Radii where the sphere crosses a singular point carry a log peak; put them at panel edges.
    std::vector<double> cuts{0.5};
    for (const auto& s : in.singular_points) {
      double d2 = 0;
      for (std::size_t a = 0; a < in.dim; ++a) d2 += (s[a] - x[a]) * (s[a] - x[a]);
      const double d = std::sqrt(d2);
      if (d > r0 && d < r1) cuts.push_back(d / r1);
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.push_back(1.0);
    double shell = 0;
    for (std::size_t c = 0; c + 1 < cuts.size(); ++c) shell += GK::integrate(g, cuts[c], cuts[c + 1], 8, 1e-8);
    if (std::isnan(shell)) fail(ErrorCode::QuadratureFailure, "shell integral is NaN at radius " + std::to_string(r1));
    if (std::isinf(shell)) {
      out.divergent = true;
      out.value = kInf;
      return out;
    }
    out.value += shell;
    if (prev > 0 && shell >= 0.9 * prev) {
      if (++stalls >= 4) {
        out.divergent = true;
        out.value = kInf;
        return out;
      }
    } else {
      stalls = 0;
    }
    prev = shell;
    if (j >= 3 && shell <= 1e-3 * abs_tol) break;
  }
  return out;
}

}  // namespace

double kato_integral(const KatoInput& in, std::span<const double> x, double alpha, double abs_tol) {
  if (in.dim < 1 || in.dim > 3) fail(ErrorCode::InvalidArgument, "Kato check supports dimensions 1 to 3");
  if (!(alpha > 0)) fail(ErrorCode::InvalidArgument, "alpha must be positive");
  return shell_sum(in, x, alpha, abs_tol).value;
}

KatoRecord kato_check_brownian(const KatoInput& in, const KatoOptions& opts_in) {
  if (in.dim < 1 || in.dim > 3) fail(ErrorCode::InvalidArgument, "Kato check supports dimensions 1 to 3");
  KatoOptions opts = opts_in;
  if (opts.alphas.empty())
    for (int j = 0; j <= 12; ++j) opts.alphas.push_back(std::ldexp(1.0, -j));
  const std::size_t n = in.dim;
  std::vector<std::vector<double>> probes = in.singular_points;
  for (const auto& p : in.probes) probes.push_back(p);
  probes.emplace_back(n, 0.0);
  // Far-field rays along each axis, both signs.
  std::vector<std::vector<std::vector<double>>> rays;
  for (std::size_t a = 0; a < n; ++a)
    for (double sgn : {1.0, -1.0}) {
      std::vector<std::vector<double>> ray;
      for (std::size_t j = 0; j < opts.far_probes; ++j) {
        std::vector<double> p(n, 0.0);
        p[a] = sgn * 1.5 * std::ldexp(1.0, static_cast<int>(j));
        ray.push_back(p);
      }
      rays.push_back(ray);
    }

  KatoRecord rec;
  rec.alphas = opts.alphas;
  for (const auto& ray : rays) {
    std::vector<double> v;
    for (const auto& p : ray) {
      const ShellSum s = shell_sum(in, p, opts.alphas.front(), opts.abs_tol);
      v.push_back(s.value);
      if (s.divergent) rec.divergent = true;
    }
    const std::size_t m = v.size();
    if (m >= 3 && v[m - 1] > 1.5 * v[m - 2] && v[m - 2] > v[m - 3] && v[m - 1] > opts.threshold)
      rec.unbounded = true;
  }
  for (double alpha : opts.alphas) {
    double sup = 0;
    std::vector<double> arg;
    auto visit = [&](const std::vector<double>& p) {
      const ShellSum s = shell_sum(in, p, alpha, opts.abs_tol);
      if (s.divergent) rec.divergent = true;
      if (arg.empty() || s.value > sup) {
        sup = s.value;
        arg = p;
      }
    };
    for (const auto& p : probes) visit(p);
    if (!rec.unbounded)
      for (const auto& ray : rays) visit(ray.back());
    rec.sup_values.push_back(sup);
    if (alpha == opts.alphas.back()) rec.worst_probe = arg;
    if (rec.divergent || rec.unbounded) break;
  }
  rec.alphas.resize(rec.sup_values.size());
  if (rec.divergent) {
    rec.verdict = Verdict::Fail;
    rec.note = "radial shells do not decay: the Green-weighted integral diverges";
    return rec;
  }
  if (rec.unbounded) {
    rec.verdict = Verdict::Fail;
    rec.note = "far-field probes grow without bound";
    return rec;
  }
  const auto& s = rec.sup_values;
  bool monotone = true;
  for (std::size_t j = 1; j < s.size(); ++j)
    if (s[j] > s[j - 1] + opts.abs_tol) monotone = false;
  const double last = s.back();
  if (monotone && last <= opts.threshold) {
    rec.verdict = Verdict::Pass;
    rec.note = "sup over probes decays along the alpha ladder";
  } else if (s.size() >= 2 && last > opts.threshold && last >= 0.9 * s[s.size() - 2]) {
    rec.verdict = Verdict::Fail;
    rec.note = "sup over probes stalls above threshold";
  } else {
    rec.verdict = Verdict::Inconclusive;
    rec.note = monotone ? "decaying but still above threshold" : "ladder is not monotone within tolerance";
  }
  return rec;
}

}  // namespace fklab
