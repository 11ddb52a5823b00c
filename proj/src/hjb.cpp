#include "fklab/hjb.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "fklab/binning.hpp"
#include "fklab/errors.hpp"
#include "json.hpp"

namespace fklab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::size_t> axis_strides(const SpaceBox& box) {
  std::vector<std::size_t> s(box.dim(), 1);
  for (std::size_t a = box.dim(); a-- > 1;) s[a - 1] = s[a] * box.cells[a];
  return s;
}

void require_same(const TimeGrid& a, const TimeGrid& b, const char* what) {
  if (!(a == b)) fail(ErrorCode::InvalidArgument, std::string(what) + ": time grids differ");
}

// a(t, x) grad, and grad.a.grad.
double quad_form(const DiffusionSpec& spec, double t, std::span<const double> x, std::span<const double> g,
                 std::vector<double>& a, std::vector<double>& ag) {
  const std::size_t n = spec.dim;
  spec.diffusion_matrix(t, x, a);
  double q = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ag[i] = 0;
    for (std::size_t j = 0; j < n; ++j) ag[i] += a[i * n + j] * g[j];
    q += g[i] * ag[i];
  }
  return q;
}

void fmt(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  os << buf;
}


}  // namespace

VectorFieldEstimate gradient_grid(const ScalarField& psi) {
  const SpaceBox& box = psi.box;
  const std::size_t n = box.dim(), C = psi.cells();
  const auto stride = axis_strides(box);
  VectorFieldEstimate g(psi.grid, box, n);
  for (std::size_t r = 0; r < psi.rows(); ++r)
    for (std::size_t c = 0; c < C; ++c) {
      if (!psi.valid(r, c)) continue;
      bool ok = true;
      std::vector<double> val(n), se(n);
      for (std::size_t a = 0; a < n && ok; ++a) {
        const std::size_t i = (c / stride[a]) % box.cells[a];
        const bool has_lo = i > 0 && psi.valid(r, c - stride[a]);
        const bool has_hi = i + 1 < box.cells[a] && psi.valid(r, c + stride[a]);
        const double w = box.width(a);
        auto v = [&](std::size_t cell) { return psi.values[psi.at(r, cell)]; };
        auto s = [&](std::size_t cell) { return psi.std_error[psi.at(r, cell)]; };
        if (has_lo && has_hi) {
          const std::size_t lo = c - stride[a], hi = c + stride[a];
          val[a] = (v(hi) - v(lo)) / (2 * w);
          se[a] = std::hypot(s(hi), s(lo)) / (2 * w);
        } else if (has_hi) {
          const std::size_t hi = c + stride[a];
          val[a] = (v(hi) - v(c)) / w;
          se[a] = std::hypot(s(hi), s(c)) / w;
        } else if (has_lo) {
          const std::size_t lo = c - stride[a];
          val[a] = (v(c) - v(lo)) / w;
          se[a] = std::hypot(s(c), s(lo)) / w;
        } else {
          ok = false;
        }
      }
      if (!ok) continue;
      const std::size_t i = g.at(r, c);
      for (std::size_t a = 0; a < n; ++a) {
        g.values[i * n + a] = val[a];
        g.std_error[i * n + a] = se[a];
      }
      g.samples[i] = psi.samples[psi.at(r, c)];
      g.mask[i] = 1;
    }
  if (g.valid_count() == 0) fail(ErrorCode::MaskCoverage, "psi has no cell with a valid neighbour");
  return g;
}

VectorFieldEstimate gradient_regression(const PathEnsemble& e, const ScalarFn& psi, double h, const SpaceBox& box,
                                        const Weighting& wt, const DerivativeOptions& opts) {
  const std::size_t n = e.dim(), K = e.knots(), M = K - 1;
  if (box.dim() != n) fail(ErrorCode::InvalidArgument, "box and ensemble dimensions differ");
  if (wt.mode == WeightMode::Adapted) fail(ErrorCode::InvalidArgument, "gradient regression takes none or terminal weights");
  const std::size_t s = e.grid().steps_for(h);
  const TableShape shape{K, box.total_cells(), n, 1};
  auto tabs = accumulate(
      e.count(), {shape},
      [&](std::vector<CellTable>& t, std::size_t begin, std::size_t end) {
        std::vector<double> u(K), z(n);
        for (std::size_t i = begin; i < end; ++i) {
          double w = 1;
          if (wt.mode == WeightMode::Terminal) {
            w = wt.terminal->weights[i];
            if (w == 0) continue;
          }
          for (std::size_t k = 0; k < K; ++k) u[k] = psi(e.grid().time(k), e.state(i, k));
          for (std::size_t k = 0; k + s <= M; ++k) {
            const auto cell = box.locate(e.state(i, k));
            if (!cell || std::isnan(u[k]) || std::isnan(u[k + s])) continue;
            const auto x0 = e.state(i, k), x1 = e.state(i, k + s);
            for (std::size_t a = 0; a < n; ++a) z[a] = x1[a] - x0[a];
            const double y = u[k + s] - u[k];
            if (!std::isfinite(y)) fail(ErrorCode::NonFinite, "non-finite psi increment on path " + std::to_string(i));
            t[0].add(k, *cell, w, z.data(), &y);
          }
        }
      },
      opts.execution);
  VectorFieldEstimate g(e.grid(), box, n);
  std::size_t enough = 0, singular = 0;
  for (std::size_t r = 0; r + s <= M; ++r)
    for (std::size_t c = 0; c < g.cells(); ++c) {
      const double cnt = tabs[0].count(r, c);
      const std::size_t i = g.at(r, c);
      g.samples[i] = static_cast<std::uint64_t>(cnt);
      if (cnt < static_cast<double>(opts.min_samples) || cnt < 1) continue;
      ++enough;
      const CellFit f = tabs[0].fit(r, c);
      if (!f.ok) {
        ++singular;
        continue;
      }
      for (std::size_t a = 0; a < n; ++a) {
        g.values[i * n + a] = f.coef[a + 1];
        g.std_error[i * n + a] = f.std_error[a + 1];
      }
      g.mask[i] = 1;
    }
  if (enough > 0 && singular == enough)
    fail(ErrorCode::IllConditioned, "increment covariance is singular in every populated cell");
  if (g.valid_count() == 0) fail(ErrorCode::MaskCoverage, "no cell reached min_samples");
  return g;
}

VectorFieldEstimate gradient_estimate(const ScalarField& psi, GradientMethod method, const PathEnsemble* e, double h,
                                      const Weighting& wt, const DerivativeOptions& opts) {
  if (method == GradientMethod::GridDifferences) return gradient_grid(psi);
  if (!e) fail(ErrorCode::InvalidArgument, "martingale regression needs an ensemble");
  return gradient_regression(*e, field_function(psi), h, psi.box, wt, opts);
}

ScalarFn field_function(const ScalarField& f) {
  return [&f](double t, std::span<const double> x) {
    const auto r = f.interpolate(f.grid.knot_of(t), x);
    return r ? r->value : kNaN;
  };
}

ScalarField resample(const ScalarField& src, const SpaceBox& box) {
  if (src.box == box) return src;
  ScalarField out(src.grid, box);
  std::vector<double> x(box.dim());
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cells(); ++c) {
      box.center(c, x);
      const auto v = src.interpolate(r, x);
      if (!v) continue;
      const std::size_t i = out.at(r, c);
      out.values[i] = v->value;
      out.std_error[i] = std::sqrt(v->variance);
      out.mask[i] = 1;
    }
  return out;
}

VectorFieldEstimate resample(const VectorFieldEstimate& src, const SpaceBox& box) {
  if (src.box == box) return src;
  const std::size_t q = src.components;
  VectorFieldEstimate out(src.grid, box, q);
  std::vector<double> x(box.dim()), v(q), var(q);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cells(); ++c) {
      box.center(c, x);
      if (!src.interpolate(r, x, v, var)) continue;
      const std::size_t i = out.at(r, c);
      for (std::size_t j = 0; j < q; ++j) {
        out.values[i * q + j] = v[j];
        out.std_error[i * q + j] = std::sqrt(var[j]);
      }
      out.mask[i] = 1;
    }
  return out;
}

ScalarField p_cell_mass(const PathEnsemble& e, const WeightedEnsemble* wt, const SpaceBox& box) {
  if (wt && wt->count() != e.count()) fail(ErrorCode::InvalidArgument, "weights do not match the ensemble");
  const std::size_t K = e.knots();
  auto tabs = accumulate(
      e.count(), {TableShape{K, box.total_cells(), 0, 1}},
      [&](std::vector<CellTable>& t, std::size_t begin, std::size_t end) {
        const double one = 1;
        for (std::size_t i = begin; i < end; ++i) {
          const double w = wt ? wt->weights[i] : 1.0;
          if (w == 0) continue;
          for (std::size_t k = 0; k < K; ++k)
            if (const auto c = box.locate(e.state(i, k))) t[0].add(k, *c, w, nullptr, &one);
        }
      },
      Execution::Parallel);
  double total = 0;
  if (wt)
    for (double w : wt->weights) total += w;
  else
    total = static_cast<double>(e.count());
  ScalarField m(e.grid(), box);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cells(); ++c) {
      const std::size_t i = m.at(r, c);
      m.values[i] = tabs[0].sum_w(r, c) / total;
      m.samples[i] = static_cast<std::uint64_t>(tabs[0].count(r, c));
      m.mask[i] = 1;
    }
  return m;
}

DerivativeEstimate p_localized_derivative(const ScalarFn& u, const ScalarFn& psi, const FKProblem& problem,
                               const PathEnsemble& e, const SpaceBox& box, double h, std::size_t min_samples,
                               Execution exec, const std::vector<std::size_t>& knots) {
  DerivativeOptions o;
  o.min_samples = min_samples;
  o.estimator = DerivativeEstimator::MartingaleAdjusted;
  o.spec = &problem.spec;
  o.execution = exec;
  o.knots = knots;
  return forward_derivative(e, u, h, box, Weighting::adapted(problem, psi), o);
}

ResidualReport summarize(std::string name, ScalarField res, ScalarField scale, const ScalarField& mass,
                         const ResidualOptions& opts) {
  require_same(res.grid, mass.grid, "residual and mass");
  if (!(res.box == mass.box) || !(scale.box == res.box))
    fail(ErrorCode::InvalidArgument, "residual, scale and mass boxes differ");
  ResidualReport r;
  r.name = std::move(name);
  r.tolerance = opts.tolerance;
  double m_all = 0, m_valid = 0, a1 = 0, a2 = 0, as = 0, ase = 0;
  for (std::size_t k = 0; k < res.rows(); ++k) {
    const double t = res.grid.time(k);
    if (t < opts.t_min - 1e-12 || t > opts.t_max + 1e-12) continue;
    if (!opts.times.empty() &&
        std::none_of(opts.times.begin(), opts.times.end(), [&](double s) { return std::abs(s - t) < 1e-9; }))
      continue;
    for (std::size_t c = 0; c < res.cells(); ++c) {
      const std::size_t i = res.at(k, c);
      const double m = mass.values[i];
      m_all += m;
      if (!res.mask[i] || !scale.mask[i]) {
        res.mask[i] = 0;
        continue;
      }
      ++r.valid_cells;
      const double v = res.values[i], se = res.std_error[i];
      if (std::abs(v) <= opts.z_threshold * se) ++r.within_z;
      m_valid += m;
      a1 += m * std::abs(v);
      a2 += m * v * v;
      as += m * std::abs(scale.values[i]);
      ase += m * se;
    }
  }
  if (r.valid_cells == 0 || !(m_valid > 0)) fail(ErrorCode::MaskCoverage, r.name + ": no valid cell carries weight");
  r.l1 = a1 / m_valid;
  r.l2 = std::sqrt(a2 / m_valid);
  r.scale_l1 = as / m_valid;
  r.pooled_std_error = ase / m_valid;
  r.relative_l1 = r.scale_l1 > 0 ? r.l1 / r.scale_l1 : (r.l1 > 0 ? std::numeric_limits<double>::infinity() : 0.0);
  r.coverage = m_all > 0 ? m_valid / m_all : 0.0;
  r.within_fraction = static_cast<double>(r.within_z) / static_cast<double>(r.valid_cells);
  // A vanishing scale means the exact residual is zero; judge against noise instead.
  r.pass = r.scale_l1 > 3 * r.pooled_std_error ? r.relative_l1 < opts.tolerance
                                               : r.l1 <= 3 * r.pooled_std_error;
  char buf[160];
  std::snprintf(buf, sizeof buf, "estimator bias O(h) + O(dx^2) + MC noise (pooled se %.3g); relative tolerance %.3g",
                r.pooled_std_error, opts.tolerance);
  r.budget = buf;
  r.residual = std::move(res);
  r.scale = std::move(scale);
  return r;
}

namespace {

// Shared body for the three psi identities: residual = L + sign_q * q/2 + sign_v * V.
ResidualReport psi_identity(const char* name, const VectorFieldEstimate& grad_in, const ScalarField& L,
                            const FKProblem& problem, const ScalarField& mass, double q_coef, double v_coef,
                            const ResidualOptions& opts) {
  require_same(grad_in.grid, L.grid, name);
  const VectorFieldEstimate grad = resample(grad_in, L.box);
  const std::size_t n = problem.spec.dim;
  ScalarField res(L.grid, L.box), scale(L.grid, L.box);
  std::vector<double> x(n), a(n * n), ag(n);
  for (std::size_t k = 0; k < L.rows(); ++k)
    for (std::size_t c = 0; c < L.cells(); ++c) {
      const std::size_t i = L.at(k, c);
      if (!L.mask[i] || !grad.mask[i]) continue;
      L.box.center(c, x);
      const double t = L.grid.time(k);
      std::span<const double> g(grad.values.data() + i * n, n);
      const double q = quad_form(problem.spec, t, x, g, a, ag);
      const double V = problem.potential(t, x);
      double var = L.std_error[i] * L.std_error[i];
      for (std::size_t j = 0; j < n; ++j) {
        const double d = q_coef * ag[j] * grad.std_error[i * n + j];
        var += d * d;
      }
      res.values[i] = L.values[i] + 0.5 * q_coef * q + v_coef * V;
      res.std_error[i] = std::sqrt(var);
      res.samples[i] = L.samples[i];
      res.mask[i] = std::isfinite(res.values[i]);
      scale.values[i] = std::abs(V) + std::abs(L.values[i]);
      scale.mask[i] = 1;
    }
  return summarize(name, std::move(res), std::move(scale), mass, opts);
}

}  // namespace

ResidualReport hjb_residual(const VectorFieldEstimate& grad, const ScalarField& L_psi, const FKProblem& problem,
                            const ScalarField& p_mass, const ResidualOptions& opts) {
  return psi_identity("hjb_residual", grad, L_psi, problem, p_mass, 1.0, 1.0, opts);
}

ResidualReport lp_identity_check(const VectorFieldEstimate& grad, const ScalarField& LP_psi, const FKProblem& problem,
                                 const ScalarField& p_mass, const ResidualOptions& opts) {
  return psi_identity("lp_identity", grad, LP_psi, problem, p_mass, -1.0, 1.0, opts);
}

ResidualReport operator_consistency(const ScalarField& LRP, const ScalarField& LP, const VectorFieldEstimate& grad_in,
                                    const DiffusionSpec& spec, const ScalarField& mass, const ResidualOptions& opts) {
  require_same(LRP.grid, LP.grid, "operator_consistency");
  if (!(LRP.box == LP.box)) fail(ErrorCode::InvalidArgument, "operator_consistency: boxes differ");
  const VectorFieldEstimate grad = resample(grad_in, LRP.box);
  const std::size_t n = spec.dim;
  ScalarField res(LRP.grid, LRP.box), scale(LRP.grid, LRP.box);
  std::vector<double> x(n), a(n * n), ag(n);
  for (std::size_t k = 0; k < LRP.rows(); ++k)
    for (std::size_t c = 0; c < LRP.cells(); ++c) {
      const std::size_t i = LRP.at(k, c);
      if (!LRP.mask[i] || !LP.mask[i] || !grad.mask[i]) continue;
      LRP.box.center(c, x);
      std::span<const double> g(grad.values.data() + i * n, n);
      const double q = quad_form(spec, LRP.grid.time(k), x, g, a, ag);
      double var = LRP.std_error[i] * LRP.std_error[i] + LP.std_error[i] * LP.std_error[i];
      for (std::size_t j = 0; j < n; ++j) {
        const double d = 2 * ag[j] * grad.std_error[i * n + j];
        var += d * d;
      }
      res.values[i] = LRP.values[i] - LP.values[i] + q;
      res.std_error[i] = std::sqrt(var);
      res.mask[i] = 1;
      scale.values[i] = std::abs(LP.values[i]) + q;
      scale.mask[i] = 1;
    }
  return summarize("operator_consistency", std::move(res), std::move(scale), mass, opts);
}

ResidualReport fk_residual(const ScalarField& g, const FKProblem& problem, const PathEnsemble& e, const SpaceBox& box,
                           const ScalarField& mass, const FkResidualInputs& in, const ResidualOptions& opts) {
  require_same(g.grid, e.grid(), "fk_residual");
  const ScalarFn u = field_function(g);
  const ScalarFn psi = [&u](double t, std::span<const double> x) {
    const double v = u(t, x);
    return v > 0 ? std::log(v) : kNaN;
  };
  const DerivativeEstimate d = p_localized_derivative(u, psi, problem, e, box, in.h, in.min_samples, in.execution, in.knots);
  const ScalarField& L = d.extrapolated;
  const ScalarField gb = resample(g, box);
  ScalarField res(L.grid, box), scale(L.grid, box);
  std::vector<double> x(box.dim());
  for (std::size_t k = 0; k < L.rows(); ++k)
    for (std::size_t c = 0; c < L.cells(); ++c) {
      const std::size_t i = L.at(k, c);
      if (!L.mask[i] || !gb.mask[i]) continue;
      box.center(c, x);
      const double V = problem.potential(L.grid.time(k), x);
      res.values[i] = L.values[i] + V * gb.values[i];
      res.std_error[i] = std::hypot(L.std_error[i], V * gb.std_error[i]);
      res.samples[i] = L.samples[i];
      res.mask[i] = std::isfinite(res.values[i]);
      scale.values[i] = std::abs(V * gb.values[i]);
      scale.mask[i] = 1;
    }
  ResidualReport r = summarize("fk_residual", std::move(res), std::move(scale), mass, opts);
  r.h = in.h;
  r.steps = d.steps;
  return r;
}

ResidualReport gradient_comparison(const VectorFieldEstimate& a_in, const VectorFieldEstimate& b_in,
                                   const ScalarField& mass, const ResidualOptions& opts) {
  require_same(a_in.grid, b_in.grid, "gradient_comparison");
  const VectorFieldEstimate a = resample(a_in, mass.box), b = resample(b_in, mass.box);
  const std::size_t q = a.components;
  ScalarField res(a.grid, mass.box), scale(a.grid, mass.box);
  for (std::size_t i = 0; i < res.values.size(); ++i) {
    if (!a.mask[i] || !b.mask[i]) continue;
    double d2 = 0, s2 = 0, m2 = 0;
    for (std::size_t j = 0; j < q; ++j) {
      const double d = a.values[i * q + j] - b.values[i * q + j];
      d2 += d * d;
      s2 += a.std_error[i * q + j] * a.std_error[i * q + j] + b.std_error[i * q + j] * b.std_error[i * q + j];
      m2 += a.values[i * q + j] * a.values[i * q + j];
    }
    res.values[i] = std::sqrt(d2);
    res.std_error[i] = std::sqrt(s2);
    res.mask[i] = 1;
    scale.values[i] = std::sqrt(m2);
    scale.mask[i] = 1;
  }
  return summarize("gradient_comparison", std::move(res), std::move(scale), mass, opts);
}

DriftReport drift_formula_check(const DiffusionSpec& spec, const VectorFieldEstimate& grad_in,
                                const WeightedEnsemble& w, double h, const SpaceBox& box, const ResidualOptions& opts,
                                const DerivativeOptions& dopts) {
  if (w.ess < 0.01 * static_cast<double>(w.count()))
    fail(ErrorCode::DegenerateESS, "ess " + std::to_string(w.ess) + " below 1% of N");
  const PathEnsemble& e = *w.base;
  require_same(grad_in.grid, e.grid(), "drift_formula_check");
  DriftReport out;
  DerivativeOptions plain = dopts;
  plain.estimator = DerivativeEstimator::Plain;
  out.lhs = nelson_velocity(e, h, box, Weighting::terminal_weights(w), nullptr, plain);
  const VectorFieldEstimate grad = resample(grad_in, box);
  const std::size_t n = spec.dim;
  out.rhs = VectorFieldEstimate(e.grid(), box, n);
  ScalarField res(e.grid(), box), scale(e.grid(), box);
  std::vector<double> x(n), a(n * n), ag(n), b(n);
  for (std::size_t k = 0; k < res.rows(); ++k)
    for (std::size_t c = 0; c < res.cells(); ++c) {
      const std::size_t i = res.at(k, c);
      if (!grad.mask[i]) continue;
      box.center(c, x);
      const double t = e.grid().time(k);
      std::span<const double> g(grad.values.data() + i * n, n);
      quad_form(spec, t, x, g, a, ag);
      spec.drift(t, x, b);
      for (std::size_t j = 0; j < n; ++j) {
        double se2 = 0;
        for (std::size_t l = 0; l < n; ++l) {
          const double d = a[j * n + l] * grad.std_error[i * n + l];
          se2 += d * d;
        }
        out.rhs.values[i * n + j] = b[j] + ag[j];
        out.rhs.std_error[i * n + j] = std::sqrt(se2);
      }
      out.rhs.mask[i] = 1;
      if (!out.lhs.mask[i]) continue;
      double d2 = 0, s2 = 0, m2 = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double d = out.lhs.values[i * n + j] - out.rhs.values[i * n + j];
        d2 += d * d;
        s2 += out.lhs.std_error[i * n + j] * out.lhs.std_error[i * n + j] +
              out.rhs.std_error[i * n + j] * out.rhs.std_error[i * n + j];
        m2 += out.rhs.values[i * n + j] * out.rhs.values[i * n + j];
      }
      res.values[i] = std::sqrt(d2);
      res.std_error[i] = std::sqrt(s2);
      res.samples[i] = out.lhs.samples[i];
      res.mask[i] = 1;
      scale.values[i] = std::sqrt(m2);
      scale.mask[i] = 1;
    }
  const ScalarField mass = p_cell_mass(e, &w, box);
  out.report = summarize("drift_formula", std::move(res), std::move(scale), mass, opts);
  out.report.h = h;
  out.report.steps = e.grid().steps_for(h);
  return out;
}

bool refinement_decreases(const ResidualReport& coarse, const ResidualReport& fine, double k) {
  const double noise = std::hypot(coarse.pooled_std_error, fine.pooled_std_error);
  return fine.l1 <= coarse.l1 + k * noise;
}

void write_json(const ResidualReport& r, std::ostream& os) {
  nlohmann::ordered_json j;
  j["name"] = r.name;
  j["l1"] = r.l1;
  j["l2"] = r.l2;
  j["scale_l1"] = r.scale_l1;
  j["relative_l1"] = r.relative_l1;
  j["pooled_std_error"] = r.pooled_std_error;
  j["coverage"] = r.coverage;
  j["valid_cells"] = r.valid_cells;
  j["within_z"] = r.within_z;
  j["within_fraction"] = r.within_fraction;
  j["h"] = r.h;
  j["steps"] = r.steps;
  j["tolerance"] = r.tolerance;
  j["budget"] = r.budget;
  j["pass"] = r.pass;
  os << j.dump(2) << '\n';
}

void write_csv(const ResidualReport& r, std::ostream& os) {
  const ScalarField& f = r.residual;
  os << "t";
  for (std::size_t a = 0; a < f.box.dim(); ++a) os << ",x" << a;
  os << ",residual,std_error,scale,valid\n";
  std::vector<double> c(f.box.dim());
  for (std::size_t k = 0; k < f.rows(); ++k)
    for (std::size_t cell = 0; cell < f.cells(); ++cell) {
      const std::size_t i = f.at(k, cell);
      f.box.center(cell, c);
      fmt(os, f.grid.time(k));
      for (double v : c) os << ',', fmt(os, v);
      os << ',', fmt(os, f.values[i]);
      os << ',', fmt(os, f.std_error[i]);
      os << ',', fmt(os, r.scale.values[i]);
      os << ',' << int(f.mask[i]) << '\n';
    }
}

}  // namespace fklab
