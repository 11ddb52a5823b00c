#include "fklab/stochastic_calculus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "fklab/binning.hpp"
#include "fklab/errors.hpp"

namespace fklab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

using KnotFn = std::function<double(std::size_t, std::span<const double>)>;

enum class Kind { Generator, Carre, Velocity };

std::size_t snap_steps(const TimeGrid& grid, double h) {
  if (!grid.is_uniform()) fail(ErrorCode::InvalidGrid, "box-kernel estimators need a uniform grid");
  const double dt = grid.horizon() / static_cast<double>(grid.steps());
  if (!(h > 0) || h < dt * (1 - 1e-9)) fail(ErrorCode::BandwidthTooSmall, "bandwidth below one grid step");
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(h / dt)));
}

struct Request {
  Kind kind = Kind::Generator;
  KnotFn u, v;
  const DiffusionSpec* compensator = nullptr;  // drift subtracted inside windows
  bool regress = false;                         // martingale-adjusted intercept
};

// Fills the per-path adapted log weights lw[k] on active knots; -inf where psi is undefined.
void adapted_log_weights(const PathEnsemble& e, std::size_t i, const Weighting& wt, const std::vector<char>& active,
                         std::vector<double>& cum, std::vector<double>& lw) {
  const FKProblem& p = *wt.problem;
  const std::size_t K = e.knots();
  cumulative_integral(e.grid(), e.path(i), e.dim(), p.potential, cum);
  const double f0 = p.initial_weight(e.state(i, 0));
  const double lf0 = f0 > 0 ? std::log(f0) : kNegInf;
  for (std::size_t k = 0; k < K; ++k) {
    if (!active[k]) {
      lw[k] = kNegInf;
      continue;
    }
    const double ps = wt.psi(e.grid().time(k), e.state(i, k));
    lw[k] = std::isfinite(ps) ? lf0 + cum[k] + ps : kNegInf;
  }
}

std::vector<double> adapted_shift(const PathEnsemble& e, const Weighting& wt, const std::vector<char>& active) {
  const std::size_t K = e.knots();
  std::vector<double> shift(K, kNegInf);
  const auto n = static_cast<std::int64_t>(e.count());
#pragma omp parallel
  {
    std::vector<double> local(K, kNegInf), cum(K), lw(K);
#pragma omp for schedule(static)
    for (std::int64_t j = 0; j < n; ++j) {
      adapted_log_weights(e, static_cast<std::size_t>(j), wt, active, cum, lw);
      for (std::size_t k = 0; k < K; ++k) local[k] = std::max(local[k], lw[k]);
    }
#pragma omp critical
    for (std::size_t k = 0; k < K; ++k) shift[k] = std::max(shift[k], local[k]);
  }
  for (double& s : shift)
    if (s == kNegInf) s = 0;
  return shift;
}

std::vector<CellTable> run_core(const PathEnsemble& e, const SpaceBox& box, const std::vector<std::size_t>& levels,
                                const Request& req, const Weighting& wt, const DerivativeOptions& opts) {
  const std::size_t n = e.dim(), K = e.knots(), M = K - 1;
  if (box.dim() != n) fail(ErrorCode::InvalidArgument, "box and ensemble dimensions differ");
  if (wt.mode == WeightMode::Terminal && (!wt.terminal || wt.terminal->count() != e.count()))
    fail(ErrorCode::InvalidArgument, "terminal weights do not match the ensemble");
  if (wt.mode == WeightMode::Adapted && (!wt.problem || !wt.psi))
    fail(ErrorCode::InvalidArgument, "adapted weighting needs a problem and psi");
  // Start knots to estimate, and the knots whose values those windows read.
  const bool all = opts.knots.empty();
  std::vector<char> active(K, all ? 1 : 0), needed(K, all ? 1 : 0);
  for (std::size_t k : opts.knots) {
    if (k > M) fail(ErrorCode::InvalidArgument, "requested knot beyond the grid");
    if (k == M) continue;
    active[k] = needed[k] = 1;
    for (std::size_t L : levels) needed[std::min(k + L, M)] = 1;
  }
  std::vector<double> shift;
  if (wt.mode == WeightMode::Adapted) shift = adapted_shift(e, wt, active);

  const std::size_t q = req.kind == Kind::Velocity ? n : 1;
  const std::size_t p = req.regress ? n : 0;
  std::vector<TableShape> shapes(levels.size(), TableShape{K, box.total_cells(), p, q});
  const bool need_comp = req.compensator != nullptr;

  return accumulate(
      e.count(), shapes,
      [&](std::vector<CellTable>& tabs, std::size_t begin, std::size_t end) {
        std::vector<double> uu(K), vv(K), comp(need_comp ? K * n : 0), cum(K), lw(K), b(n), z(n), y(q);
        for (std::size_t i = begin; i < end; ++i) {
          double wpath = 1;
          if (wt.mode == WeightMode::Terminal) {
            wpath = wt.terminal->weights[i];
            if (wpath == 0) continue;
          }
          if (wt.mode == WeightMode::Adapted) adapted_log_weights(e, i, wt, active, cum, lw);
          if (req.kind != Kind::Velocity)
            for (std::size_t k = 0; k < K; ++k)
              if (needed[k]) uu[k] = req.u(k, e.state(i, k));
          if (req.kind == Kind::Carre)
            for (std::size_t k = 0; k < K; ++k)
              if (needed[k]) vv[k] = req.v(k, e.state(i, k));
          if (need_comp) {
            std::fill(comp.begin(), comp.begin() + static_cast<std::ptrdiff_t>(n), 0.0);
            for (std::size_t k = 0; k < M; ++k) {
              req.compensator->drift(e.grid().time(k), e.state(i, k), b);
              for (std::size_t a = 0; a < n; ++a) comp[(k + 1) * n + a] = comp[k * n + a] + b[a] * e.grid().dt(k);
            }
          }
          for (std::size_t k = 0; k < M; ++k) {
            if (!active[k]) continue;
            const auto cell = box.locate(e.state(i, k));
            if (!cell) continue;
            double w = wpath;
            if (wt.mode == WeightMode::Adapted) {
              if (lw[k] == kNegInf) continue;
              w = std::exp(lw[k] - shift[k]);
              if (w == 0) continue;
            }
            for (std::size_t L = 0; L < levels.size(); ++L) {
              const std::size_t kk = std::min(k + levels[L], M);
              const double hh = e.grid().time(kk) - e.grid().time(k);
              const auto x0 = e.state(i, k), x1 = e.state(i, kk);
              if (req.regress || req.kind == Kind::Velocity)
                for (std::size_t a = 0; a < n; ++a)
                  z[a] = x1[a] - x0[a] - (need_comp ? comp[kk * n + a] - comp[k * n + a] : 0.0);
              switch (req.kind) {
                case Kind::Generator: y[0] = (uu[kk] - uu[k]) / hh; break;
                case Kind::Carre: y[0] = (uu[kk] - uu[k]) * (vv[kk] - vv[k]) / hh; break;
                case Kind::Velocity:
                  for (std::size_t a = 0; a < n; ++a) y[a] = z[a] / hh;
                  break;
              }
              // NaN marks points where u is undefined (e.g. off the valid region of a field).
              if (std::isnan(y[0])) continue;
              if (!std::isfinite(y[0])) fail(ErrorCode::NonFinite, "non-finite increment on path " + std::to_string(i));
              tabs[L].add(k, *cell, w, req.regress ? z.data() : nullptr, y.data());
            }
          }
        }
      },
      opts.execution);
}

bool usable(const CellFit& f, double count, const DerivativeOptions& opts) {
  const double need = static_cast<double>(std::max<std::size_t>(opts.min_samples, 1));
  return count >= need && f.ok && f.ess >= std::min(need, 10.0);
}

ScalarField scalar_from(const CellTable& t, const TimeGrid& grid, const SpaceBox& box, const DerivativeOptions& opts) {
  ScalarField f(grid, box);
  for (std::size_t r = 0; r + 1 < f.rows(); ++r)
    for (std::size_t c = 0; c < f.cells(); ++c) {
      const std::size_t i = f.at(r, c);
      const double cnt = t.count(r, c);
      f.samples[i] = static_cast<std::uint64_t>(cnt);
      if (cnt < 1) continue;
      const CellFit fit = t.fit(r, c);
      if (!usable(fit, cnt, opts) || !std::isfinite(fit.coef[0])) continue;
      f.values[i] = fit.coef[0];
      f.std_error[i] = fit.std_error[0];
      f.mask[i] = 1;
    }
  return f;
}

DerivativeEstimate assemble(const std::vector<CellTable>& tabs, const std::vector<std::size_t>& levels,
                            const PathEnsemble& e, const SpaceBox& box, double h, const DerivativeOptions& opts) {
  DerivativeEstimate d;
  d.h = h;
  d.steps = levels[0];
  d.raw = scalar_from(tabs[0], e.grid(), box, opts);
  if (levels.size() > 1) {
    d.half = scalar_from(tabs[1], e.grid(), box, opts);
    d.has_half = true;
  }
  if (levels.size() > 2) {
    d.quarter = scalar_from(tabs[2], e.grid(), box, opts);
    d.has_quarter = true;
  }
  d.extrapolated = d.raw;
  if (d.has_half) {
    ScalarField& x = d.extrapolated;
    for (std::size_t i = 0; i < x.values.size(); ++i) {
      x.mask[i] = d.raw.mask[i] && d.half.mask[i];
      if (!x.mask[i]) {
        x.values[i] = 0;
        x.std_error[i] = 0;
        continue;
      }
      x.values[i] = 2 * d.half.values[i] - d.raw.values[i];
      x.std_error[i] = std::sqrt(4 * d.half.std_error[i] * d.half.std_error[i] + d.raw.std_error[i] * d.raw.std_error[i]);
    }
  }
  if (d.raw.valid_count() == 0) fail(ErrorCode::MaskCoverage, "no cell reached min_samples");
  return d;
}

std::vector<std::size_t> ladder(std::size_t s) {
  std::vector<std::size_t> l{s};
  if (s % 2 == 0) l.push_back(s / 2);
  if (s % 4 == 0) l.push_back(s / 4);
  return l;
}

Request generator_request(const ScalarFn& u, const TimeGrid& grid, const DerivativeOptions& opts,
                          const Weighting& wt) {
  Request r;
  r.kind = Kind::Generator;
  r.u = [&u, &grid](std::size_t k, std::span<const double> x) { return u(grid.time(k), x); };
  if (opts.estimator == DerivativeEstimator::MartingaleAdjusted) {
    if (!opts.spec) fail(ErrorCode::InvalidArgument, "martingale-adjusted estimator needs the diffusion spec");
    if (wt.mode == WeightMode::Terminal)
      fail(ErrorCode::InvalidArgument, "martingale adjustment is biased under terminal P-weights");
    r.compensator = opts.spec;
    r.regress = true;
  }
  return r;
}

ScalarField flip_rows(const ScalarField& f) {
  ScalarField out = f;
  const std::size_t R = f.rows(), C = f.cells();
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t a = out.at(r, c), b = f.at(R - 1 - r, c);
      out.values[a] = f.values[b];
      out.std_error[a] = f.std_error[b];
      out.samples[a] = f.samples[b];
      out.mask[a] = f.mask[b];
    }
  return out;
}

}  // namespace

std::vector<double> convolve_time(const TimeGrid& grid, std::span<const double> v, const KernelSpec& kernel,
                                  BoundaryMode mode) {
  if (v.size() != grid.knots()) fail(ErrorCode::InvalidArgument, "series length differs from the grid");
  const std::size_t s = snap_steps(grid, kernel.h), M = grid.steps();
  std::vector<double> out(v.size());
  const double sd = static_cast<double>(s);
  for (std::size_t k = 0; k <= M; ++k) {
    std::size_t a, b;
    if (kernel.shape == KernelShape::LeftBox) {
      a = k;
      b = std::min(k + s, M);
    } else {
      a = k >= s ? k - s : 0;
      b = k;
    }
    const double len = static_cast<double>(b - a);
    // Trapezoid weights relative to v_k keep constant series exact.
    double acc = 0;
    for (std::size_t j = a; j < b; ++j) acc += 0.5 * ((v[j] - v[k]) + (v[j + 1] - v[k]));
    if (mode == BoundaryMode::Renormalize) {
      out[k] = len > 0 ? v[k] + acc / len : v[k];
    } else {
      out[k] = (len * v[k] + acc) / sd;
    }
  }
  return out;
}

double trapezoid_norm(const TimeGrid& grid, std::span<const double> v, double p) {
  double acc = 0;
  const std::size_t M = grid.steps();
  for (std::size_t k = 0; k <= M; ++k) {
    double w = 0;
    if (k > 0) w += 0.5 * grid.dt(k - 1);
    if (k < M) w += 0.5 * grid.dt(k);
    acc += w * std::pow(std::abs(v[k]), p);
  }
  return std::pow(acc, 1.0 / p);
}

DerivativeEstimate forward_derivative(const PathEnsemble& e, const ScalarFn& u, double h, const SpaceBox& box,
                                      const Weighting& wt, const DerivativeOptions& opts) {
  const auto levels = ladder(e.grid().steps_for(h));
  snap_steps(e.grid(), h);
  const Request req = generator_request(u, e.grid(), opts, wt);
  return assemble(run_core(e, box, levels, req, wt, opts), levels, e, box, h, opts);
}

DerivativeEstimate backward_derivative(const PathEnsemble& e, const ScalarFn& u, double h, const SpaceBox& box,
                                       const Weighting& wt, const DerivativeOptions& opts) {
  if (wt.mode == WeightMode::Adapted)
    fail(ErrorCode::InvalidArgument, "adapted weights are not defined for the reversed ensemble");
  if (opts.estimator == DerivativeEstimator::MartingaleAdjusted)
    fail(ErrorCode::InvalidArgument, "the reversed drift is unknown, use the plain estimator");
  const auto levels = ladder(e.grid().steps_for(h));
  snap_steps(e.grid(), h);
  const PathEnsemble rev = reverse(e);
  const TimeGrid& grid = e.grid();
  const std::size_t M = grid.steps();
  DerivativeOptions ro = opts;
  for (std::size_t& k : ro.knots) {
    if (k > M) fail(ErrorCode::InvalidArgument, "requested knot beyond the grid");
    k = M - k;
  }
  Request req;
  req.kind = Kind::Generator;
  // u*(t*, x) = u(T - t*, x), with T - t* read off the knot table to stay exact.
  req.u = [&u, &grid, M](std::size_t k, std::span<const double> x) { return u(grid.time(M - k), x); };
  DerivativeEstimate d = assemble(run_core(rev, box, levels, req, wt, ro), levels, rev, box, h, opts);
  d.raw = flip_rows(d.raw);
  if (d.has_half) d.half = flip_rows(d.half);
  if (d.has_quarter) d.quarter = flip_rows(d.quarter);
  d.extrapolated = flip_rows(d.extrapolated);
  return d;
}

DerivativeEstimate carre_du_champ(const PathEnsemble& e, const ScalarFn& u, const ScalarFn& v, double h,
                                  const SpaceBox& box, const Weighting& wt, const DerivativeOptions& opts) {
  const auto levels = ladder(e.grid().steps_for(h));
  snap_steps(e.grid(), h);
  const TimeGrid& grid = e.grid();
  Request req;
  req.kind = Kind::Carre;
  req.u = [&u, &grid](std::size_t k, std::span<const double> x) { return u(grid.time(k), x); };
  req.v = [&v, &grid](std::size_t k, std::span<const double> x) { return v(grid.time(k), x); };
  return assemble(run_core(e, box, levels, req, wt, opts), levels, e, box, h, opts);
}

VectorFieldEstimate nelson_velocity(const PathEnsemble& e, double h, const SpaceBox& box, const Weighting& wt,
                                    const DiffusionSpec* relative_to, const DerivativeOptions& opts) {
  const std::size_t s = e.grid().steps_for(h);
  snap_steps(e.grid(), h);
  Request req;
  req.kind = Kind::Velocity;
  req.compensator = relative_to;
  const auto tabs = run_core(e, box, {s}, req, wt, opts);
  const std::size_t n = e.dim();
  VectorFieldEstimate out(e.grid(), box, n);
  for (std::size_t r = 0; r + 1 < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cells(); ++c) {
      const std::size_t i = out.at(r, c);
      const double cnt = tabs[0].count(r, c);
      out.samples[i] = static_cast<std::uint64_t>(cnt);
      if (cnt < 1) continue;
      const CellFit fit = tabs[0].fit(r, c);
      if (!usable(fit, cnt, opts)) continue;
      for (std::size_t a = 0; a < n; ++a) {
        out.values[i * n + a] = fit.coef[a];
        out.std_error[i * n + a] = fit.std_error[a];
      }
      out.mask[i] = 1;
    }
  if (out.valid_count() == 0) fail(ErrorCode::MaskCoverage, "no cell reached min_samples");
  return out;
}

TruncatedEnsemble exit_time_truncate(const PathEnsemble& e, double radius) {
  if (!(radius > 0)) fail(ErrorCode::InvalidArgument, "exit radius must be positive");
  TruncatedEnsemble t;
  t.ensemble = e;
  t.exit_knot.assign(e.count(), TruncatedEnsemble::never);
  if (std::isinf(radius)) return t;
  const std::size_t K = e.knots(), n = e.dim();
  const double r2 = radius * radius;
  for (std::size_t i = 0; i < e.count(); ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      const auto x = e.state(i, k);
      double q = 0;
      for (double v : x) q += v * v;
      if (q >= r2) {
        t.exit_knot[i] = k;
        ++t.exited;
        for (std::size_t j = k + 1; j < K; ++j) {
          auto y = t.ensemble.state(i, j);
          std::copy(x.begin(), x.end(), y.begin());
        }
        break;
      }
    }
  }
  (void)n;
  t.exit_fraction = static_cast<double>(t.exited) / static_cast<double>(e.count());
  return t;
}

}  // namespace fklab
