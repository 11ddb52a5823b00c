#include "fklab/feynman_kac.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fklab/binning.hpp"
#include "fklab/errors.hpp"

namespace fklab {

namespace {

void check_ensemble(const FKProblem& problem, const PathEnsemble& e, const SpaceBox& box) {
  if (e.dim() != problem.spec.dim || box.dim() != e.dim())
    fail(ErrorCode::InvalidArgument, "ensemble, problem and box dimensions differ");
  if (e.direction() != Direction::Forward)
    fail(ErrorCode::InvalidArgument, "Feynman-Kac fields need a forward ensemble");
  box.validate();
}

bool bad_functional(double v) { return std::isnan(v) || v == std::numeric_limits<double>::infinity(); }

// Copies a single-response table into a field; cells below min_samples stay masked.
ScalarField to_field(const CellTable& t, const TimeGrid& grid, const SpaceBox& box, std::size_t min_samples) {
  ScalarField f(grid, box);
  for (std::size_t r = 0; r < f.rows(); ++r)
    for (std::size_t c = 0; c < f.cells(); ++c) {
      const std::size_t i = f.at(r, c);
      f.samples[i] = static_cast<std::uint64_t>(t.count(r, c));
      if (t.count(r, c) < static_cast<double>(std::max<std::size_t>(min_samples, 1))) continue;
      const CellFit fit = t.fit(r, c);
      if (!fit.ok || !std::isfinite(fit.coef[0])) continue;
      f.values[i] = fit.coef[0];
      f.std_error[i] = fit.std_error[0];
      f.mask[i] = 1;
    }
  if (f.valid_count() == 0) fail(ErrorCode::EmptyField, "no cell reached min_samples");
  return f;
}

template <class Functional>
ScalarField solve_field(const FKProblem& problem, const PathEnsemble& e, const SpaceBox& box,
                        const FieldOptions& opts, Functional&& functional) {
  check_ensemble(problem, e, box);
  const std::size_t K = e.knots();
  TableShape shape{K, box.total_cells(), 0, 1};
  auto tables = accumulate(
      e.count(), {shape},
      [&](std::vector<CellTable>& t, std::size_t begin, std::size_t end) {
        std::vector<double> vals(K);
        for (std::size_t i = begin; i < end; ++i) {
          functional(i, vals);
          for (std::size_t k = 0; k < K; ++k) {
            if (bad_functional(vals[k]))
              fail(ErrorCode::NonFiniteWeight,
                   "functional of path " + std::to_string(i) + " at knot " + std::to_string(k) + " is +inf or NaN");
            const auto cell = box.locate(e.state(i, k));
            if (cell) t[0].add(k, *cell, 1.0, nullptr, &vals[k]);
          }
        }
      },
      opts.execution);
  return to_field(tables[0], e.grid(), box, opts.min_samples);
}

}  // namespace

ScalarField fk_solve_backward(const FKProblem& problem, const PathEnsemble& e, const SpaceBox& box,
                              const FieldOptions& opts) {
  const std::size_t M = e.grid().steps(), n = e.dim();
  return solve_field(problem, e, box, opts, [&](std::size_t i, std::vector<double>& vals) {
    thread_local std::vector<double> tail;
    tail.resize(M + 1);
    tail_integral(e.grid(), e.path(i), n, problem.potential, tail);
    const double gT = problem.terminal(e.state(i, M));
    for (std::size_t k = 0; k <= M; ++k) vals[k] = gT == 0 ? 0.0 : std::exp(tail[k]) * gT;
  });
}

ScalarField fk_solve_forward(const FKProblem& problem, const PathEnsemble& e, const SpaceBox& box,
                             const FieldOptions& opts) {
  const std::size_t M = e.grid().steps(), n = e.dim();
  return solve_field(problem, e, box, opts, [&](std::size_t i, std::vector<double>& vals) {
    thread_local std::vector<double> cum;
    cum.resize(M + 1);
    cumulative_integral(e.grid(), e.path(i), n, problem.potential, cum);
    const double f0 = problem.initial_weight(e.state(i, 0));
    for (std::size_t k = 0; k <= M; ++k) vals[k] = f0 == 0 ? 0.0 : f0 * std::exp(cum[k]);
  });
}

SemigroupResult fk_semigroup_apply(const FKProblem& problem, const PathEnsemble& e, std::size_t r,
                                   std::size_t t, const FieldSlice& u, const FieldOptions& opts) {
  check_ensemble(problem, e, u.box);
  if (r > t || t >= e.knots()) fail(ErrorCode::InvalidArgument, "semigroup needs r <= t <= M");
  const SpaceBox& box = u.box;
  TableShape shape{1, box.total_cells(), 0, 1};
  std::vector<std::uint8_t> dropped(e.count(), 0);
  auto tables = accumulate(
      e.count(), {shape},
      [&](std::vector<CellTable>& tab, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
          const auto cell = box.locate(e.state(i, r));
          if (!cell) continue;
          const auto ut = u.interpolate(e.state(i, t));
          if (!ut) {
            dropped[i] = 1;
            continue;
          }
          double integral = 0;
          for (std::size_t k = r; k < t; ++k)
            integral += 0.5 * (problem.potential(e.grid().time(k), e.state(i, k)) +
                               problem.potential(e.grid().time(k + 1), e.state(i, k + 1))) *
                        e.grid().dt(k);
          const double v = ut->value == 0 ? 0.0 : std::exp(integral) * ut->value;
          if (bad_functional(v)) fail(ErrorCode::NonFiniteWeight, "semigroup functional is +inf or NaN");
          tab[0].add(0, *cell, 1.0, nullptr, &v);
        }
      },
      opts.execution);
  SemigroupResult res;
  res.dropped = static_cast<std::size_t>(std::count(dropped.begin(), dropped.end(), 1));
  FieldSlice& s = res.slice;
  s.time = e.grid().time(r);
  s.knot = r;
  s.box = box;
  const std::size_t C = box.total_cells();
  s.values.assign(C, 0.0);
  s.std_error.assign(C, 0.0);
  s.samples.assign(C, 0);
  s.mask.assign(C, 0);
  for (std::size_t c = 0; c < C; ++c) {
    s.samples[c] = static_cast<std::uint64_t>(tables[0].count(0, c));
    if (tables[0].count(0, c) < static_cast<double>(std::max<std::size_t>(opts.min_samples, 1))) continue;
    const CellFit fit = tables[0].fit(0, c);
    if (!fit.ok) continue;
    s.values[c] = fit.coef[0];
    s.std_error[c] = fit.std_error[0];
    s.mask[c] = 1;
  }
  if (s.valid_count() == 0) fail(ErrorCode::EmptyField, "semigroup slice has no valid cell");
  return res;
}

LogTransformResult log_transform(const ScalarField& g, double floor) {
  LogTransformResult res;
  res.floor = floor > 0 ? floor : 1e-3 * g.max_valid();
  res.psi = g;
  ScalarField& psi = res.psi;
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    if (!g.mask[i]) continue;
    if (g.values[i] < res.floor || !(g.values[i] > 0)) {
      psi.mask[i] = 0;
      psi.values[i] = 0;
      psi.std_error[i] = 0;
      ++res.below_floor;
      continue;
    }
    psi.values[i] = std::log(g.values[i]);
    psi.std_error[i] = g.std_error[i] / g.values[i];
  }
  return res;
}

SemigroupCheck compare_slices(const FieldSlice& a, const FieldSlice& b, double k) {
  SemigroupCheck c;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    if (!a.mask[i] || !b.mask[i]) continue;
    ++c.joint_cells;
    const double pooled = std::sqrt(a.std_error[i] * a.std_error[i] + b.std_error[i] * b.std_error[i]);
    // Round-off floor: deterministic slices carry zero standard error.
    const double floor = 1e-12 * std::max(std::abs(a.values[i]), std::abs(b.values[i]));
    if (std::abs(a.values[i] - b.values[i]) <= k * pooled + floor) ++c.within;
  }
  c.fraction = c.joint_cells ? static_cast<double>(c.within) / static_cast<double>(c.joint_cells) : 0.0;
  return c;
}

}  // namespace fklab
