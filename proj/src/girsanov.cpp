#include "fklab/girsanov.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fklab/binning.hpp"
#include "fklab/errors.hpp"
#include "fklab/hjb.hpp"

namespace fklab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double xlogx(double x) { return x > 0 ? x * std::log(x) : 0.0; }

}  // namespace

WeightedEnsemble make_weighted(std::shared_ptr<const PathEnsemble> base, std::vector<double> lw) {
  if (!base || lw.size() != base->count()) fail(ErrorCode::InvalidArgument, "log weights do not match the ensemble");
  WeightedEnsemble w;
  w.base = std::move(base);
  w.log_weights = std::move(lw);
  const std::size_t N = w.log_weights.size();
  double m = kNegInf;
  for (std::size_t i = 0; i < N; ++i) {
    const double v = w.log_weights[i];
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
      fail(ErrorCode::NonFiniteWeight, "log weight of path " + std::to_string(i) + " is +inf or NaN");
    if (v == kNegInf) ++w.killed;
    m = std::max(m, v);
  }
  if (m == kNegInf) fail(ErrorCode::AllKilled, "every path has zero weight");
  double s = 0;
  for (double v : w.log_weights) s += std::exp(v - m);
  w.log_normalizer = m + std::log(s / static_cast<double>(N));
  w.weights.resize(N);
  double sw = 0, sw2 = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const double x = std::exp(w.log_weights[i] - w.log_normalizer);
    w.weights[i] = x;
    sw += x;
    sw2 += x * x;
  }
  w.ess = sw * sw / sw2;
  return w;
}

WeightedEnsemble fk_weights(const FKProblem& problem, std::shared_ptr<const PathEnsemble> ensemble, Execution exec) {
  const PathEnsemble& e = *ensemble;
  if (e.dim() != problem.spec.dim) fail(ErrorCode::InvalidArgument, "ensemble and problem dimensions differ");
  const std::size_t N = e.count(), M = e.grid().steps();
  std::vector<double> lw(N);
  const auto n = static_cast<std::int64_t>(N);
#pragma omp parallel if (exec == Execution::Parallel)
  {
    std::vector<double> cum(M + 1);
#pragma omp for schedule(static)
    for (std::int64_t j = 0; j < n; ++j) {
      const auto i = static_cast<std::size_t>(j);
      cumulative_integral(e.grid(), e.path(i), e.dim(), problem.potential, cum);
      const double f0 = problem.initial_weight(e.state(i, 0));
      const double gT = problem.terminal(e.state(i, M));
      lw[i] = (f0 > 0 && gT > 0) ? std::log(f0) + cum[M] + std::log(gT) : kNegInf;
      if (std::isnan(cum[M])) lw[i] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return make_weighted(std::move(ensemble), std::move(lw));
}

EntropyEstimate relative_entropy(const WeightedEnsemble& w, double ess_floor) {
  const std::size_t N = w.count();
  if (w.ess < ess_floor * static_cast<double>(N))
    fail(ErrorCode::DegenerateESS, "ess " + std::to_string(w.ess) + " below floor");
  // Raw weights u_i = w_i; H = A/B - log(B/N) with A = sum u log u, B = sum u.
  double A = 0, B = 0;
  for (double x : w.weights) {
    A += xlogx(x);
    B += x;
  }
  const double Nd = static_cast<double>(N);
  EntropyEstimate est;
  est.value = A / B - std::log(B / Nd);
  est.ess = w.ess;
  if (N > 1) {
    std::vector<double> loo(N);
    double mean = 0;
    for (std::size_t i = 0; i < N; ++i) {
      const double Bi = B - w.weights[i];
      loo[i] = Bi > 0 ? (A - xlogx(w.weights[i])) / Bi - std::log(Bi / (Nd - 1)) : 0.0;
      mean += loo[i];
    }
    mean /= Nd;
    double ss = 0;
    for (double v : loo) ss += (v - mean) * (v - mean);
    est.std_error = std::sqrt((Nd - 1) / Nd * ss);
  }
  return est;
}

EntropyDecomposition decompose_entropy(const WeightedEnsemble& w, const VectorFieldEstimate& grad,
                                       const DiffusionSpec& spec, const DecompositionOptions& opts) {
  const PathEnsemble& e = *w.base;
  const std::size_t N = e.count(), K = e.knots(), n = e.dim();
  if (grad.components != n || grad.box.dim() != n) fail(ErrorCode::InvalidArgument, "gradient dimension mismatch");
  if (!(grad.grid == e.grid())) fail(ErrorCode::InvalidArgument, "gradient grid differs from the ensemble grid");
  const SpaceBox& box = grad.box;
  const double T = e.grid().horizon();

  EntropyDecomposition d;
  // h0 by histogram ratio at t = 0.
  const std::size_t C = box.total_cells();
  std::vector<double> pw(C, 0.0), rc(C, 0.0);
  double pw_tot = 0, rc_tot = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const auto c = box.locate(e.state(i, 0));
    if (!c) continue;
    pw[*c] += w.weights[i];
    rc[*c] += 1;
    pw_tot += w.weights[i];
    rc_tot += 1;
  }
  for (std::size_t c = 0; c < C; ++c) {
    if (rc[c] == 0 || pw[c] == 0) continue;
    ++d.initial_cells;
    const double p = pw[c] / pw_tot, r = rc[c] / rc_tot;
    d.h0 += p * std::log(p / r);
  }

  std::vector<double> kin(N, 0.0), kin_raw(N, 0.0), cover(N, 0.0);
  const auto nn = static_cast<std::int64_t>(N);
#pragma omp parallel
  {
    std::vector<double> g(n), var(n), a(n * n), s(n * n);
#pragma omp for schedule(static)
    for (std::int64_t j = 0; j < nn; ++j) {
      const auto i = static_cast<std::size_t>(j);
      if (w.weights[i] == 0) continue;
      double prev = 0, prev_raw = 0, prev_ok = 0;
      for (std::size_t k = 0; k < K; ++k) {
        const auto x = e.state(i, k);
        double val = 0, raw = 0, ok = 0;
        if (grad.interpolate(k, x, g, var)) {
          spec.diffusion_matrix(e.grid().time(k), x, a, s);
          for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = 0; q < n; ++q) raw += g[p] * a[p * n + q] * g[q];
          double noise = 0;
          for (std::size_t p = 0; p < n; ++p) noise += a[p * n + p] * var[p];
          raw *= 0.5;
          val = opts.debias ? raw - 0.5 * noise : raw;
          ok = 1;
        }
        if (k > 0) {
          const double dt = e.grid().dt(k - 1);
          kin[i] += 0.5 * (prev + val) * dt;
          kin_raw[i] += 0.5 * (prev_raw + raw) * dt;
          cover[i] += 0.5 * (prev_ok + ok) * dt;
        }
        prev = val;
        prev_raw = raw;
        prev_ok = ok;
      }
    }
  }
  double sw = 0;
  for (std::size_t i = 0; i < N; ++i) {
    d.kinetic += w.weights[i] * kin[i];
    d.kinetic_raw += w.weights[i] * kin_raw[i];
    d.coverage += w.weights[i] * cover[i];
    sw += w.weights[i];
  }
  d.kinetic /= sw;
  d.kinetic_raw /= sw;
  d.coverage /= sw * T;
  if (d.coverage < opts.min_coverage)
    fail(ErrorCode::MaskCoverage, "only " + std::to_string(d.coverage) + " of the P-weight lies on valid gradient cells");
  return d;
}

EntropyDecomposition decompose_entropy(const WeightedEnsemble& w, const ScalarField& psi, const DiffusionSpec& spec,
                                       const DecompositionOptions& opts) {
  return decompose_entropy(w, gradient_grid(psi), spec, opts);
}

std::vector<LogDensityPair> girsanov_log_density(const WeightedEnsemble& w, const ScalarField& psi,
                                                 const FKProblem& problem,
                                                 const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                                                 std::size_t min_samples) {
  const PathEnsemble& e = *w.base;
  const std::size_t N = e.count(), M = e.grid().steps();
  const SpaceBox& box = psi.box;
  std::vector<LogDensityPair> out;
  for (auto [s, t] : pairs) {
    if (s > t || t > M) fail(ErrorCode::InvalidArgument, "log-density pair needs s <= t <= M");
    TableShape shape{1, box.total_cells(), 0, 1};
    std::vector<std::uint8_t> used(N, 0);
    auto tables = accumulate(N, {shape}, [&](std::vector<CellTable>& tab, std::size_t b, std::size_t end) {
      for (std::size_t i = b; i < end; ++i) {
        const auto c = box.locate(e.state(i, s));
        if (!c || !psi.valid(s, *c)) continue;
        double end_value;
        if (t == M) {
          end_value = problem.terminal(e.state(i, M));
        } else {
          const auto v = psi.interpolate(t, e.state(i, t));
          if (!v) continue;
          end_value = std::exp(v->value);
        }
        double integral = 0;
        for (std::size_t k = s; k < t; ++k)
          integral += 0.5 *
                      (problem.potential(e.grid().time(k), e.state(i, k)) +
                       problem.potential(e.grid().time(k + 1), e.state(i, k + 1))) *
                      e.grid().dt(k);
        const double y = end_value == 0 ? 0.0 : std::exp(integral) * end_value;
        tab[0].add(0, *c, 1.0, nullptr, &y);
        used[i] = 1;
      }
    });
    const std::size_t C = box.total_cells();
    std::vector<double> logc(C, std::numeric_limits<double>::quiet_NaN()), se(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
      if (tables[0].count(0, c) < static_cast<double>(std::max<std::size_t>(min_samples, 1))) continue;
      const CellFit f = tables[0].fit(0, c);
      if (!f.ok || !(f.coef[0] > 0)) continue;
      logc[c] = std::log(f.coef[0]);
      se[c] = f.std_error[0] / f.coef[0];
    }
    LogDensityPair pr;
    pr.s = s;
    pr.t = t;
    pr.residuals.assign(N, std::numeric_limits<double>::quiet_NaN());
    double sw = 0, sw_all = 0, abs_acc = 0, se_acc = 0;
    for (std::size_t i = 0; i < N; ++i) {
      sw_all += w.weights[i];
      if (!used[i]) continue;
      const std::size_t c = *box.locate(e.state(i, s));
      if (std::isnan(logc[c])) continue;
      const double r = psi.value(s, c) - logc[c];
      pr.residuals[i] = r;
      const double psi_se = psi.std_error[psi.at(s, c)];
      sw += w.weights[i];
      abs_acc += w.weights[i] * std::abs(r);
      se_acc += w.weights[i] * std::sqrt(psi_se * psi_se + se[c] * se[c]);
    }
    if (sw == 0) fail(ErrorCode::MaskCoverage, "no path retained for the log-density check");
    pr.mean_abs = abs_acc / sw;
    pr.pooled_std_error = se_acc / sw;
    pr.coverage = sw / sw_all;
    pr.pass = pr.mean_abs <= 3 * pr.pooled_std_error + 1e-10;
    out.push_back(std::move(pr));
  }
  return out;
}

ChainBound entropy_chain_bound(const WeightedEnsemble& p, const WeightedEnsemble& q, double ess_floor) {
  const std::size_t N = p.count();
  if (q.count() != N) fail(ErrorCode::InvalidArgument, "p and q weights differ in length");
  const double Nd = static_cast<double>(N);
  if (p.ess < ess_floor * Nd || q.ess < ess_floor * Nd) fail(ErrorCode::DegenerateESS, "chain bound weights degenerate");
  ChainBound cb;
  cb.lhs = relative_entropy(p, ess_floor).value;
  std::vector<double> d(N);
  bool absolutely_continuous = true;
  double hpq = 0, q2 = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const double wp = p.weights[i], wq = q.weights[i];
    double term = 0;
    if (wp > 0) {
      if (wq == 0) {
        absolutely_continuous = false;
        term = 0;
      } else {
        term = wp * std::log(wp / wq);
      }
    }
    hpq += term;
    q2 += wq * wq;
    d[i] = 2 * term + wq * wq - xlogx(wp);
  }
  cb.h_pq = absolutely_continuous ? hpq / Nd : std::numeric_limits<double>::infinity();
  cb.q_second_moment = q2 / Nd;
  cb.rhs = 2 * cb.h_pq + cb.q_second_moment;
  double mean = 0;
  for (double v : d) mean += v;
  mean /= Nd;
  double ss = 0;
  for (double v : d) ss += (v - mean) * (v - mean);
  cb.std_error = N > 1 ? std::sqrt(ss / (Nd - 1) / Nd) : 0.0;
  cb.holds = cb.lhs <= cb.rhs + 3 * cb.std_error;
  return cb;
}

BornResult born_marginal_check(const WeightedEnsemble& w, const ScalarField& f, const ScalarField& g,
                               std::size_t knot, double min_coverage) {
  if (!(f.box == g.box) || !(f.grid == g.grid)) fail(ErrorCode::InvalidArgument, "f and g must share grid and box");
  const PathEnsemble& e = *w.base;
  const SpaceBox& box = f.box;
  const std::size_t C = box.total_cells(), N = e.count();
  const std::size_t fk = f.grid.knot_of(e.grid().time(knot));
  std::vector<double> pw(C, 0.0), pw2(C, 0.0), rc(C, 0.0);
  double sw = 0, sw2 = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const double x = w.weights[i];
    sw += x;
    sw2 += x * x;
    const auto c = box.locate(e.state(i, knot));
    if (!c) continue;
    pw[*c] += x;
    pw2[*c] += x * x;
    rc[*c] += 1;
  }
  std::vector<double> q(C, 0.0), qrel(C, 0.0);
  double p_joint = 0, q_tot = 0;
  std::vector<std::uint8_t> joint(C, 0);
  for (std::size_t c = 0; c < C; ++c) {
    if (!f.valid(fk, c) || !g.valid(fk, c) || rc[c] == 0) continue;
    joint[c] = 1;
    const double fv = f.value(fk, c), gv = g.value(fk, c);
    q[c] = rc[c] * fv * gv;
    q_tot += q[c];
    p_joint += pw[c];
    const double rf = fv != 0 ? f.std_error[f.at(fk, c)] / fv : 0.0;
    const double rg = gv != 0 ? g.std_error[g.at(fk, c)] / gv : 0.0;
    qrel[c] = rf * rf + rg * rg + 1.0 / rc[c];
  }
  BornResult res;
  res.coverage = p_joint / sw;
  if (res.coverage < min_coverage || q_tot <= 0)
    fail(ErrorCode::MaskCoverage, "Born check covers only " + std::to_string(res.coverage) + " of the P-weight");
  const double sqrt_2_pi = std::sqrt(2.0 / M_PI);
  for (std::size_t c = 0; c < C; ++c) {
    if (!joint[c]) continue;
    ++res.cells;
    const double P = pw[c] / p_joint, Q = q[c] / q_tot;
    res.tv += 0.5 * std::abs(P - Q);
    const double varP = (pw2[c] * (1 - 2 * P) + P * P * sw2) / (p_joint * p_joint);
    const double varQ = Q * Q * qrel[c];
    res.noise_tv += 0.5 * sqrt_2_pi * std::sqrt(std::max(0.0, varP) + varQ);
  }
  return res;
}

}  // namespace fklab
