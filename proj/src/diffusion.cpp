#include "fklab/diffusion.hpp"

#include <cstdio>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "fklab/errors.hpp"

namespace fklab {

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) fail(ErrorCode::IoError, "truncated ensemble stream");
  return v;
}

}  // namespace

InitialLaw InitialLaw::point(std::vector<double> x) {
  InitialLaw law;
  law.name = "point";
  law.sample = [x](Rng&, std::span<double> out) { std::copy(x.begin(), x.end(), out.begin()); };
  return law;
}

InitialLaw InitialLaw::gaussian(std::vector<double> mean, double variance) {
  if (!(variance > 0)) fail(ErrorCode::InvalidArgument, "gaussian law needs variance > 0");
  InitialLaw law;
  law.name = "gaussian";
  const double sd = std::sqrt(variance);
  law.sample = [mean, sd](Rng& rng, std::span<double> out) {
    std::normal_distribution<double> n01;
    for (std::size_t i = 0; i < mean.size(); ++i) out[i] = mean[i] + sd * n01(rng);
  };
  law.density = [mean, variance](std::span<const double> x) {
    double q = 0;
    for (std::size_t i = 0; i < mean.size(); ++i) q += (x[i] - mean[i]) * (x[i] - mean[i]);
    const double d = static_cast<double>(mean.size());
    return std::exp(-0.5 * q / variance) / std::pow(2 * M_PI * variance, 0.5 * d);
  };
  return law;
}

InitialLaw InitialLaw::uniform_box(std::vector<double> lo, std::vector<double> hi) {
  double vol = 1;
  for (std::size_t i = 0; i < lo.size(); ++i) {
    if (!(hi[i] > lo[i])) fail(ErrorCode::InvalidArgument, "uniform law needs hi > lo");
    vol *= hi[i] - lo[i];
  }
  InitialLaw law;
  law.name = "uniform";
  law.sample = [lo, hi](Rng& rng, std::span<double> out) {
    std::uniform_real_distribution<double> u01;
    for (std::size_t i = 0; i < lo.size(); ++i) out[i] = lo[i] + (hi[i] - lo[i]) * u01(rng);
  };
  law.density = [lo, hi, vol](std::span<const double> x) {
    for (std::size_t i = 0; i < lo.size(); ++i)
      if (x[i] < lo[i] || x[i] > hi[i]) return 0.0;
    return 1.0 / vol;
  };
  return law;
}

InitialLaw InitialLaw::student_t(std::size_t dim, double dof, double scale) {
  InitialLaw law;
  law.name = "student_t";
  law.sample = [dim, dof, scale](Rng& rng, std::span<double> out) {
    std::student_t_distribution<double> t(dof);
    for (std::size_t i = 0; i < dim; ++i) out[i] = scale * t(rng);
  };
  law.density = [dim, dof, scale](std::span<const double> x) {
    const double c = std::exp(std::lgamma(0.5 * (dof + 1)) - std::lgamma(0.5 * dof)) /
                     (std::sqrt(dof * M_PI) * scale);
    double p = 1;
    for (std::size_t i = 0; i < dim; ++i) {
      const double z = x[i] / scale;
      p *= c * std::pow(1 + z * z / dof, -0.5 * (dof + 1));
    }
    return p;
  };
  return law;
}

void DiffusionSpec::diffusion_matrix(double t, std::span<const double> x, std::span<double> a,
                                     std::span<double> s) const {
  const std::size_t n = dim;
  sigma(t, x, s);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < n; ++k) acc += s[i * n + k] * s[j * n + k];
      a[i * n + j] = acc;
      a[j * n + i] = acc;
    }
}

void DiffusionSpec::diffusion_matrix(double t, std::span<const double> x, std::span<double> a) const {
  std::vector<double> s(dim * dim);
  diffusion_matrix(t, x, a, s);
}

void DiffusionSpec::check_point(double t, std::span<const double> x) const {
  if (!drift || !sigma) fail(ErrorCode::InvalidArgument, "diffusion spec is missing drift or sigma");
  std::vector<double> b(dim), a(dim * dim);
  drift(t, x, b);
  diffusion_matrix(t, x, a);
  if (!all_finite(b) || !all_finite(a))
    fail(ErrorCode::InvalidArgument, "drift or sigma not finite at t=" + std::to_string(t));
  if (invertible) {
    Eigen::Map<const Eigen::MatrixXd> am(a.data(), dim, dim);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(am, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < lambda_min)
      fail(ErrorCode::InvalidArgument, "diffusion matrix eigenvalue below lambda_min");
  }
}

DiffusionSpec DiffusionSpec::brownian(std::size_t dim, double horizon, InitialLaw law, double eps) {
  DiffusionSpec s;
  s.dim = dim;
  s.horizon = horizon;
  s.drift = [](double, std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
  };
  const double sd = std::sqrt(eps);
  s.sigma = [dim, sd](double, std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < dim; ++i) out[i * dim + i] = sd;
  };
  s.initial_law = std::move(law);
  s.invertible = eps > 0;
  s.lambda_min = eps;
  return s;
}

DiffusionSpec DiffusionSpec::ou(std::size_t dim, double horizon, double k, double eps, InitialLaw law) {
  DiffusionSpec s = brownian(dim, horizon, std::move(law), eps);
  s.drift = [k](double, std::span<const double> x, std::span<double> out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = -k * x[i];
  };
  return s;
}

TimeGrid::TimeGrid(std::vector<double> times) : times_(std::move(times)) {
  if (times_.size() < 2) fail(ErrorCode::InvalidGrid, "time grid needs at least one step");
  if (times_.front() != 0.0) fail(ErrorCode::InvalidGrid, "time grid must start at 0");
  for (std::size_t k = 0; k + 1 < times_.size(); ++k)
    if (!(times_[k + 1] > times_[k]) || !std::isfinite(times_[k + 1]))
      fail(ErrorCode::InvalidGrid, "time grid must be strictly increasing at knot " + std::to_string(k));
}

TimeGrid TimeGrid::uniform(double horizon, std::size_t steps) {
  if (steps == 0 || !(horizon > 0) || !std::isfinite(horizon))
    fail(ErrorCode::InvalidGrid, "uniform grid needs steps >= 1 and horizon > 0");
  std::vector<double> t(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k)
    t[k] = horizon * static_cast<double>(k) / static_cast<double>(steps);
  t.back() = horizon;
  return TimeGrid(std::move(t));
}

bool TimeGrid::is_uniform(double rel_tol) const {
  const double h = horizon() / static_cast<double>(steps());
  for (std::size_t k = 0; k < steps(); ++k)
    if (std::abs(dt(k) - h) > rel_tol * h) return false;
  return true;
}

std::size_t TimeGrid::knot_of(double t, double rel_tol) const {
  auto it = std::lower_bound(times_.begin(), times_.end(), t);
  std::size_t best = 0;
  double err = std::numeric_limits<double>::infinity();
  for (auto c : {it, it == times_.begin() ? it : it - 1}) {
    if (c == times_.end()) continue;
    const double e = std::abs(*c - t);
    if (e < err) {
      err = e;
      best = static_cast<std::size_t>(c - times_.begin());
    }
  }
  const double step = horizon() / static_cast<double>(steps());
  if (err > rel_tol * step) fail(ErrorCode::InvalidArgument, "time " + std::to_string(t) + " is not a grid knot");
  return best;
}

std::size_t TimeGrid::steps_for(double h) const {
  const double step = horizon() / static_cast<double>(steps());
  if (!(h > 0) || h < step * (1 - 1e-9))
    fail(ErrorCode::BandwidthTooSmall, "bandwidth " + std::to_string(h) + " is below one step " + std::to_string(step));
  const double r = h / step;
  const double s = std::round(r);
  if (std::abs(r - s) > 1e-6 * std::max(1.0, r))
    fail(ErrorCode::InvalidArgument, "bandwidth must be a whole number of steps");
  return static_cast<std::size_t>(s);
}

PathEnsemble::PathEnsemble(TimeGrid grid, std::size_t dim, std::size_t count)
    : grid_(std::move(grid)), dim_(dim), count_(count), data_(count * grid_.knots() * dim, 0.0), seeds_(count, 0) {}

namespace {

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

// The master seed is mixed before stepping, so masters that differ by a multiple of the
// increment (for example seed ^ 0x9e37...) do not share shifted path streams.
std::uint64_t path_seed(std::uint64_t master_seed, std::uint64_t index) {
  return mix64(mix64(master_seed) + 0x9E3779B97F4A7C15ULL * (index + 1));
}

std::size_t euler_path(const DiffusionSpec& spec, const TimeGrid& grid, std::span<const double> x0,
                       std::span<const double> normals, std::span<double> out) {
  const std::size_t n = spec.dim, M = grid.steps();
  std::vector<double> b(n), s(n * n);
  std::copy(x0.begin(), x0.end(), out.begin());
  if (!all_finite(x0)) return 0;
  for (std::size_t k = 0; k < M; ++k) {
    const double t = grid.time(k), dt = grid.dt(k), sq = std::sqrt(dt);
    std::span<const double> x = out.subspan(k * n, n);
    std::span<double> y = out.subspan((k + 1) * n, n);
    spec.drift(t, x, b);
    spec.sigma(t, x, s);
    for (std::size_t i = 0; i < n; ++i) {
      double noise = 0;
      for (std::size_t j = 0; j < n; ++j) noise += s[i * n + j] * normals[k * n + j];
      y[i] = x[i] + b[i] * dt + noise * sq;
    }
    if (!all_finite(y)) return k + 1;
  }
  return M + 1;
}

namespace {

std::size_t simulate_one(const DiffusionSpec& spec, const TimeGrid& grid, std::uint64_t seed,
                         std::span<double> out, std::vector<double>& x0, std::vector<double>& z) {
  Rng rng(seed);
  spec.initial_law.sample(rng, x0);
  std::normal_distribution<double> n01;
  for (double& v : z) v = n01(rng);
  return euler_path(spec, grid, x0, z, out);
}

}  // namespace

void regenerate_path(const DiffusionSpec& spec, const TimeGrid& grid, std::uint64_t seed, std::span<double> out) {
  std::vector<double> x0(spec.dim), z(grid.steps() * spec.dim);
  simulate_one(spec, grid, seed, out, x0, z);
}

PathEnsemble simulate(const DiffusionSpec& spec, const TimeGrid& grid, std::size_t count,
                      std::uint64_t master_seed, Execution exec) {
  if (count == 0) fail(ErrorCode::InvalidArgument, "simulate needs count >= 1");
  if (!spec.drift || !spec.sigma || !spec.initial_law.sample)
    fail(ErrorCode::InvalidArgument, "diffusion spec is incomplete");
  if (std::abs(grid.horizon() - spec.horizon) > 1e-12 * spec.horizon)
    fail(ErrorCode::InvalidGrid, "grid horizon differs from the spec horizon");
  PathEnsemble e(grid, spec.dim, count);
  const std::size_t M = grid.steps(), none = M + 1;
  std::vector<std::size_t> bad(count, none);
  const auto n = static_cast<std::int64_t>(count);

#pragma omp parallel if (exec == Execution::Parallel)
  {
    std::vector<double> x0(spec.dim), z(M * spec.dim);
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
      const auto u = static_cast<std::size_t>(i);
      e.seeds()[u] = path_seed(master_seed, u);
      bad[u] = simulate_one(spec, grid, e.seeds()[u], e.path(u), x0, z);
    }
  }
  for (std::size_t i = 0; i < count; ++i)
    if (bad[i] != none) throw NonFiniteStateError(i, bad[i]);
  return e;
}

PathEnsemble reverse(const PathEnsemble& ensemble) {
  PathEnsemble r(ensemble.grid(), ensemble.dim(), ensemble.count());
  r.seeds() = ensemble.seeds();
  r.set_direction(ensemble.direction() == Direction::Forward ? Direction::Reversed : Direction::Forward);
  const std::size_t K = ensemble.knots();
  const auto n = static_cast<std::int64_t>(ensemble.count());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      auto src = ensemble.state(static_cast<std::size_t>(i), K - 1 - k);
      auto dst = r.state(static_cast<std::size_t>(i), k);
      std::copy(src.begin(), src.end(), dst.begin());
    }
  return r;
}

void cumulative_integral(const TimeGrid& grid, std::span<const double> path, std::size_t dim,
                         const ScalarFn& W, std::span<double> out) {
  const std::size_t M = grid.steps();
  double prev = W(grid.time(0), path.subspan(0, dim));
  out[0] = 0;
  for (std::size_t k = 0; k < M; ++k) {
    const double cur = W(grid.time(k + 1), path.subspan((k + 1) * dim, dim));
    out[k + 1] = out[k] + 0.5 * (prev + cur) * grid.dt(k);
    prev = cur;
  }
}

void tail_integral(const TimeGrid& grid, std::span<const double> path, std::size_t dim,
                   const ScalarFn& W, std::span<double> out) {
  const std::size_t M = grid.steps();
  double next = W(grid.time(M), path.subspan(M * dim, dim));
  out[M] = 0;
  for (std::size_t k = M; k-- > 0;) {
    const double cur = W(grid.time(k), path.subspan(k * dim, dim));
    out[k] = out[k + 1] + 0.5 * (cur + next) * grid.dt(k);
    next = cur;
  }
}

std::vector<double> integrate_along(const PathEnsemble& ensemble, const ScalarFn& W) {
  const std::size_t N = ensemble.count();
  std::vector<double> result(N);
  std::vector<std::uint8_t> bad(N, 0);
  const auto n = static_cast<std::int64_t>(N);
#pragma omp parallel
  {
    std::vector<double> cum(ensemble.knots());
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
      const auto u = static_cast<std::size_t>(i);
      cumulative_integral(ensemble.grid(), ensemble.path(u), ensemble.dim(), W, cum);
      result[u] = cum.back();
      bad[u] = std::isnan(result[u]) || result[u] == std::numeric_limits<double>::infinity();
    }
  }
  for (std::size_t i = 0; i < N; ++i)
    if (bad[i]) fail(ErrorCode::NonFiniteIntegral, "integral along path " + std::to_string(i) + " is +inf or NaN");
  return result;
}

void write_binary(const PathEnsemble& e, std::ostream& os) {
  put<std::uint64_t>(os, e.dim());
  put<std::uint64_t>(os, e.knots());
  put<std::uint64_t>(os, e.count());
  for (double t : e.grid().times()) put(os, t);
  os.write(reinterpret_cast<const char*>(e.data().data()),
           static_cast<std::streamsize>(e.data().size() * sizeof(double)));
  // trailer: seeds and direction
  os.write(reinterpret_cast<const char*>(e.seeds().data()),
           static_cast<std::streamsize>(e.seeds().size() * sizeof(std::uint64_t)));
  put<std::uint64_t>(os, e.direction() == Direction::Forward ? 0 : 1);
  if (!os) fail(ErrorCode::IoError, "failed writing ensemble");
}

PathEnsemble read_binary(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  const auto knots = get<std::uint64_t>(is);
  const auto N = get<std::uint64_t>(is);
  if (n == 0 || knots < 2) fail(ErrorCode::IoError, "bad ensemble header");
  std::vector<double> t(knots);
  for (auto& v : t) v = get<double>(is);
  PathEnsemble e(TimeGrid(std::move(t)), n, N);
  is.read(reinterpret_cast<char*>(e.data().data()), static_cast<std::streamsize>(e.data().size() * sizeof(double)));
  if (!is) fail(ErrorCode::IoError, "truncated ensemble body");
  is.read(reinterpret_cast<char*>(e.seeds().data()), static_cast<std::streamsize>(N * sizeof(std::uint64_t)));
  if (!is) fail(ErrorCode::IoError, "truncated ensemble seeds");
  e.set_direction(get<std::uint64_t>(is) == 0 ? Direction::Forward : Direction::Reversed);
  return e;
}

void write_csv(const PathEnsemble& e, std::ostream& os) {
  os << "path,knot,t";
  for (std::size_t j = 0; j < e.dim(); ++j) os << ",x" << j;
  os << '\n';
  char buf[32];
  for (std::size_t i = 0; i < e.count(); ++i)
    for (std::size_t k = 0; k < e.knots(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", e.grid().time(k));
      os << i << ',' << k << ',' << buf;
      for (double v : e.state(i, k)) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << ',' << buf;
      }
      os << '\n';
    }
}

}  // namespace fklab
