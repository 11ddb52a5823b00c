#include "fklab/pde_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "fklab/errors.hpp"

namespace fklab {

namespace {

struct Coeffs {
  std::vector<double> lo, di, up;  // operator A: (A u)_j = lo_j u_{j-1} + di_j u_j + up_j u_{j+1}
};

// Central differences of b d_x + a/2 d_xx + V at time t.
Coeffs assemble(const std::function<double(double, double)>& drift, const DiffusionSpec& spec,
                const ScalarFn& potential, const PdeGrid& g, double t) {
  const std::size_t J = g.J;
  const double dx = g.dx();
  Coeffs c{std::vector<double>(J + 1), std::vector<double>(J + 1), std::vector<double>(J + 1)};
  double x[1], a[1];
  for (std::size_t j = 0; j <= J; ++j) {
    x[0] = g.node(j);
    spec.diffusion_matrix(t, x, a);
    const double b = drift(t, x[0]);
    const double V = potential(t, x);
    if (!std::isfinite(a[0]) || !std::isfinite(b) || !std::isfinite(V))
      fail(ErrorCode::NonFinite, "PDE coefficient is not finite at x = " + std::to_string(x[0]));
    const double diff = 0.5 * a[0] / (dx * dx), conv = b / (2 * dx);
    c.lo[j] = diff - conv;
    c.up[j] = diff + conv;
    c.di[j] = -2 * diff + V;
  }
  return c;
}

void thomas(std::vector<double>& lo, std::vector<double>& di, std::vector<double>& up, std::vector<double>& rhs) {
  const std::size_t n = di.size();
  for (std::size_t i = 1; i < n; ++i) {
    if (di[i - 1] == 0) fail(ErrorCode::LinearSolveFailure, "zero pivot in tridiagonal solve");
    const double m = lo[i] / di[i - 1];
    di[i] -= m * up[i - 1];
    rhs[i] -= m * rhs[i - 1];
  }
  if (di[n - 1] == 0) fail(ErrorCode::LinearSolveFailure, "zero pivot in tridiagonal solve");
  rhs[n - 1] /= di[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - up[i] * rhs[i + 1]) / di[i];
  for (double v : rhs)
    if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "PDE solution is not finite");
}

// One theta = 1/2 step: (I - dt/2 A_new) u_new = (I + dt/2 A_old) u_old, with boundary rows.
void cn_step(const Coeffs& a_old, const Coeffs& a_new, double dt, const PdeGrid& g, double t_new,
             const std::vector<double>& u_old, std::vector<double>& u_new) {
  const std::size_t J = g.J;
  std::vector<double> lo(J + 1), di(J + 1), up(J + 1), rhs(J + 1);
  for (std::size_t j = 0; j <= J; ++j) {
    double l = a_old.lo[j], u = a_old.up[j];
    double left = j > 0 ? u_old[j - 1] : u_old[1];  // ghost node mirrors for Neumann
    double right = j < J ? u_old[j + 1] : u_old[J - 1];
    rhs[j] = u_old[j] + 0.5 * dt * (l * left + a_old.di[j] * u_old[j] + u * right);
    lo[j] = -0.5 * dt * a_new.lo[j];
    di[j] = 1 - 0.5 * dt * a_new.di[j];
    up[j] = -0.5 * dt * a_new.up[j];
  }
  // Neumann: fold the ghost coefficient onto the interior neighbour.
  up[0] += lo[0];
  lo[0] = 0;
  lo[J] += up[J];
  up[J] = 0;
  if (g.left == BoundaryPolicy::Dirichlet) {
    di[0] = 1;
    up[0] = 0;
    rhs[0] = g.boundary(t_new, g.x_lo);
  }
  if (g.right == BoundaryPolicy::Dirichlet) {
    di[J] = 1;
    lo[J] = 0;
    rhs[J] = g.boundary(t_new, g.x_hi);
  }
  thomas(lo, di, up, rhs);
  u_new = std::move(rhs);
}

PdeSolution finish(ScalarField f, const std::vector<double>& data, bool v_zero, bool neumann) {
  PdeSolution s;
  s.data_min = *std::min_element(data.begin(), data.end());
  s.data_max = *std::max_element(data.begin(), data.end());
  if (v_zero && neumann) {
    s.checked_max_principle = true;
    const double tol = 1e-12 * std::max(1.0, std::abs(s.data_max));
    for (double v : f.values)
      if (v < s.data_min - tol || v > s.data_max + tol) s.max_principle = false;
  }
  std::fill(f.mask.begin(), f.mask.end(), 1);
  s.field = std::move(f);
  return s;
}

bool potential_is_zero(const ScalarFn& V, const PdeGrid& g) {
  double x[1];
  for (std::size_t k = 0; k < g.time.knots(); k += std::max<std::size_t>(1, g.time.steps() / 8))
    for (std::size_t j = 0; j <= g.J; j += std::max<std::size_t>(1, g.J / 32)) {
      x[0] = g.node(j);
      if (V(g.time.time(k), x) != 0) return false;
    }
  return true;
}

}  // namespace

SpaceBox PdeGrid::box() const {
  const double h = dx();
  return SpaceBox{{x_lo - 0.5 * h}, {x_hi + 0.5 * h}, {J + 1}};
}

void PdeGrid::validate() const {
  if (J < 16) fail(ErrorCode::InvalidArgument, "PDE grid needs J >= 16");
  if (!(x_hi > x_lo)) fail(ErrorCode::InvalidArgument, "PDE interval is empty");
  if ((left == BoundaryPolicy::Dirichlet || right == BoundaryPolicy::Dirichlet) && !boundary)
    fail(ErrorCode::InvalidArgument, "Dirichlet boundary needs boundary data");
}

PdeSolution solve_fk_backward(const FKProblem& problem, const PdeGrid& g) {
  g.validate();
  if (problem.spec.dim != 1) fail(ErrorCode::InvalidArgument, "the PDE oracle is one-dimensional");
  const TimeGrid& tg = g.time;
  const std::size_t J = g.J, M = tg.steps();
  const auto drift = [&](double t, double x) {
    double in[1] = {x}, out[1];
    problem.spec.drift(t, in, out);
    return out[0];
  };
  ScalarField f(tg, g.box());
  std::vector<double> u(J + 1), next;
  for (std::size_t j = 0; j <= J; ++j) {
    const double x[1] = {g.node(j)};
    u[j] = problem.terminal(x);
  }
  const std::vector<double> data = u;
  std::copy(u.begin(), u.end(), f.values.begin() + static_cast<std::ptrdiff_t>(f.at(M, 0)));
  Coeffs a_hi = assemble(drift, problem.spec, problem.potential, g, tg.time(M));
  for (std::size_t k = M; k-- > 0;) {
    Coeffs a_lo = assemble(drift, problem.spec, problem.potential, g, tg.time(k));
    cn_step(a_hi, a_lo, tg.dt(k), g, tg.time(k), u, next);
    u.swap(next);
    std::copy(u.begin(), u.end(), f.values.begin() + static_cast<std::ptrdiff_t>(f.at(k, 0)));
    a_hi = std::move(a_lo);
  }
  const bool neumann = g.left == BoundaryPolicy::Neumann && g.right == BoundaryPolicy::Neumann;
  return finish(std::move(f), data, potential_is_zero(problem.potential, g), neumann);
}

PdeSolution solve_fk_forward(const FKProblem& problem, const PdeGrid& g,
                             const std::function<double(double, double)>& reversed_drift) {
  g.validate();
  if (problem.spec.dim != 1) fail(ErrorCode::InvalidArgument, "the PDE oracle is one-dimensional");
  if (!reversed_drift) fail(ErrorCode::InvalidArgument, "forward solve needs the reversed drift");
  const TimeGrid& tg = g.time;
  const std::size_t J = g.J, M = tg.steps();
  ScalarField f(tg, g.box());
  std::vector<double> u(J + 1), next;
  for (std::size_t j = 0; j <= J; ++j) {
    const double x[1] = {g.node(j)};
    u[j] = problem.initial_weight(x);
  }
  const std::vector<double> data = u;
  std::copy(u.begin(), u.end(), f.values.begin());
  Coeffs a_lo = assemble(reversed_drift, problem.spec, problem.potential, g, tg.time(0));
  for (std::size_t k = 0; k < M; ++k) {
    Coeffs a_hi = assemble(reversed_drift, problem.spec, problem.potential, g, tg.time(k + 1));
    cn_step(a_lo, a_hi, tg.dt(k), g, tg.time(k + 1), u, next);
    u.swap(next);
    std::copy(u.begin(), u.end(), f.values.begin() + static_cast<std::ptrdiff_t>(f.at(k + 1, 0)));
    a_lo = std::move(a_hi);
  }
  const bool neumann = g.left == BoundaryPolicy::Neumann && g.right == BoundaryPolicy::Neumann;
  return finish(std::move(f), data, potential_is_zero(problem.potential, g), neumann);
}

PdeLogResult psi_from_pde(const ScalarField& g) {
  PdeLogResult r{ScalarField(g.grid, g.box), 0};
  constexpr double floor = 1e-300;
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    if (!g.mask[i]) continue;
    double v = g.values[i];
    if (!(v >= floor)) {
      ++r.clipped;
      v = floor;
    }
    r.psi.values[i] = std::log(v);
    r.psi.mask[i] = 1;
  }
  return r;
}

}  // namespace fklab
