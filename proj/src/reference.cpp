#include "fklab/reference.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "fklab/errors.hpp"

namespace fklab::reference {

namespace {

// Cellwise mean and standard error of collected samples, two passes.
ScalarField cell_means(const TimeGrid& grid, const SpaceBox& box, const std::vector<std::vector<double>>& bins,
                       std::size_t min_samples, std::size_t last_row) {
  ScalarField f(grid, box);
  for (std::size_t i = 0; i < bins.size(); ++i) {
    const auto& b = bins[i];
    f.samples[i] = b.size();
    if (i / f.cells() > last_row || b.size() < std::max<std::size_t>(min_samples, 1)) continue;
    double m = 0;
    for (double v : b) m += v;
    m /= static_cast<double>(b.size());
    double ss = 0;
    for (double v : b) ss += (v - m) * (v - m);
    const double n = static_cast<double>(b.size());
    f.values[i] = m;
    f.std_error[i] = n > 1 ? std::sqrt(ss / (n - 1) / n) : std::numeric_limits<double>::infinity();
    f.mask[i] = 1;
  }
  return f;
}

}  // namespace

PathEnsemble simulate(const DiffusionSpec& spec, const TimeGrid& grid, std::size_t count, std::uint64_t master_seed) {
  const std::size_t n = spec.dim, M = grid.steps();
  PathEnsemble e(grid, n, count);
  std::vector<double> b(n), s(n * n), z(n);
  for (std::size_t i = 0; i < count; ++i) {
    e.seeds()[i] = path_seed(master_seed, i);
    Rng rng(e.seeds()[i]);
    spec.initial_law.sample(rng, e.state(i, 0));
    std::normal_distribution<double> n01;
    for (std::size_t k = 0; k < M; ++k) {
      for (auto& v : z) v = n01(rng);
      auto x = e.state(i, k);
      auto y = e.state(i, k + 1);
      const double t = grid.time(k), dt = grid.dt(k);
      spec.drift(t, x, b);
      spec.sigma(t, x, s);
      for (std::size_t a = 0; a < n; ++a) {
        double noise = 0;
        for (std::size_t c = 0; c < n; ++c) noise += s[a * n + c] * z[c];
        y[a] = x[a] + b[a] * dt + noise * std::sqrt(dt);
      }
    }
  }
  return e;
}

ScalarField fk_backward(const FKProblem& problem, const PathEnsemble& e, const SpaceBox& box,
                        std::size_t min_samples) {
  const std::size_t M = e.grid().steps();
  std::vector<std::vector<double>> bins(e.knots() * box.total_cells());
  std::vector<double> V(M + 1);
  for (std::size_t i = 0; i < e.count(); ++i) {
    for (std::size_t k = 0; k <= M; ++k) V[k] = problem.potential(e.grid().time(k), e.state(i, k));
    const double gT = problem.terminal(e.state(i, M));
    for (std::size_t k = 0; k <= M; ++k) {
      double I = 0;
      for (std::size_t j = M; j > k; --j) I += 0.5 * (V[j - 1] + V[j]) * e.grid().dt(j - 1);
      const auto c = box.locate(e.state(i, k));
      if (c) bins[k * box.total_cells() + *c].push_back(gT == 0 ? 0.0 : std::exp(I) * gT);
    }
  }
  return cell_means(e.grid(), box, bins, min_samples, M);
}

std::vector<double> fk_log_weights(const FKProblem& problem, const PathEnsemble& e) {
  const std::size_t M = e.grid().steps();
  std::vector<double> lw(e.count());
  for (std::size_t i = 0; i < e.count(); ++i) {
    double I = 0;
    for (std::size_t k = 0; k < M; ++k)
      I += 0.5 * (problem.potential(e.grid().time(k), e.state(i, k)) +
                  problem.potential(e.grid().time(k + 1), e.state(i, k + 1))) *
           e.grid().dt(k);
    const double f0 = problem.initial_weight(e.state(i, 0)), gT = problem.terminal(e.state(i, M));
    lw[i] = f0 > 0 && gT > 0 ? std::log(f0) + I + std::log(gT) : -std::numeric_limits<double>::infinity();
  }
  return lw;
}

ScalarField plain_forward_derivative(const PathEnsemble& e, const ScalarFn& u, std::size_t steps, const SpaceBox& box,
                                     std::size_t min_samples) {
  const std::size_t M = e.grid().steps();
  std::vector<std::vector<double>> bins(e.knots() * box.total_cells());
  for (std::size_t i = 0; i < e.count(); ++i)
    for (std::size_t k = 0; k < M; ++k) {
      const std::size_t kk = std::min(k + steps, M);
      const auto c = box.locate(e.state(i, k));
      if (!c) continue;
      const double h = e.grid().time(kk) - e.grid().time(k);
      bins[k * box.total_cells() + *c].push_back(
          (u(e.grid().time(kk), e.state(i, kk)) - u(e.grid().time(k), e.state(i, k))) / h);
    }
  return cell_means(e.grid(), box, bins, min_samples, M - 1);
}

}  // namespace fklab::reference
