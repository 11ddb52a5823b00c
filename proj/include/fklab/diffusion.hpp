#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace fklab {

using Rng = std::mt19937_64;

// b(t, x) written into out (length n).
using DriftFn = std::function<void(double t, std::span<const double> x, std::span<double> out)>;
// sigma(t, x) written row-major into out (length n*n).
using SigmaFn = std::function<void(double t, std::span<const double> x, std::span<double> out)>;
using ScalarFn = std::function<double(double t, std::span<const double> x)>;
using StateFn = std::function<double(std::span<const double> x)>;

enum class Execution { Parallel, Serial };

// Sampler plus density for the initial law R0. density is empty for atoms.
struct InitialLaw {
  std::string name;
  std::function<void(Rng&, std::span<double>)> sample;
  std::function<double(std::span<const double>)> density;

  static InitialLaw point(std::vector<double> x);
  static InitialLaw gaussian(std::vector<double> mean, double variance);
  static InitialLaw uniform_box(std::vector<double> lo, std::vector<double> hi);
  // Product of scaled Student-t marginals; heavy-tailed test law.
  static InitialLaw student_t(std::size_t dim, double dof, double scale);
};

struct DiffusionSpec {
  std::size_t dim = 1;
  double horizon = 1.0;
  DriftFn drift;
  SigmaFn sigma;
  InitialLaw initial_law;
  bool invertible = false;
  double lambda_min = 0.0;

  // a = sigma sigma^T, row-major n*n. scratch must hold n*n doubles.
  void diffusion_matrix(double t, std::span<const double> x, std::span<double> a,
                        std::span<double> scratch) const;
  void diffusion_matrix(double t, std::span<const double> x, std::span<double> a) const;

  // Throws InvalidArgument when a field is missing or non-finite at x, or when an invertible
  // spec has an eigenvalue of a below lambda_min.
  void check_point(double t, std::span<const double> x) const;

  // b = 0, sigma = sqrt(eps) I.
  static DiffusionSpec brownian(std::size_t dim, double horizon, InitialLaw law, double eps = 1.0);
  // b = -k x, sigma = sqrt(eps) I. Stationary law N(0, eps/(2k)).
  static DiffusionSpec ou(std::size_t dim, double horizon, double k, double eps, InitialLaw law);
};

class TimeGrid {
 public:
  TimeGrid() = default;
  explicit TimeGrid(std::vector<double> times);
  static TimeGrid uniform(double horizon, std::size_t steps);

  std::size_t steps() const { return times_.size() - 1; }
  std::size_t knots() const { return times_.size(); }
  double horizon() const { return times_.back(); }
  double time(std::size_t k) const { return times_[k]; }
  double dt(std::size_t k) const { return times_[k + 1] - times_[k]; }
  const std::vector<double>& times() const { return times_; }
  bool is_uniform(double rel_tol = 1e-9) const;
  // Knot whose time is t (within rel_tol of the step); throws InvalidArgument otherwise.
  std::size_t knot_of(double t, double rel_tol = 1e-6) const;
  // Number of whole steps in a bandwidth h on a uniform grid; BandwidthTooSmall if h < dt.
  std::size_t steps_for(double h) const;

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

 private:
  std::vector<double> times_{0.0, 1.0};
};

struct FKProblem {
  DiffusionSpec spec;
  ScalarFn potential;      // V(t, x), finite or -inf
  StateFn terminal;        // g_T >= 0
  StateFn initial_weight;  // f_0 >= 0
};

enum class Direction { Forward, Reversed };

class PathEnsemble {
 public:
  PathEnsemble() = default;
  PathEnsemble(TimeGrid grid, std::size_t dim, std::size_t count);

  std::size_t count() const { return count_; }
  std::size_t dim() const { return dim_; }
  std::size_t knots() const { return grid_.knots(); }
  const TimeGrid& grid() const { return grid_; }
  Direction direction() const { return direction_; }
  void set_direction(Direction d) { direction_ = d; }

  std::span<const double> state(std::size_t path, std::size_t knot) const {
    return {data_.data() + (path * knots() + knot) * dim_, dim_};
  }
  std::span<double> state(std::size_t path, std::size_t knot) {
    return {data_.data() + (path * knots() + knot) * dim_, dim_};
  }
  std::span<const double> path(std::size_t i) const {
    return {data_.data() + i * knots() * dim_, knots() * dim_};
  }
  std::span<double> path(std::size_t i) { return {data_.data() + i * knots() * dim_, knots() * dim_}; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }
  const std::vector<std::uint64_t>& seeds() const { return seeds_; }
  std::vector<std::uint64_t>& seeds() { return seeds_; }

  friend bool operator==(const PathEnsemble&, const PathEnsemble&) = default;

 private:
  TimeGrid grid_;
  std::size_t dim_ = 0;
  std::size_t count_ = 0;
  Direction direction_ = Direction::Forward;
  std::vector<double> data_;
  std::vector<std::uint64_t> seeds_;
};

// SplitMix64 finalizer of (master, index): the per-path stream seed.
std::uint64_t path_seed(std::uint64_t master_seed, std::uint64_t index);

PathEnsemble simulate(const DiffusionSpec& spec, const TimeGrid& grid, std::size_t count,
                      std::uint64_t master_seed, Execution exec = Execution::Parallel);

// Rebuilds one path (length (M+1)*n) from its stored seed.
void regenerate_path(const DiffusionSpec& spec, const TimeGrid& grid, std::uint64_t seed,
                     std::span<double> out);

// Euler-Maruyama from x0 driven by given standard normals (M*n of them). Returns the first
// step index that produced a non-finite state, or M+1 when the path is finite.
std::size_t euler_path(const DiffusionSpec& spec, const TimeGrid& grid, std::span<const double> x0,
                       std::span<const double> normals, std::span<double> out);

PathEnsemble reverse(const PathEnsemble& ensemble);

// Trapezoid integral of W(t, X_t) over [0, T] per path. -inf propagates.
std::vector<double> integrate_along(const PathEnsemble& ensemble, const ScalarFn& W);

// Running trapezoid integrals I_k = int_0^{t_k} W along one path (out has M+1 entries).
void cumulative_integral(const TimeGrid& grid, std::span<const double> path, std::size_t dim,
                         const ScalarFn& W, std::span<double> out);
// J_k = int_{t_k}^T W, accumulated backward from T so that -inf kills only earlier knots.
void tail_integral(const TimeGrid& grid, std::span<const double> path, std::size_t dim,
                   const ScalarFn& W, std::span<double> out);

void write_binary(const PathEnsemble& ensemble, std::ostream& os);
PathEnsemble read_binary(std::istream& is);
void write_csv(const PathEnsemble& ensemble, std::ostream& os);

}  // namespace fklab
