#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "fklab/diffusion.hpp"
#include "fklab/field.hpp"
#include "fklab/girsanov.hpp"

namespace fklab {

// Left box k^h = (1/h) 1_{[-h,0]} averages over [t, t+h]; right box over [t-h, t].
enum class KernelShape { LeftBox, RightBox };

struct KernelSpec {
  KernelShape shape = KernelShape::LeftBox;
  double h = 0;
};

// Renormalize divides partial boundary windows by their own length; Truncate keeps 1/h and
// drops the mass that falls outside [0, T].
enum class BoundaryMode { Renormalize, Truncate };

// Exact box average of the piecewise-linear interpolant of v. h is snapped to whole steps.
std::vector<double> convolve_time(const TimeGrid& grid, std::span<const double> v, const KernelSpec& kernel,
                                  BoundaryMode mode = BoundaryMode::Renormalize);

// (sum_k w_k |v_k|^p)^(1/p) with trapezoid weights w_k.
double trapezoid_norm(const TimeGrid& grid, std::span<const double> v, double p);

enum class WeightMode { None, Terminal, Adapted };

// How conditional increments are averaged inside a cell.
//  Terminal: per-path P-weights (the P-conditional increment, giving L^P).
//  Adapted:  weight at t_k is f_0(X_0) exp(int_0^{t_k} V) e^{psi(t_k, X_k)}, which reweights the
//            conditioning law to P_t while keeping R-increments (giving L^{R,P}).
struct Weighting {
  WeightMode mode = WeightMode::None;
  const WeightedEnsemble* terminal = nullptr;
  const FKProblem* problem = nullptr;
  ScalarFn psi;

  static Weighting none() { return {}; }
  static Weighting terminal_weights(const WeightedEnsemble& w) { return {WeightMode::Terminal, &w, nullptr, {}}; }
  static Weighting adapted(const FKProblem& p, ScalarFn psi) { return {WeightMode::Adapted, nullptr, &p, std::move(psi)}; }
};

// Plain is the cell mean of the increment quotient. MartingaleAdjusted takes the intercept of a
// cell regression on the Euler martingale increment X_{t+h} - X_t - sum b dt, a control
// variate that needs spec and an R-adapted weighting.
enum class DerivativeEstimator { Plain, MartingaleAdjusted };

struct DerivativeOptions {
  std::size_t min_samples = 50;
  DerivativeEstimator estimator = DerivativeEstimator::Plain;
  const DiffusionSpec* spec = nullptr;
  Execution execution = Execution::Parallel;
  std::vector<std::size_t> knots;  // when set, only these knots are estimated; other rows stay masked
};

struct DerivativeEstimate {
  double h = 0;
  std::size_t steps = 0;
  ScalarField raw;           // bandwidth h
  ScalarField half;          // h/2, empty rows when h/2 is not a whole number of steps
  ScalarField quarter;       // h/4, same
  ScalarField extrapolated;  // 2 E(h/2) - E(h), equal to raw without a half level
  bool has_half = false, has_quarter = false;
};

DerivativeEstimate forward_derivative(const PathEnsemble& ensemble, const ScalarFn& u, double h, const SpaceBox& box,
                                      const Weighting& weighting = {}, const DerivativeOptions& opts = {});

// Rows follow the original time: row k estimates lim E[(u(t_k - h, X_{t_k - h}) - u(t_k, X_{t_k}))/h | X_{t_k}].
DerivativeEstimate backward_derivative(const PathEnsemble& ensemble, const ScalarFn& u, double h, const SpaceBox& box,
                                       const Weighting& weighting = {}, const DerivativeOptions& opts = {});

DerivativeEstimate carre_du_champ(const PathEnsemble& ensemble, const ScalarFn& u, const ScalarFn& v, double h,
                                  const SpaceBox& box, const Weighting& weighting = {},
                                  const DerivativeOptions& opts = {});

// Cell mean of (X_{t+h} - X_t)/h, or of (X_{t+h} - X_t - sum b dt)/h when relative_to is given.
VectorFieldEstimate nelson_velocity(const PathEnsemble& ensemble, double h, const SpaceBox& box,
                                    const Weighting& weighting = {}, const DiffusionSpec* relative_to = nullptr,
                                    const DerivativeOptions& opts = {});

struct TruncatedEnsemble {
  static constexpr std::size_t never = std::numeric_limits<std::size_t>::max();
  PathEnsemble ensemble;
  std::vector<std::size_t> exit_knot;
  std::size_t exited = 0;
  double exit_fraction = 0;
};

// Freezes every path at its first knot with |X| >= radius. radius = +inf is the identity.
TruncatedEnsemble exit_time_truncate(const PathEnsemble& ensemble, double radius);

}  // namespace fklab
