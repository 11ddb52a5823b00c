#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "fklab/diffusion.hpp"
#include "fklab/field.hpp"
#include "fklab/girsanov.hpp"
#include "fklab/stochastic_calculus.hpp"

namespace fklab {

enum class GradientMethod { GridDifferences, MartingaleRegression };

// Central differences on valid neighbour pairs, one-sided at mask edges.
VectorFieldEstimate gradient_grid(const ScalarField& psi);

// Per-cell slope of psi(t+h, X_{t+h}) - psi(t, X_t) against X_{t+h} - X_t. psi may return NaN
// where it is undefined; those increments are skipped.
VectorFieldEstimate gradient_regression(const PathEnsemble& ensemble, const ScalarFn& psi, double h,
                                        const SpaceBox& box, const Weighting& weighting = {},
                                        const DerivativeOptions& opts = {});

// Dispatches on method. The regression route needs the ensemble and bandwidth.
VectorFieldEstimate gradient_estimate(const ScalarField& psi, GradientMethod method,
                                      const PathEnsemble* ensemble = nullptr, double h = 0,
                                      const Weighting& weighting = {}, const DerivativeOptions& opts = {});

// psi as a callable: interpolated on valid cells, NaN elsewhere. Rows must match grid knots.
ScalarFn field_function(const ScalarField& f);

// Fields sampled at the cell centers of another box on the same time grid (invalid where the
// source cannot be interpolated).
ScalarField resample(const ScalarField& src, const SpaceBox& box);
VectorFieldEstimate resample(const VectorFieldEstimate& src, const SpaceBox& box);

// Share of P-weight in each (knot, cell); unweighted when weighted is null.
ScalarField p_cell_mass(const PathEnsemble& ensemble, const WeightedEnsemble* weighted, const SpaceBox& box);

// L^{R,P} u: adapted weights from psi, martingale-adjusted cell regressions.
DerivativeEstimate p_localized_derivative(const ScalarFn& u, const ScalarFn& psi, const FKProblem& problem,
                                          const PathEnsemble& ensemble, const SpaceBox& box, double h,
                                          std::size_t min_samples = 50, Execution exec = Execution::Parallel,
                                          const std::vector<std::size_t>& knots = {});

struct ResidualOptions {
  double t_min = 0;
  double t_max = 1e300;
  double tolerance = 0.05;  // on relative_l1
  double z_threshold = 3;   // cellwise |r| / se
  std::vector<double> times;  // when set, only these knots enter the summary
};

struct ResidualReport {
  std::string name;
  ScalarField residual;  // std_error carries the per-cell pooled error
  ScalarField scale;     // per-cell reference magnitude
  double l1 = 0, l2 = 0;
  double scale_l1 = 0;
  double relative_l1 = 0;
  double pooled_std_error = 0;  // P-weighted mean of cell errors
  double coverage = 0;
  std::size_t valid_cells = 0, within_z = 0;
  double within_fraction = 0;
  double h = 0;
  std::size_t steps = 0;
  double tolerance = 0;
  std::string budget;
  bool pass = false;
};

// Shared reducer: residual and scale on the same grid/box, masses from p_cell_mass.
ResidualReport summarize(std::string name, ScalarField residual, ScalarField scale, const ScalarField& p_mass,
                         const ResidualOptions& opts);

// L psi + 1/2 grad.a.grad + V, cellwise.
ResidualReport hjb_residual(const VectorFieldEstimate& grad, const ScalarField& L_psi, const FKProblem& problem,
                            const ScalarField& p_mass, const ResidualOptions& opts = {});

// L^P psi - (1/2 grad.a.grad - V), with L^P psi from P-weighted increments.
ResidualReport lp_identity_check(const VectorFieldEstimate& grad, const ScalarField& LP_psi,
                                 const FKProblem& problem, const ScalarField& p_mass,
                                 const ResidualOptions& opts = {});

// L^{R,P} psi - (L^P psi - grad.a.grad).
ResidualReport operator_consistency(const ScalarField& LRP_psi, const ScalarField& LP_psi,
                                    const VectorFieldEstimate& grad, const DiffusionSpec& spec,
                                    const ScalarField& p_mass, const ResidualOptions& opts = {});

struct FkResidualInputs {
  double h = 0;
  std::size_t min_samples = 50;
  Execution execution = Execution::Parallel;
  std::vector<std::size_t> knots;  // empty: every knot
};

// L^{R,P} g + V g with L^{R,P} the P-adapted, martingale-adjusted derivative of g (extrapolated).
// g may live on any box covering the ensemble box, e.g. a PDE grid.
ResidualReport fk_residual(const ScalarField& g, const FKProblem& problem, const PathEnsemble& ensemble,
                           const SpaceBox& box, const ScalarField& p_mass, const FkResidualInputs& in,
                           const ResidualOptions& opts = {});

struct DriftReport {
  ResidualReport report;   // Euclidean norm of lhs - rhs
  VectorFieldEstimate lhs;  // Nelson velocity of P
  VectorFieldEstimate rhs;  // b + a grad
};

ResidualReport gradient_comparison(const VectorFieldEstimate& a, const VectorFieldEstimate& b,
                                   const ScalarField& p_mass, const ResidualOptions& opts = {});

DriftReport drift_formula_check(const DiffusionSpec& spec, const VectorFieldEstimate& grad,
                                const WeightedEnsemble& weighted, double h, const SpaceBox& box,
                                const ResidualOptions& opts = {}, const DerivativeOptions& dopts = {});

// fine <= coarse + k * noise, noise the pooled errors in quadrature.
bool refinement_decreases(const ResidualReport& coarse, const ResidualReport& fine, double k = 2);

void write_json(const ResidualReport& r, std::ostream& os);
void write_csv(const ResidualReport& r, std::ostream& os);

}  // namespace fklab
