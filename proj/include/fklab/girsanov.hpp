#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "fklab/diffusion.hpp"
#include "fklab/field.hpp"

namespace fklab {

// A reference ensemble with per-path log dP/dR (up to a constant).
struct WeightedEnsemble {
  std::shared_ptr<const PathEnsemble> base;
  std::vector<double> log_weights;  // raw, may be -inf
  double log_normalizer = 0;        // log of the empirical mean raw weight
  std::vector<double> weights;      // normalized, empirical mean 1
  double ess = 0;
  std::size_t killed = 0;

  std::size_t count() const { return log_weights.size(); }
  double killed_fraction() const { return count() ? static_cast<double>(killed) / static_cast<double>(count()) : 0; }
};

// Normalizes arbitrary log weights (max-shifted). AllKilled when every weight is -inf.
WeightedEnsemble make_weighted(std::shared_ptr<const PathEnsemble> base, std::vector<double> log_weights);

// log w = log f_0(X_0) + int_0^T V + log g_T(X_T).
WeightedEnsemble fk_weights(const FKProblem& problem, std::shared_ptr<const PathEnsemble> ensemble,
                            Execution exec = Execution::Parallel);

struct EntropyEstimate {
  double value = 0;
  double std_error = 0;
  double ess = 0;
};

// H(P|R) = sum_i w_i log w_i / N with mean-one weights; delete-one jackknife error.
// DegenerateESS when ess < ess_floor * N.
EntropyEstimate relative_entropy(const WeightedEnsemble& weighted, double ess_floor = 0.01);

struct EntropyDecomposition {
  double h0 = 0;
  double kinetic = 0;      // noise-corrected
  double kinetic_raw = 0;  // plug-in, biased upward by gradient noise
  double coverage = 0;     // share of dt dP on valid gradient cells
  std::size_t initial_cells = 0;
};

struct DecompositionOptions {
  bool debias = true;
  double min_coverage = 0.9;
};

// h0 by histogram ratio at t = 0 on the gradient's box; kinetic = E_P int 1/2 grad.a.grad dt.
EntropyDecomposition decompose_entropy(const WeightedEnsemble& weighted, const VectorFieldEstimate& grad,
                                       const DiffusionSpec& spec, const DecompositionOptions& opts = {});
// Same, with the gradient taken from psi by grid differences.
EntropyDecomposition decompose_entropy(const WeightedEnsemble& weighted, const ScalarField& psi,
                                       const DiffusionSpec& spec, const DecompositionOptions& opts = {});

struct LogDensityPair {
  std::size_t s = 0, t = 0;
  std::vector<double> residuals;  // per path, NaN when the path is off the valid region
  double mean_abs = 0;            // P-weighted over retained paths
  double pooled_std_error = 0;    // P-weighted mean of cell errors
  double coverage = 0;
  bool pass = false;
};

// For each (s, t): residual_i = psi(s, X_s) - log E[exp(int_s^t V) e^{psi(t, X_t)} | cell of X_s],
// using g_T directly when t is the last knot.
std::vector<LogDensityPair> girsanov_log_density(const WeightedEnsemble& weighted, const ScalarField& psi,
                                                 const FKProblem& problem,
                                                 const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                                                 std::size_t min_samples = 50);

struct ChainBound {
  double lhs = 0, rhs = 0;
  double h_pq = 0, q_second_moment = 0;
  double std_error = 0;
  bool holds = false;
};

// H(p|r) <= 2 H(p|q) + E_q(dq/dr) with p, q given as weights over one reference ensemble.
ChainBound entropy_chain_bound(const WeightedEnsemble& p, const WeightedEnsemble& q, double ess_floor = 0.01);

struct BornResult {
  double tv = 0;
  double noise_tv = 0;  // expected TV from cell noise alone
  double coverage = 0;
  std::size_t cells = 0;
};

// TV between the P-weighted histogram of X_t and the R-histogram reweighted by f_t g_t.
BornResult born_marginal_check(const WeightedEnsemble& weighted, const ScalarField& f, const ScalarField& g,
                               std::size_t knot, double min_coverage = 0.9);

}  // namespace fklab
