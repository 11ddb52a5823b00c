#pragma once

// Plain serial versions of the main kernels. They share no code with the parallel paths beyond
// the seed derivation and exist to cross-check them in tests and benchmarks.

#include <vector>

#include "fklab/diffusion.hpp"
#include "fklab/field.hpp"

namespace fklab::reference {

// Draws each normal as the step needs it; same stream layout as simulate().
PathEnsemble simulate(const DiffusionSpec& spec, const TimeGrid& grid, std::size_t count, std::uint64_t master_seed);

// Left-to-right sums per knot, two-pass mean and variance per cell.
ScalarField fk_backward(const FKProblem& problem, const PathEnsemble& e, const SpaceBox& box,
                        std::size_t min_samples = 50);

// log f0(X0) + int V + log gT(XT), with a plain trapezoid sum.
std::vector<double> fk_log_weights(const FKProblem& problem, const PathEnsemble& e);

// Unweighted cell mean of (u(t+h) - u(t))/h with h = steps * dt, window clipped at T.
ScalarField plain_forward_derivative(const PathEnsemble& e, const ScalarFn& u, std::size_t steps,
                                     const SpaceBox& box, std::size_t min_samples = 50);

}  // namespace fklab::reference
