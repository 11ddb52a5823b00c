#pragma once

#include <cstddef>

#include "fklab/diffusion.hpp"
#include "fklab/field.hpp"

namespace fklab {

struct FieldOptions {
  std::size_t min_samples = 50;
  Execution execution = Execution::Parallel;
};

// g(t_k, x_c) = E_R[exp(int_{t_k}^T V) g_T(X_T) | X_{t_k} in c] for every knot and cell.
ScalarField fk_solve_backward(const FKProblem& problem, const PathEnsemble& ensemble, const SpaceBox& box,
                              const FieldOptions& opts = {});

// f(t_k, x_c) = E_R[f_0(X_0) exp(int_0^{t_k} V) | X_{t_k} in c].
ScalarField fk_solve_forward(const FKProblem& problem, const PathEnsemble& ensemble, const SpaceBox& box,
                             const FieldOptions& opts = {});

struct SemigroupResult {
  FieldSlice slice;
  std::size_t dropped = 0;  // paths whose X_t left the valid region of u
};

// (S^r_t u)(x) = E_R[exp(int_r^t V) u(X_t) | X_r = x], u interpolated from its slice.
SemigroupResult fk_semigroup_apply(const FKProblem& problem, const PathEnsemble& ensemble, std::size_t r,
                                   std::size_t t, const FieldSlice& u, const FieldOptions& opts = {});

struct LogTransformResult {
  ScalarField psi;
  double floor = 0;
  std::size_t below_floor = 0;
};

// psi = log g on valid cells with g >= floor; floor <= 0 selects 1e-3 * max valid g.
LogTransformResult log_transform(const ScalarField& g, double floor = 0);

struct SemigroupCheck {
  std::size_t joint_cells = 0, within = 0;
  double fraction = 0;
};

// Compares two slices cellwise: |a - b| <= k * sqrt(se_a^2 + se_b^2).
SemigroupCheck compare_slices(const FieldSlice& a, const FieldSlice& b, double k = 2.0);

}  // namespace fklab
