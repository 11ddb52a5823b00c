#pragma once

#include <functional>

#include "fklab/diffusion.hpp"
#include "fklab/field.hpp"

namespace fklab {

enum class BoundaryPolicy { Dirichlet, Neumann };

// 1-D grid: J intervals on [x_lo, x_hi] (J+1 nodes) and the time grid of the ensemble.
struct PdeGrid {
  double x_lo = -8, x_hi = 8;
  std::size_t J = 400;
  TimeGrid time;
  BoundaryPolicy left = BoundaryPolicy::Neumann, right = BoundaryPolicy::Neumann;
  // Dirichlet data g(t, x) at the edges, typically the free-space closed form.
  std::function<double(double t, double x)> boundary;

  double dx() const { return (x_hi - x_lo) / static_cast<double>(J); }
  double node(std::size_t j) const { return x_lo + static_cast<double>(j) * dx(); }
  // Node j is the center of cell j: J+1 cells on [x_lo - dx/2, x_hi + dx/2].
  SpaceBox box() const;
  void validate() const;
};

struct PdeSolution {
  ScalarField field;        // all cells valid, zero std_error
  bool max_principle = true;  // min data <= u <= max data (checked when V = 0)
  bool checked_max_principle = false;
  double data_min = 0, data_max = 0;
};

// Crank-Nicolson backward from T for (d_t + b d_x + a/2 d_xx + V) g = 0, g(T) = g_T.
PdeSolution solve_fk_backward(const FKProblem& problem, const PdeGrid& grid);

// Crank-Nicolson forward from 0 for (-d_t + bt d_x + a/2 d_xx + V) f = 0, f(0) = f_0, where bt is
// the drift of the time-reversed reference.
PdeSolution solve_fk_forward(const FKProblem& problem, const PdeGrid& grid,
                             const std::function<double(double t, double x)>& reversed_drift);

struct PdeLogResult {
  ScalarField psi;
  std::size_t clipped = 0;  // cells where g fell below 1e-300
};

PdeLogResult psi_from_pde(const ScalarField& g);

}  // namespace fklab
