#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "fklab/diffusion.hpp"

namespace fklab {

// Axis-aligned box split into equal cells; flat index has the last axis fastest.
struct SpaceBox {
  std::vector<double> lo, hi;
  std::vector<std::size_t> cells;

  static SpaceBox uniform(std::size_t dim, double lo, double hi, std::size_t cells_per_axis);

  std::size_t dim() const { return lo.size(); }
  std::size_t total_cells() const;
  double width(std::size_t axis) const { return (hi[axis] - lo[axis]) / static_cast<double>(cells[axis]); }
  std::optional<std::size_t> locate(std::span<const double> x) const;
  void center(std::size_t flat, std::span<double> out) const;
  std::vector<double> center(std::size_t flat) const;
  void validate() const;

  friend bool operator==(const SpaceBox&, const SpaceBox&) = default;
};

// Box covering the central `coverage` quantile range of all visited states, per axis.
SpaceBox auto_box(const PathEnsemble& ensemble, std::size_t cells_per_axis, double coverage = 0.99);

struct InterpolationResult {
  double value;
  double variance;  // sum of squared weights times cell variances
};

// One time slice of a field.
struct FieldSlice {
  double time = 0;
  std::size_t knot = 0;
  SpaceBox box;
  std::vector<double> values, std_error;
  std::vector<std::uint64_t> samples;
  std::vector<std::uint8_t> mask;

  // Multilinear over cell centers, using only valid corners (renormalized). Empty when the
  // cell containing x is invalid or x lies outside the box.
  std::optional<InterpolationResult> interpolate(std::span<const double> x) const;
  std::size_t valid_count() const;
};

struct ScalarField {
  TimeGrid grid;
  SpaceBox box;
  std::vector<double> values, std_error;
  std::vector<std::uint64_t> samples;
  std::vector<std::uint8_t> mask;

  ScalarField() = default;
  ScalarField(TimeGrid g, SpaceBox b);

  std::size_t rows() const { return grid.knots(); }
  std::size_t cells() const { return box.total_cells(); }
  std::size_t at(std::size_t row, std::size_t cell) const { return row * cells() + cell; }
  bool valid(std::size_t row, std::size_t cell) const { return mask[at(row, cell)] != 0; }
  double value(std::size_t row, std::size_t cell) const { return values[at(row, cell)]; }

  std::optional<InterpolationResult> interpolate(std::size_t row, std::span<const double> x) const;
  FieldSlice slice(std::size_t row) const;
  void set_slice(std::size_t row, const FieldSlice& s);
  std::size_t valid_count() const;
  double max_valid() const;
};

struct VectorFieldEstimate {
  TimeGrid grid;
  SpaceBox box;
  std::size_t components = 1;
  std::vector<double> values, std_error;  // rows * cells * components
  std::vector<std::uint64_t> samples;     // rows * cells
  std::vector<std::uint8_t> mask;

  VectorFieldEstimate() = default;
  VectorFieldEstimate(TimeGrid g, SpaceBox b, std::size_t comps);

  std::size_t rows() const { return grid.knots(); }
  std::size_t cells() const { return box.total_cells(); }
  std::size_t at(std::size_t row, std::size_t cell) const { return row * cells() + cell; }
  bool valid(std::size_t row, std::size_t cell) const { return mask[at(row, cell)] != 0; }
  double value(std::size_t row, std::size_t cell, std::size_t comp) const {
    return values[at(row, cell) * components + comp];
  }
  double error(std::size_t row, std::size_t cell, std::size_t comp) const {
    return std_error[at(row, cell) * components + comp];
  }
  // Per-component interpolation; out_var may be empty.
  bool interpolate(std::size_t row, std::span<const double> x, std::span<double> out,
                   std::span<double> out_var) const;
  std::size_t valid_count() const;
};

void write_csv(const ScalarField& f, std::ostream& os);
void write_csv(const VectorFieldEstimate& f, std::ostream& os);
void write_binary(const ScalarField& f, std::ostream& os);
ScalarField read_binary_field(std::istream& is);

}  // namespace fklab
