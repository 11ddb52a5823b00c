#include "fklab/field.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>

#include "fklab/errors.hpp"

namespace fklab {

namespace {

struct Corner {
  std::size_t cell;
  double weight;
};

// Corner cells and weights of the multilinear stencil around x. Returns the number of
// corners, or 0 when x is outside the box or its own cell fails `valid`.
template <class Valid>
std::size_t stencil(const SpaceBox& box, std::span<const double> x, Valid&& valid, std::array<Corner, 8>& out) {
  const auto own = box.locate(x);
  if (!own || !valid(*own)) return 0;
  const std::size_t n = box.dim();
  std::array<std::size_t, 3> base{};
  std::array<double, 3> frac{};
  for (std::size_t a = 0; a < n; ++a) {
    if (box.cells[a] == 1) {
      base[a] = 0;
      frac[a] = 0;
      continue;
    }
    const double u = (x[a] - box.lo[a]) / box.width(a) - 0.5;
    const double fl = std::floor(u);
    const double i0 = std::clamp(fl, 0.0, static_cast<double>(box.cells[a] - 2));
    base[a] = static_cast<std::size_t>(i0);
    frac[a] = std::clamp(u - i0, 0.0, 1.0);
  }
  std::size_t count = 0;
  double total = 0;
  for (std::size_t corner = 0; corner < (std::size_t{1} << n); ++corner) {
    double w = 1;
    std::size_t flat = 0;
    for (std::size_t a = 0; a < n; ++a) {
      const bool up = (corner >> a) & 1U;
      w *= up ? frac[a] : 1 - frac[a];
      flat = flat * box.cells[a] + base[a] + (up ? 1 : 0);
    }
    if (w == 0 || !valid(flat)) continue;
    out[count++] = {flat, w};
    total += w;
  }
  for (std::size_t i = 0; i < count; ++i) out[i].weight /= total;
  return count;
}

void fmt(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  os << buf;
}

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) fail(ErrorCode::IoError, "truncated field stream");
  return v;
}

}  // namespace

SpaceBox SpaceBox::uniform(std::size_t dim, double lo, double hi, std::size_t cells_per_axis) {
  SpaceBox b{std::vector<double>(dim, lo), std::vector<double>(dim, hi), std::vector<std::size_t>(dim, cells_per_axis)};
  b.validate();
  return b;
}

void SpaceBox::validate() const {
  if (lo.empty() || lo.size() != hi.size() || lo.size() != cells.size())
    fail(ErrorCode::InvalidArgument, "space box axes are inconsistent");
  if (lo.size() > 3) fail(ErrorCode::InvalidArgument, "field storage supports dimension <= 3");
  for (std::size_t a = 0; a < lo.size(); ++a)
    if (!(hi[a] > lo[a]) || cells[a] == 0 || !std::isfinite(lo[a]) || !std::isfinite(hi[a]))
      fail(ErrorCode::InvalidArgument, "space box axis " + std::to_string(a) + " is degenerate");
}

std::size_t SpaceBox::total_cells() const {
  std::size_t c = 1;
  for (auto k : cells) c *= k;
  return c;
}

std::optional<std::size_t> SpaceBox::locate(std::span<const double> x) const {
  std::size_t flat = 0;
  for (std::size_t a = 0; a < dim(); ++a) {
    if (!(x[a] >= lo[a]) || !(x[a] <= hi[a])) return std::nullopt;
    auto i = static_cast<std::size_t>((x[a] - lo[a]) / width(a));
    if (i >= cells[a]) i = cells[a] - 1;
    flat = flat * cells[a] + i;
  }
  return flat;
}

void SpaceBox::center(std::size_t flat, std::span<double> out) const {
  for (std::size_t a = dim(); a-- > 0;) {
    const std::size_t i = flat % cells[a];
    flat /= cells[a];
    out[a] = lo[a] + (static_cast<double>(i) + 0.5) * width(a);
  }
}

std::vector<double> SpaceBox::center(std::size_t flat) const {
  std::vector<double> c(dim());
  center(flat, c);
  return c;
}

SpaceBox auto_box(const PathEnsemble& e, std::size_t cells_per_axis, double coverage) {
  const std::size_t n = e.dim(), total = e.count() * e.knots();
  const std::size_t stride = std::max<std::size_t>(1, total / 1'000'000);
  SpaceBox box{std::vector<double>(n), std::vector<double>(n), std::vector<std::size_t>(n, cells_per_axis)};
  std::vector<double> v;
  v.reserve(total / stride + 1);
  const double tail = 0.5 * (1 - coverage);
  for (std::size_t a = 0; a < n; ++a) {
    v.clear();
    for (std::size_t s = 0; s < total; s += stride) v.push_back(e.data()[s * n + a]);
    auto q = [&](double p) {
      auto idx = static_cast<std::size_t>(p * static_cast<double>(v.size() - 1));
      std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(idx), v.end());
      return v[idx];
    };
    double lo = q(tail), hi = q(1 - tail);
    if (hi - lo < 1e-9) {
      lo -= 0.5;
      hi += 0.5;
    }
    box.lo[a] = lo;
    box.hi[a] = hi;
  }
  box.validate();
  return box;
}

std::optional<InterpolationResult> FieldSlice::interpolate(std::span<const double> x) const {
  std::array<Corner, 8> c{};
  const std::size_t k = stencil(box, x, [&](std::size_t cell) { return mask[cell] != 0; }, c);
  if (k == 0) return std::nullopt;
  InterpolationResult r{0, 0};
  for (std::size_t i = 0; i < k; ++i) {
    r.value += c[i].weight * values[c[i].cell];
    r.variance += c[i].weight * c[i].weight * std_error[c[i].cell] * std_error[c[i].cell];
  }
  return r;
}

std::size_t FieldSlice::valid_count() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)); }

ScalarField::ScalarField(TimeGrid g, SpaceBox b) : grid(std::move(g)), box(std::move(b)) {
  box.validate();
  const std::size_t size = rows() * cells();
  values.assign(size, 0.0);
  std_error.assign(size, 0.0);
  samples.assign(size, 0);
  mask.assign(size, 0);
}

std::optional<InterpolationResult> ScalarField::interpolate(std::size_t row, std::span<const double> x) const {
  std::array<Corner, 8> c{};
  const std::size_t off = row * cells();
  const std::size_t k = stencil(box, x, [&](std::size_t cell) { return mask[off + cell] != 0; }, c);
  if (k == 0) return std::nullopt;
  InterpolationResult r{0, 0};
  for (std::size_t i = 0; i < k; ++i) {
    const double se = std_error[off + c[i].cell];
    r.value += c[i].weight * values[off + c[i].cell];
    r.variance += c[i].weight * c[i].weight * se * se;
  }
  return r;
}

FieldSlice ScalarField::slice(std::size_t row) const {
  FieldSlice s;
  s.time = grid.time(row);
  s.knot = row;
  s.box = box;
  const auto b = static_cast<std::ptrdiff_t>(row * cells()), e = b + static_cast<std::ptrdiff_t>(cells());
  s.values.assign(values.begin() + b, values.begin() + e);
  s.std_error.assign(std_error.begin() + b, std_error.begin() + e);
  s.samples.assign(samples.begin() + b, samples.begin() + e);
  s.mask.assign(mask.begin() + b, mask.begin() + e);
  return s;
}

void ScalarField::set_slice(std::size_t row, const FieldSlice& s) {
  if (!(s.box == box)) fail(ErrorCode::InvalidArgument, "slice box differs from field box");
  const std::size_t b = row * cells();
  std::copy(s.values.begin(), s.values.end(), values.begin() + static_cast<std::ptrdiff_t>(b));
  std::copy(s.std_error.begin(), s.std_error.end(), std_error.begin() + static_cast<std::ptrdiff_t>(b));
  std::copy(s.samples.begin(), s.samples.end(), samples.begin() + static_cast<std::ptrdiff_t>(b));
  std::copy(s.mask.begin(), s.mask.end(), mask.begin() + static_cast<std::ptrdiff_t>(b));
}

std::size_t ScalarField::valid_count() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)); }

double ScalarField::max_valid() const {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < values.size(); ++i)
    if (mask[i]) m = std::max(m, values[i]);
  return m;
}

VectorFieldEstimate::VectorFieldEstimate(TimeGrid g, SpaceBox b, std::size_t comps)
    : grid(std::move(g)), box(std::move(b)), components(comps) {
  box.validate();
  const std::size_t size = rows() * cells();
  values.assign(size * comps, 0.0);
  std_error.assign(size * comps, 0.0);
  samples.assign(size, 0);
  mask.assign(size, 0);
}

bool VectorFieldEstimate::interpolate(std::size_t row, std::span<const double> x, std::span<double> out,
                                      std::span<double> out_var) const {
  std::array<Corner, 8> c{};
  const std::size_t off = row * cells();
  const std::size_t k = stencil(box, x, [&](std::size_t cell) { return mask[off + cell] != 0; }, c);
  if (k == 0) return false;
  for (std::size_t j = 0; j < components; ++j) {
    double v = 0, var = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t idx = (off + c[i].cell) * components + j;
      v += c[i].weight * values[idx];
      var += c[i].weight * c[i].weight * std_error[idx] * std_error[idx];
    }
    out[j] = v;
    if (!out_var.empty()) out_var[j] = var;
  }
  return true;
}

std::size_t VectorFieldEstimate::valid_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
}

void write_csv(const ScalarField& f, std::ostream& os) {
  os << "t";
  for (std::size_t a = 0; a < f.box.dim(); ++a) os << ",x" << a;
  os << ",value,std_error,samples,valid\n";
  std::vector<double> c(f.box.dim());
  for (std::size_t r = 0; r < f.rows(); ++r)
    for (std::size_t cell = 0; cell < f.cells(); ++cell) {
      f.box.center(cell, c);
      fmt(os, f.grid.time(r));
      for (double v : c) os << ',', fmt(os, v);
      const std::size_t i = f.at(r, cell);
      os << ',', fmt(os, f.values[i]);
      os << ',', fmt(os, f.std_error[i]);
      os << ',' << f.samples[i] << ',' << int(f.mask[i]) << '\n';
    }
}

void write_csv(const VectorFieldEstimate& f, std::ostream& os) {
  os << "t";
  for (std::size_t a = 0; a < f.box.dim(); ++a) os << ",x" << a;
  for (std::size_t j = 0; j < f.components; ++j) os << ",v" << j;
  for (std::size_t j = 0; j < f.components; ++j) os << ",se" << j;
  os << ",samples,valid\n";
  std::vector<double> c(f.box.dim());
  for (std::size_t r = 0; r < f.rows(); ++r)
    for (std::size_t cell = 0; cell < f.cells(); ++cell) {
      f.box.center(cell, c);
      fmt(os, f.grid.time(r));
      for (double v : c) os << ',', fmt(os, v);
      for (std::size_t j = 0; j < f.components; ++j) os << ',', fmt(os, f.value(r, cell, j));
      for (std::size_t j = 0; j < f.components; ++j) os << ',', fmt(os, f.error(r, cell, j));
      os << ',' << f.samples[f.at(r, cell)] << ',' << int(f.mask[f.at(r, cell)]) << '\n';
    }
}

void write_binary(const ScalarField& f, std::ostream& os) {
  put<std::uint64_t>(os, f.box.dim());
  put<std::uint64_t>(os, f.rows());
  put<std::uint64_t>(os, f.cells());
  for (double t : f.grid.times()) put(os, t);
  for (std::size_t a = 0; a < f.box.dim(); ++a) {
    put(os, f.box.lo[a]);
    put(os, f.box.hi[a]);
    put<std::uint64_t>(os, f.box.cells[a]);
  }
  for (double v : f.values) put(os, v);
  for (double v : f.std_error) put(os, v);
  for (auto v : f.samples) put(os, v);
  for (auto v : f.mask) put(os, v);
  if (!os) fail(ErrorCode::IoError, "failed writing field");
}

ScalarField read_binary_field(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  const auto rows = get<std::uint64_t>(is);
  const auto cells = get<std::uint64_t>(is);
  std::vector<double> t(rows);
  for (auto& v : t) v = get<double>(is);
  SpaceBox box;
  for (std::size_t a = 0; a < n; ++a) {
    box.lo.push_back(get<double>(is));
    box.hi.push_back(get<double>(is));
    box.cells.push_back(get<std::uint64_t>(is));
  }
  ScalarField f(TimeGrid(std::move(t)), std::move(box));
  if (f.cells() != cells) fail(ErrorCode::IoError, "field header cell count mismatch");
  for (auto& v : f.values) v = get<double>(is);
  for (auto& v : f.std_error) v = get<double>(is);
  for (auto& v : f.samples) v = get<std::uint64_t>(is);
  for (auto& v : f.mask) v = get<std::uint8_t>(is);
  return f;
}

}  // namespace fklab
