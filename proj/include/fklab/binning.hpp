#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <vector>

#include "fklab/diffusion.hpp"

namespace fklab {

// Per (row, cell) weighted least-squares sufficient statistics for the design [1, z] and
// q responses. With no regressors this is a weighted mean.
struct TableShape {
  std::size_t rows = 0, cells = 0;
  std::size_t regressors = 0;  // p
  std::size_t responses = 1;   // q
};

struct CellFit {
  bool ok = false;
  double count = 0, sum_w = 0, ess = 0;
  std::vector<double> coef;       // (p+1) * q, coefficient-major: coef[j*q + r]
  std::vector<double> std_error;  // same layout
  std::vector<double> z_cov;      // weighted covariance of regressors, p*p
};

class CellTable {
 public:
  CellTable() = default;
  explicit CellTable(const TableShape& shape);

  const TableShape& shape() const { return shape_; }
  void add(std::size_t row, std::size_t cell, double w, const double* z, const double* y);
  void merge(const CellTable& other);

  double count(std::size_t row, std::size_t cell) const { return data_[offset(row, cell)]; }
  double sum_w(std::size_t row, std::size_t cell) const { return data_[offset(row, cell) + 1]; }
  double sum_w2(std::size_t row, std::size_t cell) const { return data_[offset(row, cell) + 1 + p1_ * p1_]; }
  // Weighted mean of response r (no regressors needed).
  double mean(std::size_t row, std::size_t cell, std::size_t r = 0) const;

  // Solves the cell regression. ok is false when the cell is empty or singular.
  CellFit fit(std::size_t row, std::size_t cell) const;

 private:
  std::size_t offset(std::size_t row, std::size_t cell) const { return (row * shape_.cells + cell) * stride_; }

  TableShape shape_;
  std::size_t p1_ = 1, stride_ = 0;
  std::vector<double> data_;
};

// Number of accumulation chunks for a reduction over n paths. Depends only on the problem
// size, never on the thread count, so merged results are reproducible.
std::size_t chunk_count(std::size_t n, std::size_t table_doubles);
std::size_t table_doubles(const TableShape& shape);

// Runs fn(tables, begin, end) over fixed path chunks, one private table set per chunk, then
// merges the chunk tables in chunk order. fn must only touch its own tables.
template <class ChunkFn>
std::vector<CellTable> accumulate(std::size_t n, const std::vector<TableShape>& shapes, ChunkFn&& fn,
                                  Execution exec = Execution::Parallel) {
  auto fresh = [&] {
    std::vector<CellTable> t;
    t.reserve(shapes.size());
    for (const auto& s : shapes) t.emplace_back(s);
    return t;
  };
  std::size_t doubles = 0;
  for (const auto& s : shapes) doubles += table_doubles(s);
  const std::size_t K = chunk_count(n, doubles);
  std::vector<std::vector<CellTable>> parts(K);
  std::vector<std::exception_ptr> errors(K);
  auto run_chunk = [&](std::size_t c) {
    try {
      parts[c] = fresh();
      fn(parts[c], n * c / K, n * (c + 1) / K);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  // Serial execution walks the same chunk plan, so both modes agree bit for bit.
  if (exec == Execution::Serial) {
    for (std::size_t c = 0; c < K; ++c) run_chunk(c);
  } else {
    const auto k_end = static_cast<std::int64_t>(K);
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t k = 0; k < k_end; ++k) run_chunk(static_cast<std::size_t>(k));
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (std::size_t c = 1; c < K; ++c)
    for (std::size_t i = 0; i < shapes.size(); ++i) parts[0][i].merge(parts[c][i]);
  return std::move(parts[0]);
}

}  // namespace fklab
