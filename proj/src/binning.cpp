#include "fklab/binning.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "fklab/errors.hpp"

namespace fklab {

std::size_t table_doubles(const TableShape& s) {
  const std::size_t p1 = s.regressors + 1;
  return s.rows * s.cells * (1 + 2 * p1 * p1 + p1 * s.responses + s.responses);
}

std::size_t chunk_count(std::size_t n, std::size_t doubles) {
  constexpr std::size_t max_chunks = 64, budget = std::size_t{1} << 24;
  std::size_t k = std::min(max_chunks, std::max<std::size_t>(1, n / 512));
  if (doubles > 0) k = std::min(k, std::max<std::size_t>(1, budget / doubles));
  return k;
}

CellTable::CellTable(const TableShape& shape) : shape_(shape), p1_(shape.regressors + 1) {
  stride_ = 1 + 2 * p1_ * p1_ + p1_ * shape_.responses + shape_.responses;
  data_.assign(shape_.rows * shape_.cells * stride_, 0.0);
}

void CellTable::add(std::size_t row, std::size_t cell, double w, const double* z, const double* y) {
  double* d = data_.data() + offset(row, cell);
  const std::size_t p1 = p1_, q = shape_.responses;
  d[0] += 1;
  double* A = d + 1;
  double* A2 = A + p1 * p1;
  double* B = A2 + p1 * p1;
  double* syy = B + p1 * q;
  const double w2 = w * w;
  for (std::size_t i = 0; i < p1; ++i) {
    const double xi = i == 0 ? 1.0 : z[i - 1];
    for (std::size_t j = 0; j < p1; ++j) {
      const double xj = j == 0 ? 1.0 : z[j - 1];
      A[i * p1 + j] += w * xi * xj;
      A2[i * p1 + j] += w2 * xi * xj;
    }
    for (std::size_t r = 0; r < q; ++r) B[i * q + r] += w * xi * y[r];
  }
  for (std::size_t r = 0; r < q; ++r) syy[r] += w * y[r] * y[r];
}

void CellTable::merge(const CellTable& other) {
  if (other.data_.size() != data_.size()) fail(ErrorCode::InvalidArgument, "merging tables of different shapes");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

double CellTable::mean(std::size_t row, std::size_t cell, std::size_t r) const {
  const double* d = data_.data() + offset(row, cell);
  const double* B = d + 1 + 2 * p1_ * p1_;
  return B[r] / d[1];
}

CellFit CellTable::fit(std::size_t row, std::size_t cell) const {
  const double* d = data_.data() + offset(row, cell);
  const std::size_t p1 = p1_, p = p1 - 1, q = shape_.responses;
  const double* A = d + 1;
  const double* A2 = A + p1 * p1;
  const double* B = A2 + p1 * p1;
  const double* syy = B + p1 * q;
  CellFit f;
  f.count = d[0];
  f.sum_w = A[0];
  f.ess = A2[0] > 0 ? A[0] * A[0] / A2[0] : 0.0;
  if (f.count < 1 || !(f.sum_w > 0)) return f;
  const double sw = A[0], n = f.count;
  f.coef.assign(p1 * q, 0.0);
  f.std_error.assign(p1 * q, std::numeric_limits<double>::infinity());

  if (p == 0) {
    for (std::size_t r = 0; r < q; ++r) {
      const double m = B[r] / sw;
      f.coef[r] = m;
      if (n > 1) {
        const double ss = std::max(0.0, syy[r] - m * B[r]);
        const double s2 = ss / sw * n / (n - 1);
        f.std_error[r] = std::sqrt(s2 * A2[0] / (sw * sw));
      }
    }
    f.ok = true;
    return f;
  }

  // Centered normal equations keep the intercept exact when responses are constant.
  Eigen::VectorXd zbar(p);
  for (std::size_t j = 0; j < p; ++j) zbar[j] = A[j + 1] / sw;
  Eigen::MatrixXd czz(p, p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) czz(i, j) = A[(i + 1) * p1 + j + 1] / sw - zbar[i] * zbar[j];
  f.z_cov.assign(czz.data(), czz.data() + p * p);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(czz, Eigen::EigenvaluesOnly);
  const double lmax = es.eigenvalues().maxCoeff(), lmin = es.eigenvalues().minCoeff();
  if (!(lmax > 0) || lmin <= 1e-12 * lmax || n <= static_cast<double>(p1)) return f;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(czz);
  Eigen::Map<const Eigen::MatrixXd> Am(A, p1, p1), A2m(A2, p1, p1);
  const Eigen::MatrixXd Ainv = Am.inverse();
  const Eigen::MatrixXd sandwich = Ainv * A2m * Ainv;
  for (std::size_t r = 0; r < q; ++r) {
    const double ybar = B[r] / sw;
    Eigen::VectorXd czy(p);
    for (std::size_t j = 0; j < p; ++j) czy[j] = B[(j + 1) * q + r] / sw - zbar[j] * ybar;
    const Eigen::VectorXd slope = ldlt.solve(czy);
    f.coef[r] = ybar - slope.dot(zbar);
    for (std::size_t j = 0; j < p; ++j) f.coef[(j + 1) * q + r] = slope[j];
    double fitted = 0;
    for (std::size_t j = 0; j < p1; ++j) fitted += f.coef[j * q + r] * B[j * q + r];
    const double ss = std::max(0.0, syy[r] - fitted);
    const double s2 = ss / sw * n / (n - static_cast<double>(p1));
    for (std::size_t j = 0; j < p1; ++j) f.std_error[j * q + r] = std::sqrt(std::max(0.0, s2 * sandwich(j, j)));
  }
  f.ok = true;
  return f;
}

}  // namespace fklab
