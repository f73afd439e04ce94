#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace conforma {

/// Dense row-major matrix of doubles. Rows are observations, columns are
/// features. All algorithms in the library operate on spans into this
/// storage; the matrix itself is immutable once filled.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols) : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, 0.0) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool empty() const { return rows_ == 0; }

  std::span<const double> row(int i) const {
    return {data_.data() + static_cast<std::size_t>(i) * cols_, static_cast<std::size_t>(cols_)};
  }
  std::span<double> row(int i) {
    return {data_.data() + static_cast<std::size_t>(i) * cols_, static_cast<std::size_t>(cols_)};
  }
  double operator()(int i, int j) const { return data_[static_cast<std::size_t>(i) * cols_ + j]; }
  double& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * cols_ + j]; }

  /// Append a row; fixes the column count on first use.
  void push_row(std::span<const double> r);

  /// New matrix holding rows[i] = this->row(idx[i]).
  Matrix gather(std::span<const int> idx) const;

  const std::vector<double>& data() const { return data_; }

  bool operator==(const Matrix& other) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

/// Strictly-less lexicographic comparison of two rows (exact doubles).
bool lex_less(std::span<const double> a, std::span<const double> b);

/// Indices of the rows of x in canonical (lexicographically sorted) order.
/// Fitting procedures traverse training data in this order so the fitted
/// model is an exact function of the training multiset, not of its input
/// ordering.
std::vector<int> canonical_order(const Matrix& x);

/// Canonical order for labeled rows: sort by (label, row).
std::vector<int> canonical_order(const Matrix& x, std::span<const int> labels);

/// FNV-1a hash of the rows' raw bytes taken in canonical order; used to
/// derive order-invariant seeds for randomized fits.
std::uint64_t canonical_hash(const Matrix& x);

double euclidean_sq(std::span<const double> a, std::span<const double> b);

}  // namespace conforma
