#include "conforma/matrix.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace conforma {

void Matrix::push_row(std::span<const double> r) {
  if (rows_ == 0) {
    cols_ = static_cast<int>(r.size());
  } else if (static_cast<int>(r.size()) != cols_) {
    throw std::invalid_argument("Matrix::push_row: row length mismatch");
  }
  data_.insert(data_.end(), r.begin(), r.end());
  ++rows_;
}

Matrix Matrix::gather(std::span<const int> idx) const {
  Matrix out(static_cast<int>(idx.size()), cols_);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(static_cast<int>(i)).begin());
  }
  return out;
}

bool lex_less(std::span<const double> a, std::span<const double> b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

std::vector<int> canonical_order(const Matrix& x) {
  std::vector<int> idx(x.rows());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int i, int j) { return lex_less(x.row(i), x.row(j)); });
  return idx;
}

std::vector<int> canonical_order(const Matrix& x, std::span<const int> labels) {
  std::vector<int> idx(x.rows());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int i, int j) {
    if (labels[i] != labels[j]) return labels[i] < labels[j];
    return lex_less(x.row(i), x.row(j));
  });
  return idx;
}

std::uint64_t canonical_hash(const Matrix& x) {
  const std::vector<int> order = canonical_order(x);
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto eat = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001B3ULL;
    }
  };
  for (int i : order) {
    auto r = x.row(i);
    eat(r.data(), r.size() * sizeof(double));
  }
  return h;
}

double euclidean_sq(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace conforma
