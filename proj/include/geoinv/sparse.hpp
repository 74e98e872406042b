#ifndef GEOINV_SPARSE_HPP
#define GEOINV_SPARSE_HPP

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "geoinv/core.hpp"

namespace geoinv {

template <typename T>
struct Triplet {
  Index row;
  Index col;
  T value;
};

/// Column-major dense block of right-hand sides / solutions.
template <typename T>
struct DenseBlock {
  Index rows = 0;
  Index cols = 0;
  std::vector<T> data;

  DenseBlock() = default;
  DenseBlock(Index r, Index c) : rows(r), cols(c), data(static_cast<std::size_t>(r * c), T{}) {}

  std::span<T> col(Index j) { return {data.data() + j * rows, static_cast<std::size_t>(rows)}; }
  std::span<const T> col(Index j) const {
    return {data.data() + j * rows, static_cast<std::size_t>(rows)};
  }
  T& operator()(Index i, Index j) { return data[static_cast<std::size_t>(j * rows + i)]; }
  const T& operator()(Index i, Index j) const { return data[static_cast<std::size_t>(j * rows + i)]; }
};

/// Compressed sparse row matrix. Column indices are sorted and unique per row.
template <typename T>
class CsrMatrix {
 public:
  CsrMatrix() = default;

  CsrMatrix(Index rows, Index cols, std::vector<Index> row_ptr, std::vector<Index> col_idx,
            std::vector<T> values)
      : rows_(rows),
        cols_(cols),
        row_ptr_(std::move(row_ptr)),
        col_idx_(std::move(col_idx)),
        values_(std::move(values)) {
    require(static_cast<Index>(row_ptr_.size()) == rows_ + 1, Errc::dimension_mismatch,
            "row offsets length must be rows+1");
    require(col_idx_.size() == values_.size(), Errc::dimension_mismatch,
            "column index and value arrays differ in length");
  }

  /// Duplicate entries are summed.
  static CsrMatrix from_triplets(Index rows, Index cols, std::vector<Triplet<T>> entries) {
    for (const auto& t : entries) {
      require(t.row >= 0 && t.row < rows && t.col >= 0 && t.col < cols,
              Errc::dimension_mismatch, "triplet index out of range");
    }
    std::sort(entries.begin(), entries.end(), [](const Triplet<T>& a, const Triplet<T>& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    std::vector<Index> ptr(static_cast<std::size_t>(rows + 1), 0);
    std::vector<Index> idx;
    std::vector<T> val;
    idx.reserve(entries.size());
    val.reserve(entries.size());
    for (std::size_t k = 0; k < entries.size();) {
      const Index r = entries[k].row;
      const Index c = entries[k].col;
      T sum{};
      while (k < entries.size() && entries[k].row == r && entries[k].col == c) {
        sum += entries[k].value;
        ++k;
      }
      idx.push_back(c);
      val.push_back(sum);
      ++ptr[static_cast<std::size_t>(r + 1)];
    }
    std::partial_sum(ptr.begin(), ptr.end(), ptr.begin());
    return CsrMatrix(rows, cols, std::move(ptr), std::move(idx), std::move(val));
  }

  static CsrMatrix identity(Index n) { return diagonal(std::vector<T>(static_cast<std::size_t>(n), T{1})); }

  static CsrMatrix diagonal(std::span<const T> d) {
    const Index n = static_cast<Index>(d.size());
    std::vector<Index> ptr(static_cast<std::size_t>(n + 1));
    std::iota(ptr.begin(), ptr.end(), Index{0});
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    return CsrMatrix(n, n, std::move(ptr), std::move(idx), std::vector<T>(d.begin(), d.end()));
  }
  static CsrMatrix diagonal(const std::vector<T>& d) { return diagonal(std::span<const T>(d)); }

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  Index nnz() const { return static_cast<Index>(values_.size()); }
  const std::vector<Index>& row_ptr() const { return row_ptr_; }
  const std::vector<Index>& col_idx() const { return col_idx_; }
  const std::vector<T>& values() const { return values_; }
  std::vector<T>& values() { return values_; }

  T at(Index i, Index j) const {
    const auto b = col_idx_.begin() + row_ptr_[i];
    const auto e = col_idx_.begin() + row_ptr_[i + 1];
    const auto it = std::lower_bound(b, e, j);
    if (it == e || *it != j) return T{};
    return values_[static_cast<std::size_t>(it - col_idx_.begin())];
  }

  std::vector<T> diagonal_values() const {
    std::vector<T> d(static_cast<std::size_t>(std::min(rows_, cols_)), T{});
    for (Index i = 0; i < static_cast<Index>(d.size()); ++i) d[i] = at(i, i);
    return d;
  }

  /// y = A x
  void multiply(std::span<const T> x, std::span<T> y) const {
    require(static_cast<Index>(x.size()) == cols_ && static_cast<Index>(y.size()) == rows_,
            Errc::dimension_mismatch, "spmv operand shapes do not conform");
    for (Index i = 0; i < rows_; ++i) {
      T s{};
      for (Index k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) s += values_[k] * x[col_idx_[k]];
      y[i] = s;
    }
  }

  std::vector<T> operator*(std::span<const T> x) const {
    std::vector<T> y(static_cast<std::size_t>(rows_));
    multiply(x, y);
    return y;
  }
  std::vector<T> operator*(const std::vector<T>& x) const { return (*this) * std::span<const T>(x); }

  /// y = A^T x (plain transpose, no conjugation).
  std::vector<T> transpose_multiply(std::span<const T> x) const {
    require(static_cast<Index>(x.size()) == rows_, Errc::dimension_mismatch,
            "transposed spmv operand shape does not conform");
    std::vector<T> y(static_cast<std::size_t>(cols_), T{});
    for (Index i = 0; i < rows_; ++i) {
      const T xi = x[i];
      for (Index k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) y[col_idx_[k]] += values_[k] * xi;
    }
    return y;
  }
  std::vector<T> transpose_multiply(const std::vector<T>& x) const {
    return transpose_multiply(std::span<const T>(x));
  }

  /// Block product, one column at a time so each column is bitwise identical
  /// to the single-vector product.
  DenseBlock<T> multiply(const DenseBlock<T>& x) const {
    require(x.rows == cols_, Errc::dimension_mismatch, "block spmv operand shapes do not conform");
    DenseBlock<T> y(rows_, x.cols);
    for (Index j = 0; j < x.cols; ++j) multiply(x.col(j), y.col(j));
    return y;
  }

  CsrMatrix transpose() const {
    std::vector<Triplet<T>> t;
    t.reserve(values_.size());
    for (Index i = 0; i < rows_; ++i)
      for (Index k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) t.push_back({col_idx_[k], i, values_[k]});
    return from_triplets(cols_, rows_, std::move(t));
  }

  /// diag(left) * A * diag(right); either may be empty (identity).
  CsrMatrix scaled(std::span<const T> left, std::span<const T> right) const {
    CsrMatrix r = *this;
    for (Index i = 0; i < rows_; ++i)
      for (Index k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
        if (!left.empty()) r.values_[k] *= left[i];
        if (!right.empty()) r.values_[k] *= right[col_idx_[k]];
      }
    return r;
  }

  std::vector<std::vector<T>> to_dense() const {
    std::vector<std::vector<T>> d(static_cast<std::size_t>(rows_),
                                  std::vector<T>(static_cast<std::size_t>(cols_), T{}));
    for (Index i = 0; i < rows_; ++i)
      for (Index k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) d[i][col_idx_[k]] = values_[k];
    return d;
  }

  template <typename U>
  CsrMatrix<U> cast() const {
    return CsrMatrix<U>(rows_, cols_, row_ptr_, col_idx_, std::vector<U>(values_.begin(), values_.end()));
  }

 private:
  Index rows_ = 0;
  Index cols_ = 0;
  std::vector<Index> row_ptr_{0};
  std::vector<Index> col_idx_;
  std::vector<T> values_;
};

using SparseMatrix = CsrMatrix<double>;
using ComplexSparseMatrix = CsrMatrix<Complex>;

/// C = A * B
template <typename T>
CsrMatrix<T> multiply(const CsrMatrix<T>& a, const CsrMatrix<T>& b) {
  require(a.cols() == b.rows(), Errc::dimension_mismatch, "sparse product shapes do not conform");
  std::vector<Triplet<T>> t;
  std::vector<T> acc(static_cast<std::size_t>(b.cols()), T{});
  std::vector<char> used(static_cast<std::size_t>(b.cols()), 0);
  std::vector<Index> touched;
  for (Index i = 0; i < a.rows(); ++i) {
    touched.clear();
    for (Index ka = a.row_ptr()[i]; ka < a.row_ptr()[i + 1]; ++ka) {
      const Index j = a.col_idx()[ka];
      const T av = a.values()[ka];
      for (Index kb = b.row_ptr()[j]; kb < b.row_ptr()[j + 1]; ++kb) {
        const Index c = b.col_idx()[kb];
        if (!used[c]) {
          used[c] = 1;
          touched.push_back(c);
        }
        acc[c] += av * b.values()[kb];
      }
    }
    for (Index c : touched) {
      t.push_back({i, c, acc[c]});
      acc[c] = T{};
      used[c] = 0;
    }
  }
  return CsrMatrix<T>::from_triplets(a.rows(), b.cols(), std::move(t));
}

/// alpha*A + beta*B
template <typename T>
CsrMatrix<T> add(const CsrMatrix<T>& a, const CsrMatrix<T>& b, T alpha = T{1}, T beta = T{1}) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), Errc::dimension_mismatch,
          "sparse sum shapes do not conform");
  std::vector<Triplet<T>> t;
  t.reserve(static_cast<std::size_t>(a.nnz() + b.nnz()));
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index k = a.row_ptr()[i]; k < a.row_ptr()[i + 1]; ++k)
      t.push_back({i, a.col_idx()[k], alpha * a.values()[k]});
    for (Index k = b.row_ptr()[i]; k < b.row_ptr()[i + 1]; ++k)
      t.push_back({i, b.col_idx()[k], beta * b.values()[k]});
  }
  return CsrMatrix<T>::from_triplets(a.rows(), a.cols(), std::move(t));
}

/// Largest absolute entry of A - A^T.
template <typename T>
double asymmetry(const CsrMatrix<T>& a) {
  double m = 0.0;
  for (Index i = 0; i < a.rows(); ++i)
    for (Index k = a.row_ptr()[i]; k < a.row_ptr()[i + 1]; ++k)
      m = std::max(m, std::abs(a.values()[k] - a.at(a.col_idx()[k], i)));
  return m;
}

}  // namespace geoinv

#endif  // GEOINV_SPARSE_HPP
