#ifndef GEOINV_CHOLESKY_HPP
#define GEOINV_CHOLESKY_HPP

#include <algorithm>
#include <deque>
#include <numeric>
#include <string>
#include <vector>

#include "geoinv/sparse.hpp"

namespace geoinv {

/// Reverse Cuthill-McKee ordering of the symmetrized pattern of A.
/// Returns perm with perm[new] = old.
template <typename T>
std::vector<Index> reverse_cuthill_mckee(const CsrMatrix<T>& a) {
  const Index n = a.rows();
  std::vector<std::vector<Index>> adj(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    for (Index k = a.row_ptr()[i]; k < a.row_ptr()[i + 1]; ++k) {
      const Index j = a.col_idx()[k];
      if (j == i) continue;
      adj[i].push_back(j);
      adj[j].push_back(i);
    }
  for (auto& nb : adj) {
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
  }
  auto degree = [&](Index v) { return static_cast<Index>(adj[v].size()); };

  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::vector<Index> order;
  order.reserve(static_cast<std::size_t>(n));
  std::vector<Index> level(static_cast<std::size_t>(n), -1);

  // BFS returning the last level's min-degree node and the eccentricity.
  auto bfs_far = [&](Index root, const std::vector<char>& mask) {
    std::fill(level.begin(), level.end(), -1);
    std::deque<Index> q{root};
    level[root] = 0;
    Index far = root;
    while (!q.empty()) {
      const Index v = q.front();
      q.pop_front();
      if (level[v] > level[far] || (level[v] == level[far] && degree(v) < degree(far))) far = v;
      for (Index w : adj[v])
        if (!mask[w] && level[w] < 0) {
          level[w] = level[v] + 1;
          q.push_back(w);
        }
    }
    return std::pair{far, level[far]};
  };

  for (Index start = 0; start < n; ++start) {
    if (seen[start]) continue;
    // pseudo-peripheral node search
    Index root = start;
    auto [far, ecc] = bfs_far(root, seen);
    for (int it = 0; it < 8; ++it) {
      auto [far2, ecc2] = bfs_far(far, seen);
      if (ecc2 <= ecc) break;
      root = far;
      far = far2;
      ecc = ecc2;
    }
    root = far;
    std::deque<Index> q{root};
    seen[root] = 1;
    while (!q.empty()) {
      const Index v = q.front();
      q.pop_front();
      order.push_back(v);
      std::vector<Index> nbrs;
      for (Index w : adj[v])
        if (!seen[w]) nbrs.push_back(w);
      std::stable_sort(nbrs.begin(), nbrs.end(),
                       [&](Index x, Index y) { return degree(x) < degree(y); });
      for (Index w : nbrs) {
        seen[w] = 1;
        q.push_back(w);
      }
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

/// Envelope (profile) LDL^T factorization of a symmetric matrix after an RCM
/// reordering. For real scalars every pivot must be positive (SPD); for
/// complex scalars the factorization is of a complex-symmetric matrix with no
/// conjugation and no pivoting, so only a vanishing pivot is an error.
///
/// The envelope is closed under fill, so the factor lives in the same storage
/// as the permuted lower profile of A.
template <typename T>
class SparseLdlt {
 public:
  SparseLdlt() = default;

  explicit SparseLdlt(const CsrMatrix<T>& a) { factorize(a); }

  void factorize(const CsrMatrix<T>& a) {
    require(a.rows() == a.cols(), Errc::dimension_mismatch, "factorization needs a square matrix");
    n_ = a.rows();
    perm_ = reverse_cuthill_mckee(a);
    inv_perm_.assign(static_cast<std::size_t>(n_), 0);
    for (Index k = 0; k < n_; ++k) inv_perm_[perm_[k]] = k;

    // first column of the permuted lower profile, per row
    first_.assign(static_cast<std::size_t>(n_), 0);
    for (Index i = 0; i < n_; ++i) first_[i] = i;
    for (Index i = 0; i < n_; ++i)
      for (Index k = a.row_ptr()[i]; k < a.row_ptr()[i + 1]; ++k) {
        const Index pi = inv_perm_[i];
        const Index pj = inv_perm_[a.col_idx()[k]];
        const Index r = std::max(pi, pj);
        const Index c = std::min(pi, pj);
        first_[r] = std::min(first_[r], c);
      }
    offset_.assign(static_cast<std::size_t>(n_ + 1), 0);
    for (Index i = 0; i < n_; ++i) offset_[i + 1] = offset_[i] + (i - first_[i]);
    lower_.assign(static_cast<std::size_t>(offset_[n_]), T{});
    diag_.assign(static_cast<std::size_t>(n_), T{});

    for (Index i = 0; i < n_; ++i)
      for (Index k = a.row_ptr()[i]; k < a.row_ptr()[i + 1]; ++k) {
        const Index pi = inv_perm_[i];
        const Index pj = inv_perm_[a.col_idx()[k]];
        if (pi == pj) {
          diag_[pi] = a.values()[k];
        } else if (pj < pi) {
          entry(pi, pj) = a.values()[k];
        }
      }

    double scale = 0.0;
    for (const T& d : diag_) scale = std::max(scale, std::abs(d));
    const double tiny = 1e-14 * scale;

    std::vector<T> t(static_cast<std::size_t>(n_));
    for (Index i = 0; i < n_; ++i) {
      const Index fi = first_[i];
      T* row = lower_.data() + offset_[i] - fi;  // row[j] valid for fi <= j < i
      for (Index j = fi; j < i; ++j) {
        const Index fj = first_[j];
        const T* rj = lower_.data() + offset_[j] - fj;
        T s = row[j];
        for (Index k = std::max(fi, fj); k < j; ++k) s -= t[k] * rj[k];
        t[j] = s;
      }
      T d = diag_[i];
      for (Index j = fi; j < i; ++j) {
        const T l = t[j] / diag_[j];
        row[j] = l;
        d -= t[j] * l;
      }
      if constexpr (is_complex_v<T>) {
        if (std::abs(d) <= tiny)
          throw Error(Errc::breakdown, "zero pivot in complex-symmetric factorization at row " +
                                           std::to_string(perm_[i]));
      } else {
        if (!(d > 0.0))
          throw Error(Errc::not_spd,
                      "non-positive pivot " + std::to_string(d) + " at row " + std::to_string(perm_[i]));
      }
      diag_[i] = d;
    }
  }

  Index size() const { return n_; }
  Index factor_nnz() const { return static_cast<Index>(lower_.size()) + n_; }

  std::vector<T> solve(std::span<const T> b) const {
    require(static_cast<Index>(b.size()) == n_, Errc::dimension_mismatch, "rhs length mismatch");
    std::vector<T> y(static_cast<std::size_t>(n_));
    for (Index k = 0; k < n_; ++k) y[k] = b[perm_[k]];
    // L y = b
    for (Index i = 0; i < n_; ++i) {
      const Index fi = first_[i];
      const T* row = lower_.data() + offset_[i] - fi;
      T s = y[i];
      for (Index j = fi; j < i; ++j) s -= row[j] * y[j];
      y[i] = s;
    }
    for (Index i = 0; i < n_; ++i) y[i] /= diag_[i];
    // L^T x = y
    for (Index i = n_ - 1; i >= 0; --i) {
      const Index fi = first_[i];
      const T* row = lower_.data() + offset_[i] - fi;
      const T yi = y[i];
      for (Index j = fi; j < i; ++j) y[j] -= row[j] * yi;
    }
    std::vector<T> x(static_cast<std::size_t>(n_));
    for (Index k = 0; k < n_; ++k) x[perm_[k]] = y[k];
    return x;
  }
  std::vector<T> solve(const std::vector<T>& b) const { return solve(std::span<const T>(b)); }

  DenseBlock<T> solve(const DenseBlock<T>& b) const {
    DenseBlock<T> x(b.rows, b.cols);
    for (Index j = 0; j < b.cols; ++j) {
      auto c = solve(b.col(j));
      std::copy(c.begin(), c.end(), x.col(j).begin());
    }
    return x;
  }

 private:
  T& entry(Index i, Index j) { return lower_[static_cast<std::size_t>(offset_[i] + (j - first_[i]))]; }

  Index n_ = 0;
  std::vector<Index> perm_;
  std::vector<Index> inv_perm_;
  std::vector<Index> first_;
  std::vector<Index> offset_;
  std::vector<T> lower_;
  std::vector<T> diag_;
};

}  // namespace geoinv

#endif  // GEOINV_CHOLESKY_HPP
