#ifndef GEOINV_KRYLOV_HPP
#define GEOINV_KRYLOV_HPP

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "geoinv/cholesky.hpp"
#include "geoinv/sparse.hpp"

namespace geoinv {

enum class SolverKind { direct, cg, pcg_jacobi, pcg_ssor, bicgstab, block_pcg };
enum class PreconditionerKind { none, jacobi, ssor };

inline const char* to_string(SolverKind k) {
  switch (k) {
    case SolverKind::direct: return "direct";
    case SolverKind::cg: return "cg";
    case SolverKind::pcg_jacobi: return "pcg_jacobi";
    case SolverKind::pcg_ssor: return "pcg_ssor";
    case SolverKind::bicgstab: return "bicgstab";
    case SolverKind::block_pcg: return "block_pcg";
  }
  return "?";
}

inline SolverKind solver_kind_from_string(const std::string& s) {
  for (auto k : {SolverKind::direct, SolverKind::cg, SolverKind::pcg_jacobi, SolverKind::pcg_ssor,
                 SolverKind::bicgstab, SolverKind::block_pcg})
    if (s == to_string(k)) return k;
  throw Error(Errc::invalid_argument, "unknown solver kind '" + s + "'");
}

struct SolverSpec {
  SolverKind kind = SolverKind::direct;
  double tolerance = 1e-10;
  Index max_iterations = 1000;
  double omega = 1.0;
  /// Preconditioner used by bicgstab and block_pcg.
  PreconditionerKind preconditioner = PreconditionerKind::ssor;
};

struct SolveReport {
  Index iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
};

template <typename T>
using PreconditionerApply = std::function<void(std::span<const T>, std::span<T>)>;

/// M^{-1} application for Jacobi or SSOR. The SSOR operator is
/// M = (D/omega + L) D^{-1} (D/omega + L)^T, symmetric whenever A is.
template <typename T>
PreconditionerApply<T> make_preconditioner(const CsrMatrix<T>& a, PreconditionerKind kind,
                                           double omega = 1.0) {
  require(a.rows() == a.cols(), Errc::dimension_mismatch, "preconditioner needs a square matrix");
  const auto d = a.diagonal_values();
  for (std::size_t i = 0; i < d.size(); ++i)
    require(d[i] != T{}, Errc::singular_preconditioner, "zero diagonal entry at row " + std::to_string(i));
  if (kind == PreconditionerKind::none) {
    return [](std::span<const T> r, std::span<T> z) { std::copy(r.begin(), r.end(), z.begin()); };
  }
  if (kind == PreconditionerKind::jacobi) {
    return [d](std::span<const T> r, std::span<T> z) {
      for (std::size_t i = 0; i < r.size(); ++i) z[i] = r[i] / d[i];
    };
  }
  require(omega > 0.0 && omega < 2.0, Errc::invalid_argument, "SSOR relaxation must lie in (0,2)");
  auto mat = std::make_shared<const CsrMatrix<T>>(a);
  return [mat, d, omega](std::span<const T> r, std::span<T> z) {
    const auto& m = *mat;
    const Index n = m.rows();
    const auto& ptr = m.row_ptr();
    const auto& idx = m.col_idx();
    const auto& val = m.values();
    // (D/w + L) y = r
    for (Index i = 0; i < n; ++i) {
      T s = r[i];
      for (Index k = ptr[i]; k < ptr[i + 1] && idx[k] < i; ++k) s -= val[k] * z[idx[k]];
      z[i] = s * omega / d[i];
    }
    for (Index i = 0; i < n; ++i) z[i] *= d[i];
    // (D/w + U) z = y, U = L^T taken from the stored upper part
    for (Index i = n - 1; i >= 0; --i) {
      T s = z[i];
      for (Index k = ptr[i + 1] - 1; k >= ptr[i] && idx[k] > i; --k) s -= val[k] * z[idx[k]];
      z[i] = s * omega / d[i];
    }
  };
}

namespace detail {

inline double safe_norm(double nb) { return nb > 0.0 ? nb : 1.0; }

// Small dense solve X = A^{-1} B (column-major, s x s and s x t), partial pivoting.
inline std::vector<double> dense_solve(std::vector<double> a, std::vector<double> b, Index s, Index t) {
  for (Index k = 0; k < s; ++k) {
    Index p = k;
    for (Index i = k + 1; i < s; ++i)
      if (std::abs(a[k * s + i]) > std::abs(a[k * s + p])) p = i;
    if (a[k * s + p] == 0.0) throw Error(Errc::breakdown, "singular block in block PCG");
    if (p != k) {
      for (Index j = 0; j < s; ++j) std::swap(a[j * s + k], a[j * s + p]);
      for (Index j = 0; j < t; ++j) std::swap(b[j * s + k], b[j * s + p]);
    }
    for (Index i = k + 1; i < s; ++i) {
      const double f = a[k * s + i] / a[k * s + k];
      for (Index j = k; j < s; ++j) a[j * s + i] -= f * a[j * s + k];
      for (Index j = 0; j < t; ++j) b[j * s + i] -= f * b[j * s + k];
    }
  }
  for (Index j = 0; j < t; ++j)
    for (Index i = s - 1; i >= 0; --i) {
      double v = b[j * s + i];
      for (Index k = i + 1; k < s; ++k) v -= a[k * s + i] * b[j * s + k];
      b[j * s + i] = v / a[i * s + i];
    }
  return b;
}

}  // namespace detail

/// Preconditioned conjugate gradients for one right-hand side, zero initial
/// guess. Stops on ||b - Ax|| / ||b|| <= tol.
inline SolveReport pcg(const SparseMatrix& a, std::span<const double> b, std::span<double> x,
                       double tol, Index max_iterations, const PreconditionerApply<double>& precond,
                       const std::function<void(Index, std::span<const double>)>& on_iterate = {}) {
  const std::size_t n = b.size();
  std::fill(x.begin(), x.end(), 0.0);
  const double nb = detail::safe_norm(norm2<double>(b));
  std::vector<double> r(b.begin(), b.end()), z(n), p(n), q(n);
  SolveReport rep;
  rep.relative_residual = norm2<double>(b) / nb;
  if (rep.relative_residual <= tol) {
    rep.converged = true;
    return rep;
  }
  precond(r, z);
  p = z;
  double rz = dot<double>(r, z);
  for (Index it = 1; it <= max_iterations; ++it) {
    a.multiply(p, q);
    const double pq = dot<double>(p, q);
    if (pq <= 0.0) throw Error(Errc::breakdown, "CG curvature non-positive at iteration " + std::to_string(it));
    const double alpha = rz / pq;
    axpy<double>(alpha, p, x);
    axpy<double>(-alpha, q, r);
    rep.iterations = it;
    rep.relative_residual = norm2<double>(r) / nb;
    if (on_iterate) on_iterate(it, x);
    if (rep.relative_residual <= tol) {
      rep.converged = true;
      break;
    }
    precond(r, z);
    const double rz_new = dot<double>(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  return rep;
}

/// Right-preconditioned BiCGSTAB; works for real and complex (non-Hermitian)
/// systems. A vanishing rho or omega raises a breakdown error.
template <typename T>
SolveReport bicgstab(const CsrMatrix<T>& a, std::span<const T> b, std::span<T> x, double tol,
                     Index max_iterations, const PreconditionerApply<T>& precond) {
  const std::size_t n = b.size();
  std::fill(x.begin(), x.end(), T{});
  const double nb = detail::safe_norm(norm2<T>(b));
  std::vector<T> r(b.begin(), b.end()), rhat(r), p(n, T{}), v(n, T{}), s(n), t(n), phat(n), shat(n);
  SolveReport rep;
  rep.relative_residual = norm2<T>(b) / nb;
  if (rep.relative_residual <= tol) {
    rep.converged = true;
    return rep;
  }
  T rho{1}, alpha{1}, omega{1};
  for (Index it = 1; it <= max_iterations; ++it) {
    const T rho_new = dot<T>(rhat, r);
    if (std::abs(rho_new) < 1e-300)
      throw Error(Errc::breakdown, "BiCGSTAB rho vanished at iteration " + std::to_string(it));
    const T beta = (rho_new / rho) * (alpha / omega);
    rho = rho_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * (p[i] - omega * v[i]);
    precond(p, phat);
    a.multiply(phat, v);
    const T rv = dot<T>(rhat, v);
    if (std::abs(rv) < 1e-300)
      throw Error(Errc::breakdown, "BiCGSTAB <rhat,v> vanished at iteration " + std::to_string(it));
    alpha = rho / rv;
    for (std::size_t i = 0; i < n; ++i) s[i] = r[i] - alpha * v[i];
    rep.iterations = it;
    if (norm2<T>(s) / nb <= tol) {
      axpy<T>(alpha, phat, x);
      rep.relative_residual = norm2<T>(s) / nb;
      rep.converged = true;
      break;
    }
    precond(s, shat);
    a.multiply(shat, t);
    const double tt = std::real(dot<T>(t, t));
    if (tt == 0.0) throw Error(Errc::breakdown, "BiCGSTAB t vanished at iteration " + std::to_string(it));
    omega = dot<T>(t, s) / tt;
    if (std::abs(omega) < 1e-300)
      throw Error(Errc::breakdown, "BiCGSTAB omega vanished at iteration " + std::to_string(it));
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * phat[i] + omega * shat[i];
      r[i] = s[i] - omega * t[i];
    }
    rep.relative_residual = norm2<T>(r) / nb;
    if (rep.relative_residual <= tol) {
      rep.converged = true;
      break;
    }
  }
  return rep;
}

/// Block PCG (O'Leary): all columns share one Krylov iteration. Converged
/// columns are dropped from the active block.
inline std::vector<SolveReport> block_pcg(const SparseMatrix& a, const DenseBlock<double>& b,
                                          DenseBlock<double>& x, double tol, Index max_iterations,
                                          const PreconditionerApply<double>& precond) {
  const Index n = b.rows;
  const Index ncol = b.cols;
  x = DenseBlock<double>(n, ncol);
  std::vector<SolveReport> reps(static_cast<std::size_t>(ncol));
  std::vector<double> nb(static_cast<std::size_t>(ncol));
  std::vector<Index> active;
  for (Index j = 0; j < ncol; ++j) {
    nb[j] = detail::safe_norm(norm2<double>(b.col(j)));
    reps[j].relative_residual = norm2<double>(b.col(j)) / nb[j];
    if (reps[j].relative_residual <= tol)
      reps[j].converged = true;
    else
      active.push_back(j);
  }
  if (active.empty()) return reps;

  auto gather = [&](const DenseBlock<double>& src) {
    DenseBlock<double> out(n, static_cast<Index>(active.size()));
    for (std::size_t c = 0; c < active.size(); ++c)
      std::copy(src.col(active[c]).begin(), src.col(active[c]).end(), out.col(static_cast<Index>(c)).begin());
    return out;
  };
  auto gram = [&](const DenseBlock<double>& u, const DenseBlock<double>& v) {
    const Index s = u.cols;
    std::vector<double> g(static_cast<std::size_t>(s * v.cols));
    for (Index j = 0; j < v.cols; ++j)
      for (Index i = 0; i < s; ++i) g[j * s + i] = dot<double>(u.col(i), v.col(j));
    return g;
  };
  auto apply_prec = [&](const DenseBlock<double>& r) {
    DenseBlock<double> z(n, r.cols);
    for (Index j = 0; j < r.cols; ++j) precond(r.col(j), z.col(j));
    return z;
  };

  DenseBlock<double> r = gather(b);
  DenseBlock<double> z = apply_prec(r);
  DenseBlock<double> p = z;
  std::vector<double> zr = gram(z, r);
  for (Index it = 1; it <= max_iterations && !active.empty(); ++it) {
    const Index s = static_cast<Index>(active.size());
    DenseBlock<double> q = a.multiply(p);
    const auto alpha = detail::dense_solve(gram(p, q), zr, s, s);
    for (Index j = 0; j < s; ++j) {
      auto xc = x.col(active[j]);
      auto rc = r.col(j);
      for (Index k = 0; k < s; ++k) {
        const double al = alpha[j * s + k];
        axpy<double>(al, p.col(k), xc);
        axpy<double>(-al, q.col(k), rc);
      }
    }
    std::vector<char> keep(static_cast<std::size_t>(s), 1);
    bool any_done = false;
    for (Index j = 0; j < s; ++j) {
      auto& rep = reps[active[j]];
      rep.iterations = it;
      rep.relative_residual = norm2<double>(r.col(j)) / nb[active[j]];
      if (rep.relative_residual <= tol) {
        rep.converged = true;
        keep[j] = 0;
        any_done = true;
      }
    }
    DenseBlock<double> znew = apply_prec(r);
    std::vector<double> zr_new = gram(znew, r);
    auto beta = detail::dense_solve(zr, zr_new, s, s);
    DenseBlock<double> pnew = znew;
    for (Index j = 0; j < s; ++j)
      for (Index k = 0; k < s; ++k) axpy<double>(beta[j * s + k], p.col(k), pnew.col(j));
    if (any_done) {
      std::vector<Index> next;
      std::vector<Index> pos;
      for (Index j = 0; j < s; ++j)
        if (keep[j]) {
          next.push_back(active[j]);
          pos.push_back(j);
        }
      const Index s2 = static_cast<Index>(next.size());
      DenseBlock<double> r2(n, s2), z2(n, s2), p2(n, s2);
      for (Index c = 0; c < s2; ++c) {
        std::copy(r.col(pos[c]).begin(), r.col(pos[c]).end(), r2.col(c).begin());
        std::copy(znew.col(pos[c]).begin(), znew.col(pos[c]).end(), z2.col(c).begin());
        std::copy(pnew.col(pos[c]).begin(), pnew.col(pos[c]).end(), p2.col(c).begin());
      }
      active = std::move(next);
      r = std::move(r2);
      p = std::move(p2);
      zr = gram(z2, r);
    } else {
      p = std::move(pnew);
      zr = std::move(zr_new);
    }
  }
  return reps;
}

/// A configured linear solver bound to one matrix: holds either a direct
/// factorization or a preconditioner. Immutable after construction, so
/// concurrent solves on distinct right-hand sides are safe.
template <typename T>
class SolverHandle {
 public:
  SolverHandle() = default;

  SolverHandle(const SolverSpec& spec, const CsrMatrix<T>& a) : spec_(spec) {
    require(spec.tolerance > 0.0, Errc::invalid_argument, "solver tolerance must be positive");
    require(spec.max_iterations >= 1, Errc::invalid_argument, "max_iterations must be at least 1");
    require(a.rows() == a.cols(), Errc::dimension_mismatch, "solver needs a square matrix");
    if constexpr (is_complex_v<T>) {
      require(spec.kind == SolverKind::direct || spec.kind == SolverKind::bicgstab, Errc::invalid_argument,
              std::string("solver '") + to_string(spec.kind) +
                  "' requires a Hermitian positive definite system; use bicgstab or direct for complex input");
    }
    matrix_ = std::make_shared<const CsrMatrix<T>>(a);
    switch (spec.kind) {
      case SolverKind::direct:
        factor_ = std::make_shared<const SparseLdlt<T>>(a);
        break;
      case SolverKind::cg:
        precond_ = make_preconditioner(a, PreconditionerKind::none);
        break;
      case SolverKind::pcg_jacobi:
        precond_ = make_preconditioner(a, PreconditionerKind::jacobi);
        break;
      case SolverKind::pcg_ssor:
        precond_ = make_preconditioner(a, PreconditionerKind::ssor, spec.omega);
        break;
      case SolverKind::bicgstab:
      case SolverKind::block_pcg:
        precond_ = make_preconditioner(a, spec.preconditioner, spec.omega);
        break;
    }
  }

  const SolverSpec& spec() const { return spec_; }
  const CsrMatrix<T>& matrix() const { return *matrix_; }
  bool valid() const { return matrix_ != nullptr; }

  /// Solves every column; reports per column.
  DenseBlock<T> solve(const DenseBlock<T>& b, std::vector<SolveReport>* reports = nullptr) const {
    require(valid(), Errc::invalid_argument, "solver handle not initialised");
    require(b.rows == matrix_->rows(), Errc::dimension_mismatch, "rhs rows do not match the matrix");
    DenseBlock<T> x(b.rows, b.cols);
    std::vector<SolveReport> reps(static_cast<std::size_t>(b.cols));
    if (spec_.kind == SolverKind::direct) {
      x = factor_->solve(b);
      for (auto& r : reps) {
        r.converged = true;
        r.iterations = 1;
      }
    } else if (spec_.kind == SolverKind::bicgstab) {
      for (Index j = 0; j < b.cols; ++j)
        reps[j] = bicgstab<T>(*matrix_, b.col(j), x.col(j), spec_.tolerance, spec_.max_iterations, precond_);
    } else if constexpr (!is_complex_v<T>) {
      if (spec_.kind == SolverKind::block_pcg) {
        reps = block_pcg(*matrix_, b, x, spec_.tolerance, spec_.max_iterations, precond_);
      } else {
        for (Index j = 0; j < b.cols; ++j)
          reps[j] = pcg(*matrix_, b.col(j), x.col(j), spec_.tolerance, spec_.max_iterations, precond_);
      }
    }
    if (reports) *reports = std::move(reps);
    return x;
  }

  std::vector<T> solve(std::span<const T> b, SolveReport* report = nullptr) const {
    DenseBlock<T> bb(static_cast<Index>(b.size()), 1);
    std::copy(b.begin(), b.end(), bb.data.begin());
    std::vector<SolveReport> reps;
    auto x = solve(bb, &reps);
    if (report) *report = reps.front();
    return std::move(x.data);
  }

 private:
  SolverSpec spec_;
  std::shared_ptr<const CsrMatrix<T>> matrix_;
  std::shared_ptr<const SparseLdlt<T>> factor_;
  PreconditionerApply<T> precond_;
};

/// Sparse Cholesky (LDL^T after RCM) handle; throws not-spd on a
/// non-positive pivot.
inline SolverHandle<double> factorize_spd(const SparseMatrix& a) {
  return SolverHandle<double>(SolverSpec{SolverKind::direct}, a);
}

struct BlockSolveResult {
  DenseBlock<double> x;
  std::vector<SolveReport> reports;
};

/// Solves A X = B with the iterative method described by `handle`.
inline BlockSolveResult krylov_solve(const SolverHandle<double>& handle, const DenseBlock<double>& b) {
  BlockSolveResult r;
  r.x = handle.solve(b, &r.reports);
  return r;
}

}  // namespace geoinv

#endif  // GEOINV_KRYLOV_HPP
