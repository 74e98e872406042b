#ifndef GEOINV_FORWARD_HPP
#define GEOINV_FORWARD_HPP

#include <atomic>
#include <memory>
#include <string>
#include <vector>

#include "geoinv/mesh.hpp"

namespace geoinv {

/// One batch's forward simulation: maps coefficients on its own mesh to a
/// flat real data vector and exposes matrix-free sensitivity products.
///
/// Data layout is receiver-fastest (n_p x n_q, column-major). Complex data is
/// stored as interleaved (re, im) pairs so every consumer works in a real
/// inner-product space.
///
/// simulate() mutates the cache and is single-writer. The sensitivity products
/// only read the cache and may run concurrently once simulate() returned.
class ForwardProblem {
 public:
  virtual ~ForwardProblem() = default;

  virtual std::string physics() const = 0;
  virtual const TensorMesh& mesh() const = 0;
  virtual Index num_sources() const = 0;
  virtual Index num_receivers() const = 0;
  virtual Index data_size() const = 0;
  virtual double frequency() const { return 0.0; }

  virtual Vector simulate(std::span<const double> coefficients) = 0;
  virtual Vector sens_matvec(std::span<const double> coefficients, std::span<const double> v) const = 0;
  virtual Vector sens_tmatvec(std::span<const double> coefficients, std::span<const double> w) const = 0;

  /// Copy of the problem description without any cached state.
  virtual std::unique_ptr<ForwardProblem> clone() const = 0;
  /// Bytes needed to ship the description (mesh, sources, receivers, coefficients fixed by the problem).
  virtual std::size_t payload_bytes() const = 0;

  bool cache_warm_for(std::span<const double> coefficients) const {
    return cache_valid_ && cache_hash_ == hash_values(coefficients);
  }
  void drop_cache() { cache_valid_ = false; }

  /// PDE (or triangular) solves performed, counted per right-hand side.
  Index pde_solves() const { return solves_.load(); }
  void reset_solve_counter() { solves_.store(0); }

 protected:
  void count_solves(Index n) const { solves_.fetch_add(n); }
  void mark_cache(std::span<const double> coefficients) {
    cache_hash_ = hash_values(coefficients);
    cache_valid_ = true;
  }
  void check_cache(std::span<const double> coefficients) const {
    require(static_cast<Index>(coefficients.size()) == mesh().num_cells(), Errc::dimension_mismatch,
            "coefficient length does not match the forward mesh");
    require(cache_warm_for(coefficients), Errc::stale_cache,
            physics() + " sensitivity requested for a model that was not simulated last");
  }

 private:
  mutable std::atomic<Index> solves_{0};
  std::uint64_t cache_hash_ = 0;
  bool cache_valid_ = false;
};

inline std::size_t mesh_payload_bytes(const TensorMesh& m) {
  std::size_t b = 16;
  for (int a = 0; a < m.dim(); ++a) b += 8 * m.widths(a).size() + 8;
  return b;
}

template <typename T>
std::size_t matrix_payload_bytes(const CsrMatrix<T>& a) {
  return 16 + 8 * a.row_ptr().size() + (8 + sizeof(T)) * static_cast<std::size_t>(a.nnz());
}

/// Dipole sources or receivers: one column per (positive, negative) pair of
/// points, injected at the nearest cell centers with +1 / -1.
inline SparseMatrix dipole_matrix(const TensorMesh& mesh,
                                  const std::vector<std::pair<std::array<double, 3>, std::array<double, 3>>>& pairs) {
  std::vector<Triplet<double>> t;
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    const Index a = mesh.nearest_cell(pairs[j].first);
    const Index b = mesh.nearest_cell(pairs[j].second);
    require(a != b, Errc::invalid_argument, "dipole electrodes collapse onto one cell (column " + std::to_string(j) + ")");
    t.push_back({a, static_cast<Index>(j), 1.0});
    t.push_back({b, static_cast<Index>(j), -1.0});
  }
  return SparseMatrix::from_triplets(mesh.num_cells(), static_cast<Index>(pairs.size()), std::move(t));
}

/// Point sampling / injection: one unit column per cell.
inline SparseMatrix point_matrix(const TensorMesh& mesh, const std::vector<Index>& cells) {
  std::vector<Triplet<double>> t;
  for (std::size_t j = 0; j < cells.size(); ++j) {
    require(cells[j] >= 0 && cells[j] < mesh.num_cells(), Errc::invalid_argument, "cell index outside mesh");
    t.push_back({cells[j], static_cast<Index>(j), 1.0});
  }
  return SparseMatrix::from_triplets(mesh.num_cells(), static_cast<Index>(cells.size()), std::move(t));
}

/// Linear forward map d = A c, optionally repeated to model a fixed amount of
/// work per simulation. Used for quadratic test problems and synthetic
/// equal-cost batches.
class LinearProblem final : public ForwardProblem {
 public:
  LinearProblem(TensorMesh mesh, SparseMatrix a, Index repeats = 1)
      : mesh_(std::move(mesh)), a_(std::move(a)), repeats_(repeats) {
    require(a_.cols() == mesh_.num_cells(), Errc::dimension_mismatch, "operator columns must match mesh cells");
    require(repeats_ >= 1, Errc::invalid_argument, "repeat count must be at least 1");
  }

  std::string physics() const override { return "linear"; }
  const TensorMesh& mesh() const override { return mesh_; }
  Index num_sources() const override { return 1; }
  Index num_receivers() const override { return a_.rows(); }
  Index data_size() const override { return a_.rows(); }

  Vector simulate(std::span<const double> c) override {
    require(static_cast<Index>(c.size()) == mesh_.num_cells(), Errc::dimension_mismatch, "model length");
    Vector d(static_cast<std::size_t>(a_.rows()));
    for (Index k = 0; k < repeats_; ++k) a_.multiply(c, d);
    count_solves(1);
    mark_cache(c);
    return d;
  }
  Vector sens_matvec(std::span<const double> c, std::span<const double> v) const override {
    check_cache(c);
    count_solves(1);
    return a_ * v;
  }
  Vector sens_tmatvec(std::span<const double> c, std::span<const double> w) const override {
    check_cache(c);
    count_solves(1);
    return a_.transpose_multiply(w);
  }
  std::unique_ptr<ForwardProblem> clone() const override {
    return std::make_unique<LinearProblem>(mesh_, a_, repeats_);
  }
  std::size_t payload_bytes() const override { return mesh_payload_bytes(mesh_) + matrix_payload_bytes(a_) + 8; }

 private:
  TensorMesh mesh_;
  SparseMatrix a_;
  Index repeats_;
};

template <typename T>
DenseBlock<T> to_dense_block(const SparseMatrix& a, Index first_col = 0, Index ncols = -1) {
  if (ncols < 0) ncols = a.cols() - first_col;
  DenseBlock<T> b(a.rows(), ncols);
  for (Index i = 0; i < a.rows(); ++i)
    for (Index k = a.row_ptr()[i]; k < a.row_ptr()[i + 1]; ++k) {
      const Index c = a.col_idx()[k] - first_col;
      if (c >= 0 && c < ncols) b(i, c) = T(a.values()[k]);
    }
  return b;
}

}  // namespace geoinv

#endif  // GEOINV_FORWARD_HPP
