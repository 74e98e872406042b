#ifndef GEOINV_DC_HPP
#define GEOINV_DC_HPP

#include <memory>
#include <string>

#include "geoinv/field_store.hpp"
#include "geoinv/forward.hpp"
#include "geoinv/krylov.hpp"

namespace geoinv {

/// DC resistivity: div(sigma grad u) = q with zero-flux boundaries,
/// discretized as A(sigma) = G^T diag(V_f * sigma_face) G.
///
/// The pure-Neumann operator is singular (constants). Solves use
/// A + a_00 e_0 e_0^T, which is SPD and returns the solution with u_0 = 0;
/// dipole sources and receivers make every reported quantity independent of
/// that gauge.
class DcProblem final : public ForwardProblem {
 public:
  DcProblem(TensorMesh mesh, SparseMatrix sources, SparseMatrix receivers, SolverSpec solver = {},
            Averaging averaging = Averaging::harmonic, FieldStorage storage = {})
      : mesh_(std::move(mesh)),
        sources_(std::move(sources)),
        receivers_(std::move(receivers)),
        solver_(solver),
        averaging_(averaging),
        fields_(storage) {
    require(sources_.rows() == mesh_.num_cells() && receivers_.rows() == mesh_.num_cells(),
            Errc::dimension_mismatch, "source/receiver matrices must have one row per cell");
    check_dipoles(sources_, "source");
    check_dipoles(receivers_, "receiver");
    grad_ = gradient_operator(mesh_);
    face_vol_ = mesh_.face_volumes();
    receivers_t_ = receivers_.transpose();
  }

  std::string physics() const override { return "dc"; }
  const TensorMesh& mesh() const override { return mesh_; }
  Index num_sources() const override { return sources_.cols(); }
  Index num_receivers() const override { return receivers_.cols(); }
  Index data_size() const override { return num_sources() * num_receivers(); }
  const SparseMatrix& sources() const { return sources_; }
  const SparseMatrix& receivers() const { return receivers_; }
  Averaging averaging() const { return averaging_; }

  /// A(sigma), symmetric positive semidefinite with the constants as nullspace.
  SparseMatrix assemble_operator(std::span<const double> sigma) const {
    check_sigma(sigma);
    const auto fc = face_coefficients(mesh_, sigma, averaging_);
    return assemble_from_faces(fc.values);
  }

  Vector simulate(std::span<const double> sigma) override {
    check_sigma(sigma);
    drop_cache();
    face_ = face_coefficients(mesh_, sigma, averaging_);
    auto a = assemble_from_faces(face_.values);
    std::vector<Triplet<double>> pin{{0, 0, a.at(0, 0)}};
    handle_ = std::make_shared<const SolverHandle<double>>(
        solver_, add(a, SparseMatrix::from_triplets(a.rows(), a.cols(), std::move(pin))));
    const auto fields = solve_checked(to_dense_block<double>(sources_));
    fields_.store(fields);
    mark_cache(sigma);

    Vector data(static_cast<std::size_t>(data_size()));
    for (Index j = 0; j < fields.cols; ++j) {
      auto d = receivers_t_ * fields.col(j);
      std::copy(d.begin(), d.end(), data.begin() + j * num_receivers());
    }
    return data;
  }

  /// J v = -P^T A^{-1} G^T diag(V_f * G u_j) (d sigma_face / d sigma) v, per source.
  Vector sens_matvec(std::span<const double> sigma, std::span<const double> v) const override {
    check_cache(sigma);
    require(static_cast<Index>(v.size()) == mesh_.num_cells(), Errc::dimension_mismatch, "perturbation length");
    const Vector dface = face_.jacobian * v;
    Vector out(static_cast<std::size_t>(data_size()), 0.0);
    fields_.for_each_batch([&](Index first, const DenseBlock<double>& u) {
      DenseBlock<double> rhs(mesh_.num_cells(), u.cols);
      for (Index j = 0; j < u.cols; ++j) {
        Vector gu = grad_ * u.col(j);
        for (std::size_t f = 0; f < gu.size(); ++f) gu[f] *= face_vol_[f] * dface[f];
        const auto w = grad_.transpose_multiply(gu);
        std::copy(w.begin(), w.end(), rhs.col(j).begin());
      }
      const auto z = solve_checked(rhs);
      for (Index j = 0; j < u.cols; ++j) {
        const auto d = receivers_t_ * z.col(j);
        for (Index i = 0; i < num_receivers(); ++i) out[(first + j) * num_receivers() + i] = -d[i];
      }
    });
    return out;
  }

  /// J^T w = -sum_j (d sigma_face / d sigma)^T diag(V_f * G u_j) G A^{-1} P w_j.
  Vector sens_tmatvec(std::span<const double> sigma, std::span<const double> w) const override {
    check_cache(sigma);
    require(static_cast<Index>(w.size()) == data_size(), Errc::dimension_mismatch, "data vector length");
    Vector face_acc(static_cast<std::size_t>(mesh_.num_interior_faces()), 0.0);
    fields_.for_each_batch([&](Index first, const DenseBlock<double>& u) {
      DenseBlock<double> rhs(mesh_.num_cells(), u.cols);
      for (Index j = 0; j < u.cols; ++j) {
        const auto y = receivers_ * w.subspan((first + j) * num_receivers(), num_receivers());
        std::copy(y.begin(), y.end(), rhs.col(j).begin());
      }
      const auto z = solve_checked(rhs);
      for (Index j = 0; j < u.cols; ++j) {
        const auto gu = grad_ * u.col(j);
        const auto gz = grad_ * z.col(j);
        for (std::size_t f = 0; f < gu.size(); ++f) face_acc[f] -= face_vol_[f] * gu[f] * gz[f];
      }
    });
    return face_.jacobian.transpose_multiply(face_acc);
  }

  std::unique_ptr<ForwardProblem> clone() const override {
    return std::make_unique<DcProblem>(mesh_, sources_, receivers_, solver_, averaging_, fields_.storage());
  }

  std::size_t payload_bytes() const override {
    return mesh_payload_bytes(mesh_) + matrix_payload_bytes(sources_) + matrix_payload_bytes(receivers_) + 64;
  }

  /// Fields of the last simulation (N x n_q).
  DenseBlock<double> fields() const {
    DenseBlock<double> all(mesh_.num_cells(), num_sources());
    fields_.for_each_batch([&](Index first, const DenseBlock<double>& u) {
      std::copy(u.data.begin(), u.data.end(), all.data.begin() + first * u.rows);
    });
    return all;
  }

 private:
  static void check_dipoles(const SparseMatrix& m, const char* what) {
    Vector sums(static_cast<std::size_t>(m.cols()), 0.0);
    Vector mags(sums.size(), 0.0);
    for (Index i = 0; i < m.rows(); ++i)
      for (Index k = m.row_ptr()[i]; k < m.row_ptr()[i + 1]; ++k) {
        sums[m.col_idx()[k]] += m.values()[k];
        mags[m.col_idx()[k]] += std::abs(m.values()[k]);
      }
    for (std::size_t j = 0; j < sums.size(); ++j)
      require(std::abs(sums[j]) <= 1e-12 * std::max(mags[j], 1.0), Errc::invalid_argument,
              std::string(what) + " column " + std::to_string(j) + " does not sum to zero");
  }

  void check_sigma(std::span<const double> sigma) const {
    require(static_cast<Index>(sigma.size()) == mesh_.num_cells(), Errc::dimension_mismatch,
            "conductivity length does not match the mesh");
    for (double s : sigma)
      require(s > 0.0 && std::isfinite(s), Errc::invalid_coefficient, "conductivity must be positive");
  }

  SparseMatrix assemble_from_faces(const Vector& face_sigma) const {
    Vector scale(face_sigma.size());
    for (std::size_t f = 0; f < scale.size(); ++f) scale[f] = face_vol_[f] * face_sigma[f];
    return multiply(grad_.transpose(), grad_.scaled(scale, {}));
  }

  DenseBlock<double> solve_checked(const DenseBlock<double>& rhs) const {
    std::vector<SolveReport> reps;
    auto x = handle_->solve(rhs, &reps);
    count_solves(rhs.cols);
    for (std::size_t j = 0; j < reps.size(); ++j)
      if (!reps[j].converged)
        throw Error(Errc::forward_solve, "dc solve for column " + std::to_string(j) + " stopped after " +
                                             std::to_string(reps[j].iterations) + " iterations at relative residual " +
                                             std::to_string(reps[j].relative_residual));
    return x;
  }

  TensorMesh mesh_;
  SparseMatrix sources_;
  SparseMatrix receivers_;
  SparseMatrix receivers_t_;
  SolverSpec solver_;
  Averaging averaging_;
  SparseMatrix grad_;
  Vector face_vol_;

  FaceCoefficients face_;
  std::shared_ptr<const SolverHandle<double>> handle_;
  FieldCache<double> fields_;
};

struct DcForwardResult {
  DenseBlock<double> data;    ///< n_p x n_q
  DenseBlock<double> fields;  ///< N x n_q
};

inline SparseMatrix assemble_dc_operator(const DcProblem& problem, std::span<const double> sigma) {
  return problem.assemble_operator(sigma);
}

inline DcForwardResult dc_forward(DcProblem& problem, std::span<const double> sigma) {
  DcForwardResult r;
  auto d = problem.simulate(sigma);
  r.data = DenseBlock<double>(problem.num_receivers(), problem.num_sources());
  r.data.data = std::move(d);
  r.fields = problem.fields();
  return r;
}

inline Vector dc_sens_matvec(const DcProblem& p, std::span<const double> sigma, std::span<const double> v) {
  return p.sens_matvec(sigma, v);
}
inline Vector dc_sens_tmatvec(const DcProblem& p, std::span<const double> sigma, std::span<const double> w) {
  return p.sens_tmatvec(sigma, w);
}

}  // namespace geoinv

#endif  // GEOINV_DC_HPP
