#ifndef GEOINV_HELMHOLTZ_HPP
#define GEOINV_HELMHOLTZ_HPP

#include <memory>
#include <optional>
#include <string>

#include "geoinv/field_store.hpp"
#include "geoinv/forward.hpp"
#include "geoinv/krylov.hpp"

namespace geoinv {

/// A mesh side; axis -1 means the last axis (depth), so the default is the top surface.
struct BoundarySide {
  int axis = -1;
  bool upper = true;
};

/// Attenuation profile for an absorbing layer: zero inside, quadratic ramp
/// strength * (depth / pad)^2 over the outer `pad_cells` of every side except
/// the free surface.
inline Vector build_attenuation_layer(const TensorMesh& mesh, Index pad_cells, double strength,
                                      std::optional<BoundarySide> free_surface = BoundarySide{}) {
  require(pad_cells >= 0, Errc::invalid_padding, "padding must be non-negative");
  for (int a = 0; a < mesh.dim(); ++a)
    require(2 * pad_cells < mesh.n(a), Errc::invalid_padding,
            "padding of " + std::to_string(pad_cells) + " cells does not fit axis " + std::to_string(a));
  Vector gamma(static_cast<std::size_t>(mesh.num_cells()), 0.0);
  if (pad_cells == 0) return gamma;
  for (Index c = 0; c < mesh.num_cells(); ++c) {
    const auto s = mesh.cell_subscript(c);
    double g = 0.0;
    for (int a = 0; a < mesh.dim(); ++a) {
      const bool on_axis = free_surface && (free_surface->axis < 0 ? mesh.dim() - 1 : free_surface->axis) == a;
      const bool free_low = on_axis && !free_surface->upper;
      const bool free_high = on_axis && free_surface->upper;
      Index depth = 0;
      if (!free_low && s[a] < pad_cells) depth = pad_cells - s[a];
      if (!free_high && s[a] >= mesh.n(a) - pad_cells) depth = std::max(depth, s[a] - (mesh.n(a) - pad_cells) + 1);
      const double r = static_cast<double>(depth) / static_cast<double>(pad_cells);
      g = std::max(g, strength * r * r);
    }
    gamma[c] = g;
  }
  return gamma;
}

/// Frequency-domain acoustics for one angular frequency:
///   H(m) = -G^T diag(V_f / rho_face) G + omega^2 diag(V (1 + i gamma) m),
/// the volume-integrated form of div(rho^{-1} grad u) + omega^2 (1 + i gamma) m u = q.
/// H is complex symmetric, so reciprocity holds and the direct path uses a
/// complex LDL^T. Sources are solved in batches that share one factorization.
class HelmholtzProblem final : public ForwardProblem {
 public:
  HelmholtzProblem(TensorMesh mesh, Vector rho, Vector gamma, double omega, SparseMatrix sources,
                   SparseMatrix receivers, SolverSpec solver = {}, FieldStorage storage = {},
                   Index source_batch = 27)
      : mesh_(std::move(mesh)),
        rho_(std::move(rho)),
        gamma_(std::move(gamma)),
        omega_(omega),
        sources_(std::move(sources)),
        receivers_(std::move(receivers)),
        solver_(solver),
        source_batch_(source_batch),
        fields_(storage) {
    require(omega_ > 0.0, Errc::invalid_argument, "angular frequency must be positive");
    require(source_batch_ >= 1, Errc::invalid_argument, "source batch must be at least 1");
    require(static_cast<Index>(rho_.size()) == mesh_.num_cells() &&
                static_cast<Index>(gamma_.size()) == mesh_.num_cells(),
            Errc::dimension_mismatch, "rho/gamma must have one value per cell");
    for (double r : rho_) require(r > 0.0, Errc::invalid_coefficient, "density must be positive");
    for (double g : gamma_) require(g >= 0.0, Errc::invalid_coefficient, "attenuation must be non-negative");
    require(sources_.rows() == mesh_.num_cells() && receivers_.rows() == mesh_.num_cells(),
            Errc::dimension_mismatch, "source/receiver matrices must have one row per cell");
    grad_ = gradient_operator(mesh_);
    Vector inv_rho(rho_.size());
    for (std::size_t i = 0; i < rho_.size(); ++i) inv_rho[i] = 1.0 / rho_[i];
    const auto fc = face_coefficients(mesh_, inv_rho, Averaging::arithmetic);
    const auto vf = mesh_.face_volumes();
    Vector scale(vf.size());
    for (std::size_t f = 0; f < vf.size(); ++f) scale[f] = vf[f] * fc.values[f];
    stiffness_ = multiply(grad_.transpose(), grad_.scaled(scale, {}));
    vol_ = mesh_.cell_volumes();
    mass_coef_.resize(vol_.size());
    for (std::size_t i = 0; i < vol_.size(); ++i)
      mass_coef_[i] = omega_ * omega_ * vol_[i] * Complex(1.0, gamma_[i]);
    receivers_t_ = receivers_.transpose();
  }

  std::string physics() const override { return "helmholtz"; }
  const TensorMesh& mesh() const override { return mesh_; }
  Index num_sources() const override { return sources_.cols(); }
  Index num_receivers() const override { return receivers_.cols(); }
  Index data_size() const override { return 2 * num_sources() * num_receivers(); }
  double frequency() const override { return omega_; }
  double omega() const { return omega_; }
  const Vector& gamma() const { return gamma_; }
  Index source_batch() const { return source_batch_; }

  ComplexSparseMatrix assemble(std::span<const double> m) const {
    check_model(m);
    std::vector<Complex> d(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) d[i] = mass_coef_[i] * m[i];
    return add(stiffness_.cast<Complex>(), ComplexSparseMatrix::diagonal(d), Complex(-1.0), Complex(1.0));
  }

  Vector simulate(std::span<const double> m) override {
    check_model(m);
    drop_cache();
    handle_ = std::make_shared<const SolverHandle<Complex>>(solver_, assemble(m));
    DenseBlock<Complex> fields(mesh_.num_cells(), num_sources());
    for (Index first = 0; first < num_sources(); first += source_batch_) {
      const Index nb = std::min(source_batch_, num_sources() - first);
      const auto u = solve_checked(to_dense_block<Complex>(sources_, first, nb));
      std::copy(u.data.begin(), u.data.end(), fields.data.begin() + first * fields.rows);
    }
    fields_.store(fields);
    mark_cache(m);
    Vector data(static_cast<std::size_t>(data_size()));
    for (Index j = 0; j < num_sources(); ++j) {
      const auto d = receivers_t_.cast<Complex>() * fields.col(j);
      pack(d, j, data);
    }
    return data;
  }

  /// J v = -P^T H^{-1} (omega^2 V (1 + i gamma) u_j * v), per source.
  Vector sens_matvec(std::span<const double> m, std::span<const double> v) const override {
    check_cache(m);
    require(static_cast<Index>(v.size()) == mesh_.num_cells(), Errc::dimension_mismatch, "perturbation length");
    Vector out(static_cast<std::size_t>(data_size()), 0.0);
    const auto pt = receivers_t_.cast<Complex>();
    fields_.for_each_batch([&](Index first, const DenseBlock<Complex>& u) {
      DenseBlock<Complex> rhs(u.rows, u.cols);
      for (Index j = 0; j < u.cols; ++j)
        for (Index i = 0; i < u.rows; ++i) rhs(i, j) = mass_coef_[i] * u(i, j) * v[i];
      const auto z = solve_checked(rhs);
      for (Index j = 0; j < u.cols; ++j) {
        auto d = pt * z.col(j);
        for (auto& x : d) x = -x;
        pack(d, first + j, out);
      }
    });
    return out;
  }

  /// Re(J^H w); H^{-H} y = conj(H^{-1} conj(y)) since H is complex symmetric.
  Vector sens_tmatvec(std::span<const double> m, std::span<const double> w) const override {
    check_cache(m);
    require(static_cast<Index>(w.size()) == data_size(), Errc::dimension_mismatch, "data vector length");
    Vector out(static_cast<std::size_t>(mesh_.num_cells()), 0.0);
    const auto p = receivers_.cast<Complex>();
    fields_.for_each_batch([&](Index first, const DenseBlock<Complex>& u) {
      DenseBlock<Complex> rhs(u.rows, u.cols);
      for (Index j = 0; j < u.cols; ++j) {
        std::vector<Complex> wj(static_cast<std::size_t>(num_receivers()));
        for (Index i = 0; i < num_receivers(); ++i) {
          const Index k = 2 * ((first + j) * num_receivers() + i);
          wj[i] = std::conj(Complex(w[k], w[k + 1]));
        }
        const auto y = p * wj;
        std::copy(y.begin(), y.end(), rhs.col(j).begin());
      }
      const auto z = solve_checked(rhs);  // z = H^{-1} conj(P w)
      for (Index j = 0; j < u.cols; ++j)
        for (Index i = 0; i < u.rows; ++i)
          out[i] -= std::real(std::conj(mass_coef_[i] * u(i, j)) * std::conj(z(i, j)));
    });
    return out;
  }

  std::unique_ptr<ForwardProblem> clone() const override {
    return std::make_unique<HelmholtzProblem>(mesh_, rho_, gamma_, omega_, sources_, receivers_, solver_,
                                              fields_.storage(), source_batch_);
  }

  std::size_t payload_bytes() const override {
    return mesh_payload_bytes(mesh_) + matrix_payload_bytes(sources_) + matrix_payload_bytes(receivers_) +
           8 * (rho_.size() + gamma_.size()) + 64;
  }

  DenseBlock<Complex> fields() const {
    DenseBlock<Complex> all(mesh_.num_cells(), num_sources());
    fields_.for_each_batch([&](Index first, const DenseBlock<Complex>& u) {
      std::copy(u.data.begin(), u.data.end(), all.data.begin() + first * u.rows);
    });
    return all;
  }

  /// Complex data of the packed vector as an n_p x n_q block.
  DenseBlock<Complex> unpack(std::span<const double> packed) const {
    DenseBlock<Complex> d(num_receivers(), num_sources());
    for (std::size_t k = 0; k < d.data.size(); ++k) d.data[k] = Complex(packed[2 * k], packed[2 * k + 1]);
    return d;
  }

 private:
  void check_model(std::span<const double> m) const {
    require(static_cast<Index>(m.size()) == mesh_.num_cells(), Errc::dimension_mismatch,
            "model length does not match the mesh");
    for (double x : m) require(x > 0.0 && std::isfinite(x), Errc::invalid_coefficient, "squared slowness must be positive");
  }

  void pack(const std::vector<Complex>& d, Index source, Vector& out) const {
    for (Index i = 0; i < num_receivers(); ++i) {
      const Index k = 2 * (source * num_receivers() + i);
      out[k] = d[i].real();
      out[k + 1] = d[i].imag();
    }
  }

  DenseBlock<Complex> solve_checked(const DenseBlock<Complex>& rhs) const {
    std::vector<SolveReport> reps;
    auto x = handle_->solve(rhs, &reps);
    count_solves(rhs.cols);
    for (std::size_t j = 0; j < reps.size(); ++j)
      if (!reps[j].converged)
        throw Error(Errc::forward_solve, "helmholtz solve for column " + std::to_string(j) + " stopped after " +
                                             std::to_string(reps[j].iterations) + " iterations");
    return x;
  }

  TensorMesh mesh_;
  Vector rho_;
  Vector gamma_;
  double omega_;
  SparseMatrix sources_;
  SparseMatrix receivers_;
  SparseMatrix receivers_t_;
  SolverSpec solver_;
  Index source_batch_;
  SparseMatrix grad_;
  SparseMatrix stiffness_;
  Vector vol_;
  std::vector<Complex> mass_coef_;

  std::shared_ptr<const SolverHandle<Complex>> handle_;
  FieldCache<Complex> fields_;
};

struct HelmholtzForwardResult {
  DenseBlock<Complex> data;    ///< n_p x n_q
  DenseBlock<Complex> fields;  ///< N x n_q
};

inline ComplexSparseMatrix assemble_helmholtz(const HelmholtzProblem& p, std::span<const double> m) {
  return p.assemble(m);
}

inline HelmholtzForwardResult helmholtz_forward(HelmholtzProblem& p, std::span<const double> m) {
  const auto packed = p.simulate(m);
  return {p.unpack(packed), p.fields()};
}

}  // namespace geoinv

#endif  // GEOINV_HELMHOLTZ_HPP
