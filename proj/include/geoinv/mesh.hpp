#ifndef GEOINV_MESH_HPP
#define GEOINV_MESH_HPP

#include <algorithm>
#include <array>
#include <numeric>
#include <string>
#include <vector>

#include "geoinv/sparse.hpp"

namespace geoinv {

/// Tensor-product mesh in 2D or 3D. Cells are numbered with the first axis
/// running fastest. Face fields used by the operators live on interior faces
/// only, grouped axis by axis; boundary faces carry zero flux.
class TensorMesh {
 public:
  TensorMesh() = default;

  TensorMesh(int dim, std::vector<std::vector<double>> widths, std::vector<double> origin = {})
      : dim_(dim) {
    require(dim == 2 || dim == 3, Errc::unsupported_dimension,
            "mesh dimension must be 2 or 3, got " + std::to_string(dim));
    require(static_cast<int>(widths.size()) == dim, Errc::invalid_mesh, "need one width list per axis");
    if (origin.empty()) origin.assign(static_cast<std::size_t>(dim), 0.0);
    require(static_cast<int>(origin.size()) == dim, Errc::invalid_mesh, "origin length must equal dimension");
    for (int a = 0; a < dim; ++a) {
      require(!widths[a].empty(), Errc::invalid_mesh, "each axis needs at least one cell");
      for (double w : widths[a])
        require(w > 0.0 && std::isfinite(w), Errc::invalid_mesh, "cell widths must be positive");
      widths_[a] = std::move(widths[a]);
      origin_[a] = origin[a];
      n_[a] = static_cast<Index>(widths_[a].size());
    }
    for (int a = dim; a < 3; ++a) {
      widths_[a] = {1.0};
      n_[a] = 1;
      origin_[a] = 0.0;
    }
    stride_ = {1, n_[0], n_[0] * n_[1]};
    for (int a = 0; a < 3; ++a) {
      centers_[a].resize(widths_[a].size());
      double x = origin_[a];
      for (std::size_t i = 0; i < widths_[a].size(); ++i) {
        centers_[a][i] = x + 0.5 * widths_[a][i];
        x += widths_[a][i];
      }
    }
  }

  /// Uniform mesh with n cells of width h per axis.
  static TensorMesh uniform(std::vector<Index> n, std::vector<double> h, std::vector<double> origin = {}) {
    std::vector<std::vector<double>> w;
    for (std::size_t a = 0; a < n.size(); ++a) w.emplace_back(static_cast<std::size_t>(n[a]), h[a]);
    return TensorMesh(static_cast<int>(n.size()), std::move(w), std::move(origin));
  }

  int dim() const { return dim_; }
  Index n(int axis) const { return n_[axis]; }
  const std::vector<double>& widths(int axis) const { return widths_[axis]; }
  const std::vector<double>& centers(int axis) const { return centers_[axis]; }
  double origin(int axis) const { return origin_[axis]; }
  double extent(int axis) const {
    return std::accumulate(widths_[axis].begin(), widths_[axis].end(), 0.0);
  }
  Index stride(int axis) const { return stride_[axis]; }

  Index num_cells() const { return n_[0] * n_[1] * n_[2]; }
  /// All faces normal to `axis`, boundary included.
  Index num_faces(int axis) const {
    if (axis >= dim_) return 0;
    Index c = 1;
    for (int a = 0; a < dim_; ++a) c *= (a == axis) ? n_[a] + 1 : n_[a];
    return c;
  }
  Index num_faces() const {
    Index c = 0;
    for (int a = 0; a < dim_; ++a) c += num_faces(a);
    return c;
  }
  Index num_interior_faces(int axis) const {
    if (axis >= dim_) return 0;
    return num_cells() / n_[axis] * (n_[axis] - 1);
  }
  Index num_interior_faces() const {
    Index c = 0;
    for (int a = 0; a < dim_; ++a) c += num_interior_faces(a);
    return c;
  }
  Index num_nodes() const {
    Index c = 1;
    for (int a = 0; a < dim_; ++a) c *= n_[a] + 1;
    return c;
  }

  Index cell_index(Index i, Index j, Index k = 0) const { return i + n_[0] * (j + n_[1] * k); }
  std::array<Index, 3> cell_subscript(Index c) const {
    return {c % n_[0], (c / n_[0]) % n_[1], c / (n_[0] * n_[1])};
  }
  std::array<double, 3> cell_center(Index c) const {
    const auto s = cell_subscript(c);
    return {centers_[0][s[0]], centers_[1][s[1]], dim_ == 3 ? centers_[2][s[2]] : 0.0};
  }
  double cell_volume(Index c) const {
    const auto s = cell_subscript(c);
    double v = 1.0;
    for (int a = 0; a < dim_; ++a) v *= widths_[a][s[a]];
    return v;
  }
  Vector cell_volumes() const {
    Vector v(static_cast<std::size_t>(num_cells()));
    for (Index c = 0; c < num_cells(); ++c) v[c] = cell_volume(c);
    return v;
  }

  /// Cell whose center is nearest to the point (per-axis nearest center).
  Index nearest_cell(std::array<double, 3> x) const {
    std::array<Index, 3> s{0, 0, 0};
    for (int a = 0; a < dim_; ++a) {
      const auto& c = centers_[a];
      auto it = std::lower_bound(c.begin(), c.end(), x[a]);
      Index k = static_cast<Index>(it - c.begin());
      if (k >= static_cast<Index>(c.size())) k = static_cast<Index>(c.size()) - 1;
      if (k > 0 && std::abs(c[k - 1] - x[a]) <= std::abs(c[k] - x[a])) --k;
      s[a] = k;
    }
    return cell_index(s[0], s[1], s[2]);
  }

  /// Calls f(face_row, axis, lower_cell, upper_cell) for every interior face in
  /// operator row order.
  template <typename F>
  void for_each_interior_face(F&& f) const {
    Index row = 0;
    for (int a = 0; a < dim_; ++a) {
      for (Index k = 0; k < n_[2]; ++k)
        for (Index j = 0; j < n_[1]; ++j)
          for (Index i = 0; i < n_[0]; ++i) {
            const std::array<Index, 3> s{i, j, k};
            if (s[a] + 1 >= n_[a]) continue;
            const Index c = cell_index(i, j, k);
            f(row++, a, c, c + stride_[a]);
          }
    }
  }

  /// Distance between the centers of the two cells adjacent to an interior face.
  double face_center_distance(int axis, Index lower) const {
    const Index s = cell_subscript(lower)[axis];
    return 0.5 * (widths_[axis][s] + widths_[axis][s + 1]);
  }
  double face_area(int axis, Index lower) const {
    const auto s = cell_subscript(lower);
    double area = 1.0;
    for (int a = 0; a < dim_; ++a)
      if (a != axis) area *= widths_[a][s[a]];
    return area;
  }

  /// Dual volume of each interior face: area times center-to-center distance.
  Vector face_volumes() const {
    Vector v(static_cast<std::size_t>(num_interior_faces()));
    for_each_interior_face([&](Index row, int axis, Index lo, Index) {
      v[row] = face_area(axis, lo) * face_center_distance(axis, lo);
    });
    return v;
  }

  bool uniform_axis(int axis) const {
    const auto& w = widths_[axis];
    return std::all_of(w.begin(), w.end(), [&](double x) { return std::abs(x - w[0]) <= 1e-12 * w[0]; });
  }

 private:
  int dim_ = 2;
  std::array<std::vector<double>, 3> widths_;
  std::array<std::vector<double>, 3> centers_;
  std::array<double, 3> origin_{0, 0, 0};
  std::array<Index, 3> n_{1, 1, 1};
  std::array<Index, 3> stride_{1, 1, 1};
};

inline TensorMesh build_tensor_mesh(int dim, std::vector<std::vector<double>> widths,
                                    std::vector<double> origin = {}) {
  return TensorMesh(dim, std::move(widths), std::move(origin));
}

/// Cell-to-interior-face difference operator: (u_upper - u_lower) / distance.
inline SparseMatrix gradient_operator(const TensorMesh& mesh) {
  std::vector<Triplet<double>> t;
  t.reserve(static_cast<std::size_t>(2 * mesh.num_interior_faces()));
  mesh.for_each_interior_face([&](Index row, int axis, Index lo, Index hi) {
    const double h = mesh.face_center_distance(axis, lo);
    t.push_back({row, lo, -1.0 / h});
    t.push_back({row, hi, 1.0 / h});
  });
  return SparseMatrix::from_triplets(mesh.num_interior_faces(), mesh.num_cells(), std::move(t));
}

/// Face-to-cell divergence D = -V^{-1} G^T V_f, so that V D = -G^T V_f holds
/// exactly and G^T diag(V_f s) G is symmetric.
inline SparseMatrix divergence_operator(const TensorMesh& mesh) {
  const Vector vol = mesh.cell_volumes();
  Vector inv_vol(vol.size());
  for (std::size_t i = 0; i < vol.size(); ++i) inv_vol[i] = -1.0 / vol[i];
  const Vector vf = mesh.face_volumes();
  return gradient_operator(mesh).transpose().scaled(inv_vol, vf);
}

enum class Averaging { harmonic, arithmetic };

/// Cell-to-face averaging weights. The weight of a cell is its half-width
/// share of the center-to-center distance; rows sum to one. In harmonic mode
/// these weights apply to resistivities (1/sigma).
inline SparseMatrix face_average_operator(const TensorMesh& mesh) {
  std::vector<Triplet<double>> t;
  mesh.for_each_interior_face([&](Index row, int axis, Index lo, Index hi) {
    const double wl = mesh.widths(axis)[mesh.cell_subscript(lo)[axis]];
    const double wh = mesh.widths(axis)[mesh.cell_subscript(hi)[axis]];
    t.push_back({row, lo, wl / (wl + wh)});
    t.push_back({row, hi, wh / (wl + wh)});
  });
  return SparseMatrix::from_triplets(mesh.num_interior_faces(), mesh.num_cells(), std::move(t));
}

struct FaceCoefficients {
  Vector values;          ///< one per interior face
  SparseMatrix jacobian;  ///< d(face values)/d(cell values)
};

inline FaceCoefficients face_coefficients(const TensorMesh& mesh, std::span<const double> cells,
                                          Averaging mode = Averaging::harmonic) {
  require(static_cast<Index>(cells.size()) == mesh.num_cells(), Errc::dimension_mismatch,
          "cell coefficient length does not match mesh");
  const SparseMatrix avg = face_average_operator(mesh);
  FaceCoefficients out;
  if (mode == Averaging::arithmetic) {
    out.values = avg * cells;
    out.jacobian = avg;
    return out;
  }
  Vector inv(cells.size());
  Vector dinv(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    inv[i] = 1.0 / cells[i];
    dinv[i] = -1.0 / (cells[i] * cells[i]);
  }
  Vector r = avg * inv;
  out.values.resize(r.size());
  Vector left(r.size());
  for (std::size_t f = 0; f < r.size(); ++f) {
    out.values[f] = 1.0 / r[f];
    left[f] = -out.values[f] * out.values[f];
  }
  out.jacobian = avg.scaled(left, dinv);
  return out;
}

struct Interpolation {
  SparseMatrix matrix;  ///< dst cells x src cells
  Index clamped = 0;    ///< dst cells whose center fell outside the src center hull
};

/// Multilinear interpolation between cell centers of two meshes; targets
/// outside the source center hull are clamped to the nearest center.
inline Interpolation interp_mesh_to_mesh(const TensorMesh& src, const TensorMesh& dst) {
  require(src.dim() == dst.dim(), Errc::dimension_mismatch, "meshes must share a dimension");
  Interpolation out;
  std::vector<Triplet<double>> t;
  for (Index c = 0; c < dst.num_cells(); ++c) {
    const auto x = dst.cell_center(c);
    std::array<std::array<Index, 2>, 3> idx{};
    std::array<std::array<double, 2>, 3> w{};
    bool clamped = false;
    for (int a = 0; a < 3; ++a) {
      if (a >= src.dim()) {
        idx[a] = {0, 0};
        w[a] = {1.0, 0.0};
        continue;
      }
      const auto& cc = src.centers(a);
      const Index n = static_cast<Index>(cc.size());
      const double tol = 1e-10 * src.extent(a);
      if (x[a] <= cc[0] + tol) {
        clamped |= x[a] < cc[0] - tol;
        idx[a] = {0, 0};
        w[a] = {1.0, 0.0};
      } else if (x[a] >= cc[n - 1] - tol) {
        clamped |= x[a] > cc[n - 1] + tol;
        idx[a] = {n - 1, n - 1};
        w[a] = {1.0, 0.0};
      } else {
        const Index k = static_cast<Index>(std::upper_bound(cc.begin(), cc.end(), x[a]) - cc.begin()) - 1;
        const double s = (x[a] - cc[k]) / (cc[k + 1] - cc[k]);
        idx[a] = {k, k + 1};
        w[a] = {1.0 - s, s};
      }
    }
    if (clamped) ++out.clamped;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k) {
          const double wt = w[0][i] * w[1][j] * w[2][k];
          if (wt == 0.0) continue;
          t.push_back({c, src.cell_index(idx[0][i], idx[1][j], idx[2][k]), wt});
        }
  }
  out.matrix = SparseMatrix::from_triplets(dst.num_cells(), src.num_cells(), std::move(t));
  return out;
}

}  // namespace geoinv

#endif  // GEOINV_MESH_HPP
