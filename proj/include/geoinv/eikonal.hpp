#ifndef GEOINV_EIKONAL_HPP
#define GEOINV_EIKONAL_HPP

#include <algorithm>
#include <functional>
#include <limits>
#include <memory>
#include <queue>
#include <string>

#include "geoinv/forward.hpp"

namespace geoinv {

/// Linearized upwind stencil of one accepted cell:
///   diag * du_c - sum_k coef[k] * du_{nb[k]} = dm_c.
/// Cells initialised around the source (count == 0) instead follow
///   du_c = source_coef * dm_source.
struct UpwindStencil {
  std::array<Index, 3> nb{};
  std::array<double, 3> coef{};
  int count = 0;
  double diag = 0.0;
  double source_coef = 0.0;
};

/// Travel times of one source together with the causality data needed by the
/// sensitivity products.
struct MarchResult {
  Vector times;
  std::vector<Index> order;  ///< acceptance order, source first
  std::vector<UpwindStencil> stencil;
};

namespace detail {

/// Godunov update: largest root of sum_a ((u - U_a) / h_a)^2 = m using the
/// smallest upwind values first; axes whose value is not below u drop out.
inline double godunov_update(std::array<double, 3> vals, std::array<double, 3> h, int n, double m,
                             std::array<int, 3>& used, int& nused) {
  std::array<int, 3> idx{0, 1, 2};
  std::sort(idx.begin(), idx.begin() + n, [&](int a, int b) { return vals[a] < vals[b]; });
  double u = 0.0;
  nused = 0;
  double sa = 0.0, sb = 0.0, sc = -m;
  for (int k = 0; k < n; ++k) {
    const int a = idx[k];
    const double w = 1.0 / (h[a] * h[a]);
    const double na = sa + w, nb = sb - 2.0 * w * vals[a], nc = sc + w * vals[a] * vals[a];
    const double disc = nb * nb - 4.0 * na * nc;
    if (disc < 0.0) break;
    const double cand = (-nb + std::sqrt(disc)) / (2.0 * na);
    if (k > 0 && cand <= vals[a]) break;
    sa = na;
    sb = nb;
    sc = nc;
    u = cand;
    used[nused++] = a;
    if (k + 1 < n && u <= vals[idx[k + 1]]) break;
  }
  return u;
}

}  // namespace detail

/// First-arrival travel times |grad u|^2 = m by fast marching with the
/// first-order Godunov upwind scheme. Ties in the narrow band are broken by
/// the lowest cell index.
///
/// With source_radius > 0, cells whose centres lie within that distance of
/// the source centre start from the straight-ray time sqrt(m_source) * dist,
/// which removes the h log h error of a point-source start.
inline MarchResult fast_marching(const TensorMesh& mesh, std::span<const double> m, Index source,
                                 double source_radius = 0.0) {
  const Index n = mesh.num_cells();
  require(source >= 0 && source < n, Errc::invalid_argument, "source cell outside mesh");
  std::array<double, 3> h{1.0, 1.0, 1.0};
  for (int a = 0; a < mesh.dim(); ++a) h[a] = mesh.widths(a).front();

  MarchResult r;
  r.times.assign(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  r.stencil.assign(static_cast<std::size_t>(n), {});
  r.order.reserve(static_cast<std::size_t>(n));
  std::vector<char> accepted(static_cast<std::size_t>(n), 0);

  using Entry = std::pair<double, Index>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> band;
  std::vector<char> fixed(static_cast<std::size_t>(n), 0);
  r.times[source] = 0.0;
  fixed[source] = 1;
  band.push({0.0, source});
  if (source_radius > 0.0) {
    const auto xs = mesh.cell_center(source);
    const double slow = std::sqrt(m[source]);
    for (Index c = 0; c < n; ++c) {
      if (c == source) continue;
      const auto x = mesh.cell_center(c);
      double d2 = 0.0;
      for (int a = 0; a < mesh.dim(); ++a) d2 += (x[a] - xs[a]) * (x[a] - xs[a]);
      const double d = std::sqrt(d2);
      if (d > source_radius) continue;
      fixed[c] = 1;
      r.times[c] = slow * d;
      r.stencil[c].source_coef = d / (2.0 * slow);
      band.push({r.times[c], c});
    }
  }

  // Upwind value per axis among accepted neighbours of c.
  auto upwind = [&](Index c, std::array<double, 3>& vals, std::array<Index, 3>& who, std::array<double, 3>& hh) {
    const auto s = mesh.cell_subscript(c);
    int k = 0;
    for (int a = 0; a < mesh.dim(); ++a) {
      double best = std::numeric_limits<double>::infinity();
      Index arg = -1;
      for (int step : {-1, 1}) {
        const Index t = s[a] + step;
        if (t < 0 || t >= mesh.n(a)) continue;
        const Index nb = c + step * mesh.stride(a);
        if (accepted[nb] && r.times[nb] < best) {
          best = r.times[nb];
          arg = nb;
        }
      }
      if (arg >= 0) {
        vals[k] = best;
        who[k] = arg;
        hh[k] = h[a];
        ++k;
      }
    }
    return k;
  };

  while (!band.empty()) {
    const auto [t, c] = band.top();
    band.pop();
    if (accepted[c] || t != r.times[c]) continue;
    accepted[c] = 1;
    r.order.push_back(c);

    if (!fixed[c]) {
      std::array<double, 3> vals{}, hh{};
      std::array<Index, 3> who{};
      std::array<int, 3> used{};
      int nused = 0;
      const int k = upwind(c, vals, who, hh);
      const double u = detail::godunov_update(vals, hh, k, m[c], used, nused);
      auto& st = r.stencil[c];
      for (int q = 0; q < nused; ++q) {
        const int a = used[q];
        const double coef = 2.0 * (u - vals[a]) / (hh[a] * hh[a]);
        st.nb[st.count] = who[a];
        st.coef[st.count] = coef;
        st.diag += coef;
        ++st.count;
      }
      r.times[c] = u;
    }

    const auto s = mesh.cell_subscript(c);
    for (int a = 0; a < mesh.dim(); ++a)
      for (int step : {-1, 1}) {
        const Index tt = s[a] + step;
        if (tt < 0 || tt >= mesh.n(a)) continue;
        const Index nb = c + step * mesh.stride(a);
        if (accepted[nb] || fixed[nb]) continue;
        std::array<double, 3> vals{}, hh{};
        std::array<Index, 3> who{};
        std::array<int, 3> used{};
        int nused = 0;
        const int k = upwind(nb, vals, who, hh);
        const double u = detail::godunov_update(vals, hh, k, m[nb], used, nused);
        if (u < r.times[nb]) {
          r.times[nb] = u;
          band.push({u, nb});
        }
      }
  }
  return r;
}

/// Travel-time tomography: point sources at cells, point receivers, model is
/// squared slowness. Sensitivities use the triangular structure of the
/// linearized upwind system in acceptance order.
class EikonalProblem final : public ForwardProblem {
 public:
  EikonalProblem(TensorMesh mesh, std::vector<Index> source_cells, SparseMatrix receivers, double source_radius = 0.0)
      : mesh_(std::move(mesh)),
        sources_(std::move(source_cells)),
        receivers_(std::move(receivers)),
        source_radius_(source_radius) {
    require(source_radius_ >= 0.0, Errc::invalid_argument, "source radius must be non-negative");
    for (int a = 0; a < mesh_.dim(); ++a)
      require(mesh_.uniform_axis(a), Errc::invalid_mesh, "fast marching needs uniform spacing per axis");
    for (Index s : sources_)
      require(s >= 0 && s < mesh_.num_cells(), Errc::invalid_argument, "source cell outside mesh");
    require(receivers_.rows() == mesh_.num_cells(), Errc::dimension_mismatch, "receiver matrix rows");
    receivers_t_ = receivers_.transpose();
  }

  std::string physics() const override { return "eikonal"; }
  const TensorMesh& mesh() const override { return mesh_; }
  Index num_sources() const override { return static_cast<Index>(sources_.size()); }
  Index num_receivers() const override { return receivers_.cols(); }
  Index data_size() const override { return num_sources() * num_receivers(); }
  const std::vector<Index>& source_cells() const { return sources_; }
  double source_radius() const { return source_radius_; }

  Vector simulate(std::span<const double> m) override {
    require(static_cast<Index>(m.size()) == mesh_.num_cells(), Errc::dimension_mismatch, "model length");
    for (double x : m) require(x > 0.0 && std::isfinite(x), Errc::invalid_coefficient, "squared slowness must be positive");
    drop_cache();
    marches_.clear();
    Vector data(static_cast<std::size_t>(data_size()));
    for (Index j = 0; j < num_sources(); ++j) {
      marches_.push_back(fast_marching(mesh_, m, sources_[j], source_radius_));
      count_solves(1);
      const auto d = receivers_t_ * marches_.back().times;
      std::copy(d.begin(), d.end(), data.begin() + j * num_receivers());
    }
    mark_cache(m);
    return data;
  }

  /// J v = P^T L^{-1} v with L the upwind Jacobian (lower triangular in
  /// acceptance order); source rows are fixed.
  Vector sens_matvec(std::span<const double> m, std::span<const double> v) const override {
    check_cache(m);
    require(static_cast<Index>(v.size()) == mesh_.num_cells(), Errc::dimension_mismatch, "perturbation length");
    Vector out(static_cast<std::size_t>(data_size()));
    Vector du(v.size());
    for (Index j = 0; j < num_sources(); ++j) {
      const auto& mr = marches_[j];
      std::fill(du.begin(), du.end(), 0.0);
      for (Index c : mr.order) {
        const auto& st = mr.stencil[c];
        if (st.count == 0) {
          du[c] = st.source_coef * v[sources_[j]];
          continue;
        }
        double s = v[c];
        for (int k = 0; k < st.count; ++k) s += st.coef[k] * du[st.nb[k]];
        du[c] = s / st.diag;
      }
      count_solves(1);
      const auto d = receivers_t_ * du;
      std::copy(d.begin(), d.end(), out.begin() + j * num_receivers());
    }
    return out;
  }

  /// J^T w = L^{-T} P w by back substitution in reverse acceptance order.
  Vector sens_tmatvec(std::span<const double> m, std::span<const double> w) const override {
    check_cache(m);
    require(static_cast<Index>(w.size()) == data_size(), Errc::dimension_mismatch, "data vector length");
    Vector out(static_cast<std::size_t>(mesh_.num_cells()), 0.0);
    for (Index j = 0; j < num_sources(); ++j) {
      const auto& mr = marches_[j];
      auto lam = receivers_ * w.subspan(j * num_receivers(), num_receivers());
      for (auto it = mr.order.rbegin(); it != mr.order.rend(); ++it) {
        const Index c = *it;
        const auto& st = mr.stencil[c];
        if (st.count == 0) {
          out[sources_[j]] += st.source_coef * lam[c];
          continue;
        }
        lam[c] /= st.diag;
        for (int k = 0; k < st.count; ++k) lam[st.nb[k]] += st.coef[k] * lam[c];
        out[c] += lam[c];
      }
      count_solves(1);
    }
    return out;
  }

  std::unique_ptr<ForwardProblem> clone() const override {
    return std::make_unique<EikonalProblem>(mesh_, sources_, receivers_, source_radius_);
  }

  std::size_t payload_bytes() const override {
    return mesh_payload_bytes(mesh_) + 8 * sources_.size() + matrix_payload_bytes(receivers_) + 64;
  }

  const MarchResult& march(Index source) const {
    require(!marches_.empty(), Errc::stale_cache, "no travel times computed");
    return marches_.at(static_cast<std::size_t>(source));
  }

 private:
  TensorMesh mesh_;
  std::vector<Index> sources_;
  SparseMatrix receivers_;
  SparseMatrix receivers_t_;
  double source_radius_;
  std::vector<MarchResult> marches_;
};

struct EikonalForwardResult {
  DenseBlock<double> data;    ///< n_p x n_q
  DenseBlock<double> fields;  ///< N x n_q
  std::vector<std::vector<Index>> order;
};

inline EikonalForwardResult fast_marching_solve(EikonalProblem& p, std::span<const double> m) {
  EikonalForwardResult r;
  r.data = DenseBlock<double>(p.num_receivers(), p.num_sources());
  r.data.data = p.simulate(m);
  r.fields = DenseBlock<double>(p.mesh().num_cells(), p.num_sources());
  for (Index j = 0; j < p.num_sources(); ++j) {
    const auto& mr = p.march(j);
    std::copy(mr.times.begin(), mr.times.end(), r.fields.col(j).begin());
    r.order.push_back(mr.order);
  }
  return r;
}

inline Vector eikonal_sens_matvec(const EikonalProblem& p, std::span<const double> m, std::span<const double> v) {
  return p.sens_matvec(m, v);
}
inline Vector eikonal_sens_tmatvec(const EikonalProblem& p, std::span<const double> m, std::span<const double> w) {
  return p.sens_tmatvec(m, w);
}

}  // namespace geoinv

#endif  // GEOINV_EIKONAL_HPP
