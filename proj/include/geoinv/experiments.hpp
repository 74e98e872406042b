#ifndef GEOINV_EXPERIMENTS_HPP
#define GEOINV_EXPERIMENTS_HPP

#include <random>

#include "geoinv/dc.hpp"
#include "geoinv/eikonal.hpp"
#include "geoinv/helmholtz.hpp"
#include "geoinv/inverse.hpp"

namespace geoinv {

/// Velocity model: linear increase with depth from `top` to `bottom`, plus
/// an elliptic high-velocity body. Depth runs down from the upper side of
/// the last axis.
struct SaltModel {
  double top = 1.5;
  double bottom = 3.0;
  double salt = 4.5;
  std::array<double, 2> lateral_center{0.5, 0.5};  ///< fractions of the horizontal extents
  std::array<double, 2> lateral_radius{0.3, 0.3};
  double depth_center = 0.3;  ///< fractions of the vertical extent, measured from the top
  double depth_radius = 0.15;

  Vector background(const TensorMesh& mesh) const {
    Vector v(static_cast<std::size_t>(mesh.num_cells()));
    const int z = mesh.dim() - 1;
    for (Index c = 0; c < mesh.num_cells(); ++c) {
      const auto x = mesh.cell_center(c);
      const double depth = (mesh.origin(z) + mesh.extent(z) - x[z]) / mesh.extent(z);
      v[c] = top + (bottom - top) * depth;
    }
    return v;
  }

  Vector truth(const TensorMesh& mesh) const {
    auto v = background(mesh);
    const int z = mesh.dim() - 1;
    for (Index c = 0; c < mesh.num_cells(); ++c) {
      const auto x = mesh.cell_center(c);
      double r = 0.0;
      for (int a = 0; a < mesh.dim(); ++a) {
        const double f = (x[a] - mesh.origin(a)) / mesh.extent(a);
        const double d = a == z ? (1.0 - f - depth_center) / depth_radius
                                : (f - lateral_center[a]) / lateral_radius[a];
        r += d * d;
      }
      if (r <= 1.0) v[c] = salt;
    }
    return v;
  }
};

/// Adds i.i.d. Gaussian noise with standard deviation level * mean(|d|) and
/// returns the matching inverse-standard-deviation weights.
struct NoisyData {
  Vector observed;
  Vector weights;
};

inline NoisyData add_noise(const Vector& clean, double level, std::mt19937_64& rng) {
  double mean = 0.0;
  for (double x : clean) mean += std::abs(x);
  mean /= static_cast<double>(std::max<std::size_t>(1, clean.size()));
  const double sd = level * mean;
  NoisyData out{clean, Vector(clean.size(), sd > 0.0 ? 1.0 / sd : 1.0)};
  if (sd > 0.0) {
    std::normal_distribution<double> n(0.0, sd);
    for (auto& x : out.observed) x += n(rng);
  }
  return out;
}

/// Evenly spaced integer positions strictly inside [0, n).
inline std::vector<Index> spread(Index n, Index count, Index margin = 1) {
  std::vector<Index> p;
  const Index span = n - 1 - 2 * margin;
  for (Index k = 0; k < count; ++k)
    p.push_back(margin + (count == 1 ? span / 2 : (span * k) / (count - 1)));
  return p;
}

/// Cell on the free surface (upper side of the last axis) at position i
/// along the first axis; 3D surveys run along the middle of the second axis.
inline Index surface_cell(const TensorMesh& mesh, Index i) {
  const Index top = mesh.n(mesh.dim() - 1) - 1;
  return mesh.dim() == 2 ? mesh.cell_index(i, top) : mesh.cell_index(i, mesh.n(1) / 2, top);
}

inline std::array<double, 3> surface_point(const TensorMesh& mesh, Index i) {
  return mesh.cell_center(surface_cell(mesh, i));
}

/// Mesh whose cells merge `factor` consecutive cells along every axis.
inline TensorMesh coarsen_mesh(const TensorMesh& mesh, Index factor) {
  std::vector<std::vector<double>> widths;
  std::vector<double> origin;
  for (int a = 0; a < mesh.dim(); ++a) {
    require(mesh.n(a) % factor == 0, Errc::invalid_argument,
            "axis " + std::to_string(a) + " is not divisible by the coarsening factor");
    std::vector<double> w;
    for (Index i = 0; i < mesh.n(a); i += factor) {
      double s = 0.0;
      for (Index k = 0; k < factor; ++k) s += mesh.widths(a)[i + k];
      w.push_back(s);
    }
    widths.push_back(std::move(w));
    origin.push_back(mesh.origin(a));
  }
  return build_tensor_mesh(mesh.dim(), std::move(widths), std::move(origin));
}

struct DcSurvey {
  Index coarsening = 2;
  Index sources = 8;
  double noise = 0.01;
  ModelMap map = ModelMap::vel_to_cond(0.1, 1.0, 3.0);
  SolverSpec solver{};
};

/// Surface dipole sources spanning half the line, adjacent-electrode
/// receivers; simulated on a coarsened mesh linked by interpolation.
inline std::vector<MisfitTerm> make_dc_terms(const TensorMesh& model_mesh, const Vector& truth, const DcSurvey& o,
                                             std::mt19937_64& rng) {
  require(o.sources >= 1, Errc::invalid_argument, "dc survey needs at least one source");
  const auto dm = coarsen_mesh(model_mesh, o.coarsening);
  const Index nd = dm.n(0);
  require(nd >= 4, Errc::invalid_argument, "dc forward mesh needs at least 4 cells along the survey line");
  std::vector<std::pair<std::array<double, 3>, std::array<double, 3>>> rec;
  for (Index i = 0; i + 1 < nd; ++i) rec.push_back({surface_point(dm, i), surface_point(dm, i + 1)});
  const auto transfer = interp_mesh_to_mesh(model_mesh, dm).matrix;
  const auto sigma = o.map.apply(transfer * truth).values;
  const Index half = nd / 2;
  std::vector<MisfitTerm> terms;
  for (Index k = 0; k < o.sources; ++k) {
    const Index a = (k * (nd - half)) / std::max<Index>(1, o.sources - 1);
    const Index b = std::min(nd - 1, a + half);
    auto p = std::make_unique<DcProblem>(dm, dipole_matrix(dm, {{surface_point(dm, a), surface_point(dm, b)}}),
                                         dipole_matrix(dm, rec), o.solver);
    const auto clean = p->simulate(sigma);
    auto noisy = add_noise(clean, o.noise, rng);
    terms.emplace_back(std::move(p), noisy.observed, noisy.weights, o.map, transfer, MisfitKind::weighted_l2, 1e-3,
                       "dc");
  }
  return terms;
}

struct EikonalSurvey {
  Index sources = 8;
  double noise = 0.01;
  double source_radius = 0.0;
};

/// Surface shots, travel times recorded at every surface cell of the line.
inline std::vector<MisfitTerm> make_eikonal_terms(const TensorMesh& mesh, const Vector& truth, const EikonalSurvey& o,
                                                  std::mt19937_64& rng) {
  require(o.sources >= 1, Errc::invalid_argument, "eikonal survey needs at least one source");
  const Index n = mesh.n(0);
  std::vector<Index> rcv;
  for (Index i = 0; i < n; ++i) rcv.push_back(surface_cell(mesh, i));
  const auto slowness2 = ModelMap::slowness_squared().apply(truth).values;
  std::vector<MisfitTerm> terms;
  for (Index i : spread(n, o.sources)) {
    auto p = std::make_unique<EikonalProblem>(mesh, std::vector<Index>{surface_cell(mesh, i)}, point_matrix(mesh, rcv),
                                              o.source_radius);
    const auto clean = p->simulate(slowness2);
    auto noisy = add_noise(clean, o.noise, rng);
    terms.emplace_back(std::move(p), noisy.observed, noisy.weights, ModelMap::slowness_squared(), std::nullopt,
                       MisfitKind::weighted_l2, 1e-3, "eikonal");
  }
  return terms;
}

struct HelmholtzSurvey {
  std::vector<double> frequencies{0.3, 0.45, 0.75, 1.05};  ///< angular frequencies
  Index pad = 8;
  double strength = 2.0;
  Index sources = 6;
  double noise = 0.01;
  SolverSpec solver{};
  Index source_batch = 27;
};

/// One term per frequency: surface point sources and receivers inside the
/// unpadded part of the line, absorbing layer everywhere but the free surface,
/// unit density. The model is velocity; the forward problem sees 1/v^2.
inline std::vector<MisfitTerm> make_helmholtz_terms(const TensorMesh& mesh, const Vector& truth,
                                                    const HelmholtzSurvey& o, std::mt19937_64& rng) {
  require(o.sources >= 1, Errc::invalid_argument, "helmholtz survey needs at least one source");
  const Index inner = mesh.n(0) - 2 * o.pad;
  require(inner >= 2, Errc::invalid_padding, "padding leaves no room for receivers");
  const auto n = static_cast<std::size_t>(mesh.num_cells());
  const auto gamma = build_attenuation_layer(mesh, o.pad, o.strength);
  std::vector<Index> src, rec;
  for (Index i : spread(inner, o.sources)) src.push_back(surface_cell(mesh, o.pad + i));
  for (Index i = 0; i < inner; ++i) rec.push_back(surface_cell(mesh, o.pad + i));
  const auto m_true = ModelMap::slowness_squared().apply(truth).values;
  std::vector<MisfitTerm> terms;
  for (double w : o.frequencies) {
    require(w > 0.0, Errc::invalid_argument, "frequencies must be positive");
    auto p = std::make_unique<HelmholtzProblem>(mesh, Vector(n, 1.0), gamma, w, point_matrix(mesh, src),
                                                point_matrix(mesh, rec), o.solver, FieldStorage{}, o.source_batch);
    const auto clean = p->simulate(m_true);
    auto noisy = add_noise(clean, o.noise, rng);
    terms.emplace_back(std::move(p), noisy.observed, noisy.weights, ModelMap::slowness_squared(), std::nullopt,
                       MisfitKind::weighted_l2, 1e-3, "helmholtz");
  }
  return terms;
}

struct JointOptions {
  Index n = 32;
  double h = 1.0;
  DcSurvey dc{};
  EikonalSurvey eikonal{};
  std::uint64_t seed = 1;
  SaltModel model{};
};

struct JointSetup {
  TensorMesh model_mesh;
  Vector truth;
  Vector start;
  std::vector<MisfitTerm> dc_terms;
  std::vector<MisfitTerm> eikonal_terms;

  std::vector<MisfitTerm> terms(bool dc, bool eikonal) const {
    std::vector<MisfitTerm> t;
    if (dc)
      for (const auto& x : dc_terms) t.push_back(x);
    if (eikonal)
      for (const auto& x : eikonal_terms) t.push_back(x);
    return t;
  }
};

/// 2D joint DC + travel-time desk survey on an n x n velocity model.
inline JointSetup build_joint_setup(const JointOptions& o) {
  JointSetup s{TensorMesh::uniform({o.n, o.n}, {o.h, o.h}), {}, {}, {}, {}};
  s.truth = o.model.truth(s.model_mesh);
  s.start = o.model.background(s.model_mesh);
  std::mt19937_64 rng(o.seed);
  s.dc_terms = make_dc_terms(s.model_mesh, s.truth, o.dc, rng);
  s.eikonal_terms = make_eikonal_terms(s.model_mesh, s.truth, o.eikonal, rng);
  return s;
}

struct FwiOptions {
  Index nx = 40;  ///< unpadded cells along the line
  Index nz = 20;  ///< unpadded cells in depth
  double h = 1.0;
  HelmholtzSurvey survey{};
  std::uint64_t seed = 2;
  SaltModel model{1.5, 3.0, 4.5, {0.5, 0.5}, {0.2, 0.2}, 0.45, 0.22};
};

struct FwiSetup {
  TensorMesh mesh;
  Vector truth;
  Vector start;
  std::vector<MisfitTerm> terms;  ///< one per frequency, in survey order
  std::vector<double> frequencies;

  std::vector<MisfitTerm> terms_for(const std::vector<double>& freqs) const {
    std::vector<MisfitTerm> t;
    for (double f : freqs) {
      auto it = std::find(frequencies.begin(), frequencies.end(), f);
      require(it != frequencies.end(), Errc::invalid_argument, "frequency " + std::to_string(f) + " not in survey");
      t.push_back(terms[static_cast<std::size_t>(it - frequencies.begin())]);
    }
    return t;
  }
};

/// 2D frequency-domain desk survey; the mesh carries the absorbing padding
/// on both sides and at depth.
inline FwiSetup build_fwi_setup(const FwiOptions& o) {
  const Index pad = o.survey.pad;
  FwiSetup s{TensorMesh::uniform({o.nx + 2 * pad, o.nz + pad}, {o.h, o.h}), {}, {}, {}, o.survey.frequencies};
  s.truth = o.model.truth(s.mesh);
  s.start = o.model.background(s.mesh);
  std::mt19937_64 rng(o.seed);
  s.terms = make_helmholtz_terms(s.mesh, s.truth, o.survey, rng);
  return s;
}

inline double relative_error(std::span<const double> m, std::span<const double> truth) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    num += (m[i] - truth[i]) * (m[i] - truth[i]);
    den += truth[i] * truth[i];
  }
  return std::sqrt(num / den);
}

}  // namespace geoinv

#endif  // GEOINV_EXPERIMENTS_HPP
