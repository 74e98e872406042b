#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "geoinv/helmholtz.hpp"
#include "oracles.hpp"

using namespace geoinv;

namespace {

struct Medium {
  TensorMesh mesh;
  Vector rho, gamma, m;
};

Medium padded_setup(Index nx, Index ny, Index pad, std::mt19937& rng) {
  Medium s{TensorMesh::uniform({nx, ny}, {1.0, 1.0}), {}, {}, {}};
  const auto n = static_cast<std::size_t>(s.mesh.num_cells());
  s.rho = oracle::random_vector(rng, n, 0.8, 1.2);
  s.gamma = build_attenuation_layer(s.mesh, pad, 1.0);
  s.m = oracle::random_vector(rng, n, 0.3, 0.6);
  return s;
}

HelmholtzProblem small_problem(std::mt19937& rng, Medium& s, double omega = 1.1) {
  s = padded_setup(16, 8, 2, rng);
  std::vector<Index> src, rec;
  for (Index i = 3; i < 13; i += 3) src.push_back(s.mesh.cell_index(i, 7));
  for (Index i = 2; i < 14; ++i) rec.push_back(s.mesh.cell_index(i, 6));
  return HelmholtzProblem(s.mesh, s.rho, s.gamma, omega, point_matrix(s.mesh, src), point_matrix(s.mesh, rec));
}

}  // namespace

TEST(AttenuationLayer, ZeroPaddingGivesZero) {
  auto mesh = TensorMesh::uniform({20, 10}, {1.0, 1.0});
  for (double g : build_attenuation_layer(mesh, 0, 5.0)) EXPECT_EQ(g, 0.0);
}

TEST(AttenuationLayer, TenCellPaddingOn165Axis) {
  auto mesh = TensorMesh::uniform({165, 80}, {1.0, 1.0});
  const auto g = build_attenuation_layer(mesh, 10, 2.0);
  const Index mid_y = 40;
  for (Index i = 0; i < 165; ++i) {
    const double v = g[mesh.cell_index(i, mid_y)];
    if (i < 10 || i >= 155)
      EXPECT_GT(v, 0.0) << i;
    else
      EXPECT_EQ(v, 0.0) << i;
  }
  // Free surface at the top of the last axis: no ramp there, ramp at the bottom.
  const Index mid_x = 80;
  for (Index j = 0; j < 80; ++j) {
    const double v = g[mesh.cell_index(mid_x, j)];
    if (j < 10)
      EXPECT_GT(v, 0.0) << j;
    else
      EXPECT_EQ(v, 0.0) << j;
  }
  EXPECT_EQ(g[mesh.cell_index(0, 0)], 2.0);
  EXPECT_EQ(g[mesh.cell_index(164, 0)], 2.0);
  EXPECT_EQ(g[mesh.cell_index(mid_x, 79)], 0.0);
}

TEST(AttenuationLayer, RampIsMonotoneTowardBoundary) {
  auto mesh = TensorMesh::uniform({40, 30}, {1.0, 1.0});
  const auto g = build_attenuation_layer(mesh, 8, 3.0, std::nullopt);
  for (Index j = 0; j < 30; ++j) {
    for (Index i = 1; i <= 20; ++i) EXPECT_LE(g[mesh.cell_index(i, j)], g[mesh.cell_index(i - 1, j)]);
    for (Index i = 20; i + 1 < 40; ++i) EXPECT_LE(g[mesh.cell_index(i, j)], g[mesh.cell_index(i + 1, j)]);
  }
  EXPECT_GT(g[mesh.cell_index(20, 29)], 0.0);
}

TEST(AttenuationLayer, OversizedPaddingRejected) {
  auto mesh = TensorMesh::uniform({20, 10}, {1.0, 1.0});
  try {
    build_attenuation_layer(mesh, 5, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_padding);
  }
}

TEST(HelmholtzOperator, LowFrequencyLimitIsNeumannLaplacian) {
  std::mt19937 rng(1);
  Medium s = padded_setup(6, 5, 1, rng);
  const double omega = 1e-6;
  HelmholtzProblem p(s.mesh, s.rho, s.gamma, omega, point_matrix(s.mesh, {0}), point_matrix(s.mesh, {1}));
  const auto h = p.assemble(s.m).to_dense();
  // Dense oracle: -sum over neighbours of (area / distance) * arithmetic mean of 1/rho.
  const auto n = s.mesh.num_cells();
  for (Index c = 0; c < n; ++c) {
    const auto sc = s.mesh.cell_subscript(c);
    double diag = 0.0;
    for (int a = 0; a < 2; ++a)
      for (int step : {-1, 1}) {
        auto t = sc;
        t[a] += step;
        if (t[a] < 0 || t[a] >= s.mesh.n(a)) continue;
        const Index nb = s.mesh.cell_index(t[0], t[1]);
        const double w = 0.5 * (1.0 / s.rho[c] + 1.0 / s.rho[nb]);
        EXPECT_NEAR(h[c][nb].real(), w, 1e-14);
        diag -= w;
      }
    EXPECT_NEAR(h[c][c].real(), diag, 1e-10);
  }
}

TEST(HelmholtzOperator, NoAttenuationGivesRealMatrix) {
  std::mt19937 rng(2);
  Medium s = padded_setup(8, 6, 0, rng);
  HelmholtzProblem p(s.mesh, s.rho, s.gamma, 2.0, point_matrix(s.mesh, {0}), point_matrix(s.mesh, {1}));
  for (const auto& v : p.assemble(s.m).values()) EXPECT_EQ(v.imag(), 0.0);
}

TEST(HelmholtzOperator, ComplexSymmetricNotHermitian) {
  std::mt19937 rng(3);
  Medium s = padded_setup(10, 8, 2, rng);
  HelmholtzProblem p(s.mesh, s.rho, s.gamma, 1.5, point_matrix(s.mesh, {0}), point_matrix(s.mesh, {1}));
  const auto h = p.assemble(s.m);
  EXPECT_EQ(asymmetry(h), 0.0);
  bool imag_diag = false;
  for (auto d : h.diagonal_values()) imag_diag |= d.imag() != 0.0;
  EXPECT_TRUE(imag_diag);
}

TEST(HelmholtzOperator, RejectsNonPositiveSlowness) {
  std::mt19937 rng(4);
  Medium s = padded_setup(6, 6, 1, rng);
  HelmholtzProblem p(s.mesh, s.rho, s.gamma, 1.0, point_matrix(s.mesh, {0}), point_matrix(s.mesh, {1}));
  s.m[5] = -0.1;
  try {
    p.assemble(s.m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_coefficient);
  }
}

// On an n x 1 strip with unit cells, rows away from the source satisfy
// u_{k-1} - 2 u_k + u_{k+1} + omega^2 m u_k = 0; with the zero-flux end this
// gives u_k = C cos(theta (k - n + 1/2)) where cos(theta) = 1 - omega^2 m / 2.
TEST(HelmholtzOperator, StripFollowsDiscreteDispersion) {
  const Index n = 60;
  const double c = 1.7, omega = 0.9;
  const double m = 1.0 / (c * c);
  auto mesh = TensorMesh::uniform({n, 1}, {1.0, 1.0});
  HelmholtzProblem p(mesh, Vector(n, 1.0), Vector(n, 0.0), omega, point_matrix(mesh, {0}), point_matrix(mesh, {1}));
  p.simulate(Vector(n, m));
  const auto u = p.fields();
  const double theta = std::acos(1.0 - omega * omega * m / 2.0);
  const double amp = u(n - 1, 0).real() / std::cos(theta * -0.5);
  for (Index k = 1; k < n; ++k) {
    const double exact = amp * std::cos(theta * (static_cast<double>(k) - static_cast<double>(n) + 0.5));
    EXPECT_NEAR(u(k, 0).real(), exact, 1e-9 * std::abs(amp));
    EXPECT_NEAR(u(k, 0).imag(), 0.0, 1e-12 * std::abs(amp));
  }
  // The discrete wavenumber differs from the continuous omega / c.
  EXPECT_GT(theta, omega / c);
}

TEST(HelmholtzForward, BatchesOf27MatchSingleBatchBitwise) {
  std::mt19937 rng(5);
  Medium s = padded_setup(20, 12, 2, rng);
  std::vector<Index> src, rec;
  for (Index k = 0; k < 60; ++k) src.push_back((k * 7) % s.mesh.num_cells());
  for (Index i = 0; i < 20; ++i) rec.push_back(s.mesh.cell_index(i, 10));
  const auto q = point_matrix(s.mesh, src);
  const auto pr = point_matrix(s.mesh, rec);
  HelmholtzProblem batched(s.mesh, s.rho, s.gamma, 1.2, q, pr, {}, {}, 27);
  HelmholtzProblem whole(s.mesh, s.rho, s.gamma, 1.2, q, pr, {}, {}, 60);
  EXPECT_EQ(batched.simulate(s.m), whole.simulate(s.m));
}

TEST(HelmholtzForward, ReciprocityUnderSourceReceiverSwap) {
  std::mt19937 rng(6);
  Medium s = padded_setup(24, 16, 3, rng);
  const Index a = s.mesh.cell_index(5, 14), b = s.mesh.cell_index(18, 9);
  HelmholtzProblem ab(s.mesh, s.rho, s.gamma, 1.3, point_matrix(s.mesh, {a}), point_matrix(s.mesh, {b}));
  HelmholtzProblem ba(s.mesh, s.rho, s.gamma, 1.3, point_matrix(s.mesh, {b}), point_matrix(s.mesh, {a}));
  const auto d1 = ab.simulate(s.m);
  const auto d2 = ba.simulate(s.m);
  EXPECT_NEAR(d1[0], d2[0], 1e-12 * std::hypot(d1[0], d1[1]));
  EXPECT_NEAR(d1[1], d2[1], 1e-12 * std::hypot(d1[0], d1[1]));
}

TEST(HelmholtzForward, ResidualOn64By32Mesh) {
  std::mt19937 rng(7);
  Medium s = padded_setup(64, 32, 6, rng);
  std::vector<Index> src;
  for (Index i = 8; i < 56; i += 8) src.push_back(s.mesh.cell_index(i, 31));
  const auto q = point_matrix(s.mesh, src);
  HelmholtzProblem p(s.mesh, s.rho, s.gamma, 1.0, q, point_matrix(s.mesh, {0}));
  auto r = helmholtz_forward(p, s.m);
  const auto h = p.assemble(s.m);
  for (Index j = 0; j < r.fields.cols; ++j) {
    auto res = h * r.fields.col(j);
    res[src[j]] -= 1.0;
    EXPECT_LE(norm2<Complex>(res), 1e-8);
  }
  EXPECT_EQ(r.data.rows, 1);
  EXPECT_EQ(r.data.cols, static_cast<Index>(src.size()));
}

TEST(HelmholtzForward, AbsorbingLayerSuppressesBoundaryAmplitude) {
  const Index n = 121, pad = 20;
  auto mesh = TensorMesh::uniform({n, n}, {1.0, 1.0});
  const auto gamma = build_attenuation_layer(mesh, pad, 2.0, std::nullopt);
  const double kappa = 2.0 * std::numbers::pi / 10.0;
  const Index centre = mesh.cell_index(60, 60);
  HelmholtzProblem p(mesh, Vector(mesh.num_cells(), 1.0), gamma, kappa, point_matrix(mesh, {centre}),
                     point_matrix(mesh, {mesh.cell_index(0, 60), mesh.cell_index(60, 0)}));
  const auto d = p.unpack(p.simulate(Vector(mesh.num_cells(), 1.0)));
  // Free-space amplitude of the 2D Green's function |H0(kappa r)| / 4 at r = 60.
  const double r = 60.0;
  const double free = std::hypot(std::cyl_bessel_j(0.0, kappa * r), std::cyl_neumann(0.0, kappa * r)) / 4.0;
  EXPECT_LE(std::abs(d(0, 0)), 0.05 * free);
  EXPECT_LE(std::abs(d(1, 0)), 0.05 * free);
}

TEST(HelmholtzSensitivity, ZeroInputsGiveZero) {
  std::mt19937 rng(8);
  Medium s;
  auto p = small_problem(rng, s);
  p.simulate(s.m);
  EXPECT_EQ(norm_inf(p.sens_matvec(s.m, Vector(s.m.size(), 0.0))), 0.0);
  EXPECT_EQ(norm_inf(p.sens_tmatvec(s.m, Vector(static_cast<std::size_t>(p.data_size()), 0.0))), 0.0);
}

TEST(HelmholtzSensitivity, CentralDifferenceOracle) {
  std::mt19937 rng(9);
  Medium s;
  auto p = small_problem(rng, s);
  const auto v = oracle::random_vector(rng, s.m.size());
  auto probe = p.clone();
  const auto fd = oracle::central_difference([&](const Vector& m) { return probe->simulate(m); }, s.m, v, 1e-6);
  p.simulate(s.m);
  EXPECT_LE(oracle::rel_diff(p.sens_matvec(s.m, v), fd), 1e-5);
}

TEST(HelmholtzSensitivity, AdjointIdentity) {
  std::mt19937 rng(10);
  Medium s;
  auto p = small_problem(rng, s);
  p.simulate(s.m);
  for (int k = 0; k < 20; ++k) {
    const auto v = oracle::random_vector(rng, s.m.size());
    const auto w = oracle::random_vector(rng, static_cast<std::size_t>(p.data_size()));
    const double lhs = oracle::inner(p.sens_matvec(s.m, v), w);
    const double rhs = oracle::inner(v, p.sens_tmatvec(s.m, w));
    EXPECT_LE(std::abs(lhs - rhs), 1e-11 * std::max(std::abs(lhs), std::abs(rhs))) << "pair " << k;
  }
}

TEST(HelmholtzSensitivity, TaylorRemainderIsSecondOrder) {
  std::mt19937 rng(11);
  Medium s;
  auto p = small_problem(rng, s);
  const auto v = oracle::random_vector(rng, s.m.size(), -0.1, 0.1);
  p.simulate(s.m);
  const auto jv = p.sens_matvec(s.m, v);
  auto probe = p.clone();
  EXPECT_GE(oracle::taylor_slope([&](const Vector& m) { return probe->simulate(m); }, s.m, v, jv), 1.9);
}

TEST(HelmholtzSensitivity, BiCgStabAgreesWithDirect) {
  std::mt19937 rng(12);
  Medium s;
  auto pd = small_problem(rng, s);
  HelmholtzProblem pi(s.mesh, s.rho, s.gamma, 1.1, point_matrix(s.mesh, {s.mesh.cell_index(3, 7)}),
                      point_matrix(s.mesh, {s.mesh.cell_index(9, 6)}),
                      SolverSpec{SolverKind::bicgstab, 1e-12, 5000, 1.0, PreconditionerKind::jacobi});
  HelmholtzProblem pdd(s.mesh, s.rho, s.gamma, 1.1, point_matrix(s.mesh, {s.mesh.cell_index(3, 7)}),
                       point_matrix(s.mesh, {s.mesh.cell_index(9, 6)}));
  EXPECT_LE(oracle::rel_diff(pi.simulate(s.m), pdd.simulate(s.m)), 1e-8);
}

TEST(HelmholtzSensitivity, StaleCacheRejected) {
  std::mt19937 rng(13);
  Medium s;
  auto p = small_problem(rng, s);
  p.simulate(s.m);
  auto m2 = s.m;
  m2[0] += 1e-3;
  EXPECT_THROW(p.sens_matvec(m2, Vector(m2.size(), 1.0)), Error);
}

TEST(HelmholtzSensitivity, DemotedFieldsStayWithinSinglePrecision) {
  std::mt19937 rng(14);
  Medium s;
  auto p = small_problem(rng, s);
  HelmholtzProblem q(s.mesh, s.rho, s.gamma, 1.1, point_matrix(s.mesh, {s.mesh.cell_index(3, 7), s.mesh.cell_index(6, 7)}),
                     point_matrix(s.mesh, {s.mesh.cell_index(9, 6)}), {}, FieldStorage{FieldPolicy::memory_single});
  HelmholtzProblem r(s.mesh, s.rho, s.gamma, 1.1, point_matrix(s.mesh, {s.mesh.cell_index(3, 7), s.mesh.cell_index(6, 7)}),
                     point_matrix(s.mesh, {s.mesh.cell_index(9, 6)}));
  q.simulate(s.m);
  r.simulate(s.m);
  const auto v = oracle::random_vector(rng, s.m.size());
  EXPECT_LE(oracle::rel_diff(q.sens_matvec(s.m, v), r.sens_matvec(s.m, v)), 1e-6);
}
