#include <gtest/gtest.h>

#include <filesystem>
#include <numbers>

#include "geoinv/dc.hpp"
#include "oracles.hpp"

using namespace geoinv;

namespace {

using Pairs = std::vector<std::pair<std::array<double, 3>, std::array<double, 3>>>;

// Small 2D survey on a uniform n x n mesh with unit cells: horizontal dipoles
// along a few rows.
DcProblem small_survey(Index n, SolverSpec spec = {}, FieldStorage storage = {}) {
  auto mesh = TensorMesh::uniform({n, n}, {1.0, 1.0});
  Pairs src, rec;
  for (Index k = 0; k + 2 < n; k += 2) src.push_back({{k + 0.5, n - 0.5, 0}, {k + 2.5, n - 1.5, 0}});
  for (Index k = 0; k + 1 < n; ++k) rec.push_back({{k + 0.5, n - 0.5, 0}, {k + 1.5, n - 0.5, 0}});
  for (Index k = 0; k + 1 < n; k += 2) rec.push_back({{n - 0.5, k + 0.5, 0}, {n - 0.5, k + 1.5, 0}});
  auto q = dipole_matrix(mesh, src);
  auto p = dipole_matrix(mesh, rec);
  return DcProblem(mesh, q, p, spec, Averaging::harmonic, std::move(storage));
}

Vector random_sigma(std::mt19937& rng, std::size_t n) { return oracle::random_vector(rng, n, 0.5, 2.0); }

}  // namespace

TEST(DcOperator, UnitConductivityMatchesNeumannStencil) {
  const Index nx = 5, ny = 4;
  const double hx = 0.7, hy = 1.3;
  auto mesh = TensorMesh::uniform({nx, ny}, {hx, hy});
  DcProblem p(mesh, SparseMatrix::from_triplets(mesh.num_cells(), 0, {}), SparseMatrix::from_triplets(mesh.num_cells(), 0, {}));
  const Vector sigma(static_cast<std::size_t>(mesh.num_cells()), 1.0);
  const auto a = p.assemble_operator(sigma).to_dense();
  // Five-point Neumann stencil on volume-integrated form: each existing
  // neighbour across axis x contributes hy/hx, across y hx/hy.
  for (Index j = 0; j < ny; ++j)
    for (Index i = 0; i < nx; ++i) {
      const Index c = mesh.cell_index(i, j);
      std::vector<double> row(static_cast<std::size_t>(mesh.num_cells()), 0.0);
      auto couple = [&](Index ii, Index jj, double w) {
        if (ii < 0 || jj < 0 || ii >= nx || jj >= ny) return;
        row[mesh.cell_index(ii, jj)] -= w;
        row[c] += w;
      };
      couple(i - 1, j, hy / hx);
      couple(i + 1, j, hy / hx);
      couple(i, j - 1, hx / hy);
      couple(i, j + 1, hx / hy);
      for (Index k = 0; k < mesh.num_cells(); ++k) EXPECT_NEAR(a[c][k], row[k], 1e-14);
    }
}

TEST(DcOperator, ConstantsInNullspaceAndSymmetric) {
  std::mt19937 rng(3);
  auto mesh = TensorMesh(2, {{0.5, 1.0, 2.0, 1.0}, {1.0, 0.3, 0.8}});
  DcProblem p(mesh, SparseMatrix::from_triplets(mesh.num_cells(), 0, {}), SparseMatrix::from_triplets(mesh.num_cells(), 0, {}));
  const auto a = p.assemble_operator(random_sigma(rng, static_cast<std::size_t>(mesh.num_cells())));
  const auto y = a * Vector(static_cast<std::size_t>(mesh.num_cells()), 3.7);
  EXPECT_LE(norm_inf(y), 1e-13);
  EXPECT_EQ(asymmetry(a), 0.0);
}

TEST(DcOperator, RejectsNonPositiveConductivity) {
  auto p = small_survey(6);
  Vector sigma(36, 1.0);
  sigma[7] = 0.0;
  try {
    p.assemble_operator(sigma);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_coefficient);
  }
  EXPECT_THROW(p.simulate(sigma), Error);
}

TEST(DcForward, RejectsNonZeroSumSources) {
  auto mesh = TensorMesh::uniform({4, 4}, {1.0, 1.0});
  auto q = point_matrix(mesh, {3});
  EXPECT_THROW(DcProblem(mesh, q, q), Error);
}

TEST(DcForward, PolaritySwapNegatesData) {
  auto mesh = TensorMesh::uniform({10, 10}, {1.0, 1.0});
  Pairs src{{{1.5, 9.5, 0}, {7.5, 9.5, 0}}};
  Pairs flipped{{src[0].second, src[0].first}};
  Pairs rec;
  for (int k = 0; k < 9; ++k) rec.push_back({{k + 0.5, 8.5, 0}, {k + 1.5, 8.5, 0}});
  DcProblem a(mesh, dipole_matrix(mesh, src), dipole_matrix(mesh, rec));
  DcProblem b(mesh, dipole_matrix(mesh, flipped), dipole_matrix(mesh, rec));
  const Vector sigma(100, 0.01);
  const auto da = a.simulate(sigma);
  const auto db = b.simulate(sigma);
  for (std::size_t i = 0; i < da.size(); ++i) EXPECT_NEAR(da[i], -db[i], 1e-12 * norm_inf(da));
}

// Line source in a 2D half-space with an insulating surface: the potential
// of a unit injection at s obeys -sigma Laplacian u = delta with image at the
// mirrored point, u(x) = -(ln|x - s| + ln|x - s'|) / (2 pi sigma).
TEST(DcForward, HalfSpaceDipoleMatchesImageSolution) {
  const double sigma0 = 0.1;
  std::vector<double> wx, wy;
  const int core_x = 80, core_y = 30, pad = 16;
  const double grow = 1.3;
  for (int k = pad; k >= 1; --k) wx.push_back(std::pow(grow, k));
  for (int k = 0; k < core_x; ++k) wx.push_back(1.0);
  for (int k = 1; k <= pad; ++k) wx.push_back(std::pow(grow, k));
  for (int k = pad; k >= 1; --k) wy.push_back(std::pow(grow, k));
  for (int k = 0; k < core_y; ++k) wy.push_back(1.0);
  double left = 0.0, depth = 0.0;
  for (int k = 0; k < pad; ++k) left += wx[k];
  for (double w : wy) depth += w;
  TensorMesh mesh(2, {wx, wy}, {-left - core_x / 2.0, -depth});

  const std::array<double, 3> a{-6.5, -0.5, 0}, b{6.5, -0.5, 0};
  Pairs rec;
  for (double x = -30.5; x <= 30.5; x += 2.0) {
    if (std::abs(x - a[0]) < 4.0 || std::abs(x - b[0]) < 4.0) continue;
    rec.push_back({{x, -0.5, 0}, {x + 1.0, -0.5, 0}});
  }
  DcProblem p(mesh, dipole_matrix(mesh, {{a, b}}), dipole_matrix(mesh, rec));
  const auto d = p.simulate(Vector(static_cast<std::size_t>(mesh.num_cells()), sigma0));

  auto green = [&](std::array<double, 3> x, std::array<double, 3> s) {
    const double r1 = std::hypot(x[0] - s[0], x[1] - s[1]);
    const double r2 = std::hypot(x[0] - s[0], x[1] + s[1]);
    return -(std::log(r1) + std::log(r2)) / (2.0 * std::numbers::pi * sigma0);
  };
  auto u = [&](std::array<double, 3> x) { return green(x, a) - green(x, b); };
  for (std::size_t i = 0; i < rec.size(); ++i) {
    const double exact = u(rec[i].first) - u(rec[i].second);
    EXPECT_LE(std::abs(d[i] - exact), 0.05 * std::abs(exact)) << "receiver " << i;
  }
}

TEST(DcForward, SurveyOf32SourcesYields1682By32Data) {
  auto mesh = TensorMesh::uniform({30, 30, 3}, {1.0, 1.0, 1.0});
  const double z = 2.5;
  Pairs src, rec;
  for (int gy = 0; gy < 4; ++gy)
    for (int gx = 0; gx < 4; ++gx) {
      const double cx = 10.5 + 3 * gx, cy = 10.5 + 3 * gy;
      src.push_back({{cx - 8, cy, z}, {cx + 8, cy, z}});
    }
  for (int gy = 0; gy < 4; ++gy)
    for (int gx = 0; gx < 4; ++gx) {
      const double cx = 10.5 + 3 * gx, cy = 10.5 + 3 * gy;
      src.push_back({{cx, cy - 8, z}, {cx, cy + 8, z}});
    }
  for (int j = 0; j < 29; ++j)
    for (int i = 0; i < 29; ++i) rec.push_back({{i + 0.5, j + 0.5, z}, {i + 1.5, j + 0.5, z}});
  for (int j = 0; j < 29; ++j)
    for (int i = 0; i < 29; ++i) rec.push_back({{i + 0.5, j + 0.5, z}, {i + 0.5, j + 1.5, z}});
  DcProblem p(mesh, dipole_matrix(mesh, src), dipole_matrix(mesh, rec),
              SolverSpec{SolverKind::pcg_ssor, 1e-10, 2000});
  auto r = dc_forward(p, Vector(static_cast<std::size_t>(mesh.num_cells()), 1.0));
  EXPECT_EQ(r.data.rows, 1682);
  EXPECT_EQ(r.data.cols, 32);
  EXPECT_EQ(r.fields.rows, mesh.num_cells());
  EXPECT_EQ(r.fields.cols, 32);
}

TEST(DcForward, DataInvariantUnderFieldGauge) {
  std::mt19937 rng(5);
  auto p = small_survey(8);
  const auto sigma = random_sigma(rng, 64);
  p.simulate(sigma);
  auto u = p.fields();
  const auto& rec = p.receivers();
  for (Index j = 0; j < u.cols; ++j) {
    const auto d0 = rec.transpose_multiply(u.col(j));
    std::vector<double> shifted(u.col(j).begin(), u.col(j).end());
    for (auto& x : shifted) x += 42.0;
    const auto d1 = rec.transpose_multiply(shifted);
    for (std::size_t i = 0; i < d0.size(); ++i) EXPECT_NEAR(d0[i], d1[i], 1e-12 * 42.0);
  }
}

TEST(DcSensitivity, ZeroInputsGiveZero) {
  std::mt19937 rng(7);
  auto p = small_survey(8);
  const auto sigma = random_sigma(rng, 64);
  p.simulate(sigma);
  EXPECT_EQ(norm_inf(p.sens_matvec(sigma, Vector(64, 0.0))), 0.0);
  EXPECT_EQ(norm_inf(p.sens_tmatvec(sigma, Vector(static_cast<std::size_t>(p.data_size()), 0.0))), 0.0);
}

TEST(DcSensitivity, CentralDifferenceOracle) {
  std::mt19937 rng(11);
  auto p = small_survey(8);
  const auto sigma = random_sigma(rng, 64);
  const auto v = oracle::random_vector(rng, 64);
  auto probe = p.clone();
  auto fwd = [&](const Vector& s) { return probe->simulate(s); };
  const auto fd = oracle::central_difference(fwd, sigma, v, 1e-6);
  p.simulate(sigma);
  const auto jv = p.sens_matvec(sigma, v);
  EXPECT_LE(oracle::rel_diff(jv, fd), 1e-5);
}

TEST(DcSensitivity, LinearInPerturbation) {
  std::mt19937 rng(13);
  auto p = small_survey(8);
  const auto sigma = random_sigma(rng, 64);
  const auto v = oracle::random_vector(rng, 64);
  p.simulate(sigma);
  const auto jv = p.sens_matvec(sigma, v);
  const auto j3v = p.sens_matvec(sigma, scaled(3.0, std::span<const double>(v)));
  EXPECT_LE(oracle::rel_diff(j3v, scaled(3.0, std::span<const double>(jv))), 1e-13);
}

TEST(DcSensitivity, AdjointIdentityTwentyPairs) {
  std::mt19937 rng(17);
  auto p = small_survey(8);
  const auto sigma = random_sigma(rng, 64);
  p.simulate(sigma);
  for (int k = 0; k < 20; ++k) {
    const auto v = oracle::random_vector(rng, 64);
    const auto w = oracle::random_vector(rng, static_cast<std::size_t>(p.data_size()));
    const double lhs = oracle::inner(p.sens_matvec(sigma, v), w);
    const double rhs = oracle::inner(v, p.sens_tmatvec(sigma, w));
    EXPECT_LE(std::abs(lhs - rhs), 1e-11 * std::max(std::abs(lhs), std::abs(rhs))) << "pair " << k;
  }
}

TEST(DcSensitivity, TransposeMatchesDenseAssembly) {
  std::mt19937 rng(19);
  auto p = small_survey(6);
  const auto sigma = random_sigma(rng, 36);
  p.simulate(sigma);
  const auto cols = oracle::assemble_columns([&](const Vector& e) { return p.sens_matvec(sigma, e); }, 36);
  const auto w = oracle::random_vector(rng, static_cast<std::size_t>(p.data_size()));
  Vector dense(36, 0.0);
  for (std::size_t c = 0; c < 36; ++c) dense[c] = oracle::inner(cols[c], w);
  EXPECT_LE(oracle::rel_diff(p.sens_tmatvec(sigma, w), dense), 1e-11);
}

TEST(DcSensitivity, TaylorRemainderIsSecondOrder) {
  std::mt19937 rng(23);
  auto p = small_survey(8);
  const auto sigma = random_sigma(rng, 64);
  const auto v = oracle::random_vector(rng, 64, -0.3, 0.3);
  p.simulate(sigma);
  const auto jv = p.sens_matvec(sigma, v);
  auto probe = p.clone();
  const double slope = oracle::taylor_slope([&](const Vector& s) { return probe->simulate(s); }, sigma, v, jv);
  EXPECT_GE(slope, 1.9);
}

TEST(DcSensitivity, StaleCacheRejected) {
  std::mt19937 rng(29);
  auto p = small_survey(6);
  auto sigma = random_sigma(rng, 36);
  EXPECT_THROW(p.sens_matvec(sigma, Vector(36, 1.0)), Error);
  p.simulate(sigma);
  sigma[3] *= 1.01;
  try {
    p.sens_tmatvec(sigma, Vector(static_cast<std::size_t>(p.data_size()), 1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::stale_cache);
  }
}

TEST(DcSensitivity, IterativeSolverAgreesWithDirect) {
  std::mt19937 rng(31);
  auto pd = small_survey(8);
  auto pi = small_survey(8, SolverSpec{SolverKind::pcg_ssor, 1e-12, 500});
  const auto sigma = random_sigma(rng, 64);
  const auto v = oracle::random_vector(rng, 64);
  EXPECT_LE(oracle::rel_diff(pi.simulate(sigma), pd.simulate(sigma)), 1e-9);
  EXPECT_LE(oracle::rel_diff(pi.sens_matvec(sigma, v), pd.sens_matvec(sigma, v)), 1e-8);
}

TEST(DcSensitivity, SolveCounterCountsRightHandSides) {
  std::mt19937 rng(37);
  auto p = small_survey(8);
  const auto sigma = random_sigma(rng, 64);
  p.simulate(sigma);
  EXPECT_EQ(p.pde_solves(), p.num_sources());
  p.reset_solve_counter();
  p.sens_matvec(sigma, Vector(64, 1.0));
  p.sens_tmatvec(sigma, Vector(static_cast<std::size_t>(p.data_size()), 1.0));
  EXPECT_EQ(p.pde_solves(), 2 * p.num_sources());
}

TEST(DcSensitivity, StreamedFieldsMatchInMemory) {
  std::mt19937 rng(41);
  const auto dir = std::filesystem::temp_directory_path() / "geoinv_dc_stream_test";
  std::filesystem::remove_all(dir);
  auto mem = small_survey(8);
  auto disk = small_survey(8, {}, FieldStorage{FieldPolicy::disk, dir, Precision::single, 2});
  auto full_disk = small_survey(8, {}, FieldStorage{FieldPolicy::disk, dir, Precision::full, 3});
  const auto sigma = random_sigma(rng, 64);
  const auto v = oracle::random_vector(rng, 64);
  const auto d_mem = mem.simulate(sigma);
  EXPECT_EQ(disk.simulate(sigma), d_mem);
  full_disk.simulate(sigma);
  const auto w = oracle::random_vector(rng, d_mem.size());
  EXPECT_LE(oracle::rel_diff(disk.sens_matvec(sigma, v), mem.sens_matvec(sigma, v)), 1e-6);
  EXPECT_LE(oracle::rel_diff(disk.sens_tmatvec(sigma, w), mem.sens_tmatvec(sigma, w)), 1e-6);
  EXPECT_EQ(full_disk.sens_matvec(sigma, v), mem.sens_matvec(sigma, v));
  std::filesystem::remove_all(dir);
}
