#include <gtest/gtest.h>

#include <cmath>

#include "geoinv/eikonal.hpp"
#include "oracles.hpp"

using namespace geoinv;

namespace {

EikonalProblem grid_problem(Index n, std::vector<Index> sources) {
  auto mesh = TensorMesh::uniform({n, n}, {1.0 / n, 1.0 / n});
  std::vector<Index> rec;
  for (Index i = 0; i < n; ++i) rec.push_back(mesh.cell_index(i, n - 1));
  for (Index j = 0; j + 1 < n; j += 2) rec.push_back(mesh.cell_index(n - 1, j));
  auto p = point_matrix(mesh, rec);
  return EikonalProblem(mesh, std::move(sources), p);
}

Vector smooth_model(const TensorMesh& mesh) {
  Vector m(static_cast<std::size_t>(mesh.num_cells()));
  for (Index c = 0; c < mesh.num_cells(); ++c) {
    const auto x = mesh.cell_center(c);
    m[c] = 1.0 + 0.5 * std::sin(3.1 * x[0] + 0.7) * std::cos(2.3 * x[1]);
  }
  return m;
}

// Max-norm travel-time error against the distance oracle on an n x n
// unit-square mesh, with straight-ray start inside a fixed physical radius.
double distance_error(Index n, double radius) {
  auto mesh = TensorMesh::uniform({n, n}, {1.0 / n, 1.0 / n});
  const Index src = mesh.cell_index(n / 2, n / 2);
  const auto r = fast_marching(mesh, Vector(static_cast<std::size_t>(n * n), 1.0), src, radius);
  const auto xs = mesh.cell_center(src);
  double err = 0.0;
  for (Index c = 0; c < mesh.num_cells(); ++c) {
    const auto x = mesh.cell_center(c);
    err = std::max(err, std::abs(r.times[c] - std::hypot(x[0] - xs[0], x[1] - xs[1])));
  }
  return err;
}

}  // namespace

TEST(FastMarching, StripIsExactInConstantMedium) {
  const Index n = 40;
  auto mesh = TensorMesh::uniform({n, 1}, {0.25, 1.0});
  const auto r = fast_marching(mesh, Vector(n, 1.0), 0);
  for (Index k = 0; k < n; ++k) EXPECT_EQ(r.times[k], 0.25 * static_cast<double>(k));
}

TEST(FastMarching, StripAwayFromInteriorSource) {
  const Index n = 21;
  auto mesh = TensorMesh::uniform({n, 1}, {1.0, 1.0});
  const auto r = fast_marching(mesh, Vector(n, 4.0), 7);
  for (Index k = 0; k < n; ++k) EXPECT_EQ(r.times[k], 2.0 * std::abs(static_cast<double>(k - 7)));
}

TEST(FastMarching, DoublingSlownessScalesBySqrtTwo) {
  auto mesh = TensorMesh::uniform({15, 11}, {0.3, 0.5});
  auto m = smooth_model(mesh);
  const auto a = fast_marching(mesh, m, 40);
  for (auto& x : m) x *= 2.0;
  const auto b = fast_marching(mesh, m, 40);
  for (Index c = 0; c < mesh.num_cells(); ++c)
    EXPECT_NEAR(b.times[c], std::sqrt(2.0) * a.times[c], 1e-12 * std::max(1.0, a.times[c]));
  EXPECT_EQ(a.order, b.order);
}

TEST(FastMarching, FirstOrderConvergenceToDistance) {
  std::vector<double> h, err;
  for (Index n : {21, 41, 81, 161}) {
    h.push_back(1.0 / static_cast<double>(n));
    err.push_back(distance_error(n, 0.1));
  }
  const double slope = oracle::loglog_slope(h, err);
  EXPECT_GE(slope, 0.8);
  EXPECT_LE(slope, 1.2);
  for (std::size_t k = 1; k < err.size(); ++k) EXPECT_LT(err[k], err[k - 1]);
}

// A single-cell start converges like h log(1/h): slower than first order but
// still monotone.
TEST(FastMarching, PointStartConvergesMonotonically) {
  double prev = 1e300;
  for (Index n : {21, 41, 81}) {
    const double e = distance_error(n, 0.0);
    EXPECT_LT(e, prev);
    prev = e;
  }
}

TEST(FastMarching, CausalityInvariants) {
  auto mesh = TensorMesh::uniform({13, 9, 7}, {1.0, 0.8, 1.2});
  const auto m = smooth_model(mesh);
  const Index src = mesh.cell_index(4, 4, 3);
  const auto r = fast_marching(mesh, m, src);
  ASSERT_EQ(static_cast<Index>(r.order.size()), mesh.num_cells());
  EXPECT_EQ(r.order.front(), src);
  EXPECT_EQ(r.times[src], 0.0);
  std::vector<Index> rank(r.order.size());
  for (std::size_t k = 0; k < r.order.size(); ++k) rank[r.order[k]] = static_cast<Index>(k);
  for (std::size_t k = 1; k < r.order.size(); ++k) EXPECT_GE(r.times[r.order[k]], r.times[r.order[k - 1]]);
  for (Index c = 0; c < mesh.num_cells(); ++c) {
    EXPECT_GE(r.times[c], 0.0);
    const auto& st = r.stencil[c];
    if (c != src) EXPECT_GT(st.count, 0);
    for (int k = 0; k < st.count; ++k) EXPECT_LT(rank[st.nb[k]], rank[c]);
  }
}

TEST(FastMarching, TiesResolvedByLowestIndex) {
  auto mesh = TensorMesh::uniform({5, 5}, {1.0, 1.0});
  const auto r = fast_marching(mesh, Vector(25, 1.0), 12);
  // The four face neighbours of the centre share a travel time of 1.
  EXPECT_EQ((std::vector<Index>{r.order[1], r.order[2], r.order[3], r.order[4]}), (std::vector<Index>{7, 11, 13, 17}));
}

TEST(FastMarching, RejectsBadInput) {
  auto mesh = TensorMesh::uniform({5, 5}, {1.0, 1.0});
  auto p = EikonalProblem(mesh, {3}, point_matrix(mesh, {0}));
  Vector m(25, 1.0);
  m[4] = 0.0;
  EXPECT_THROW(p.simulate(m), Error);
  EXPECT_THROW(EikonalProblem(TensorMesh(2, {{1.0, 2.0}, {1.0, 1.0}}), {0}, point_matrix(mesh, {0})), Error);
}

TEST(EikonalSensitivity, ZeroInputsGiveZero) {
  auto p = grid_problem(12, {5, 77});
  const auto m = smooth_model(p.mesh());
  p.simulate(m);
  EXPECT_EQ(norm_inf(p.sens_matvec(m, Vector(m.size(), 0.0))), 0.0);
  EXPECT_EQ(norm_inf(p.sens_tmatvec(m, Vector(static_cast<std::size_t>(p.data_size()), 0.0))), 0.0);
}

TEST(EikonalSensitivity, CentralDifferenceOracle) {
  std::mt19937 rng(3);
  auto p = grid_problem(12, {5, 77, 130});
  const auto m = smooth_model(p.mesh());
  const auto v = oracle::random_vector(rng, m.size());
  auto probe = p.clone();
  const auto fd = oracle::central_difference([&](const Vector& x) { return probe->simulate(x); }, m, v, 1e-6);
  p.simulate(m);
  EXPECT_LE(oracle::rel_diff(p.sens_matvec(m, v), fd), 1e-5);
}

TEST(EikonalSensitivity, LinearInPerturbation) {
  std::mt19937 rng(4);
  auto p = grid_problem(12, {5, 77});
  const auto m = smooth_model(p.mesh());
  const auto v = oracle::random_vector(rng, m.size());
  p.simulate(m);
  EXPECT_LE(oracle::rel_diff(p.sens_matvec(m, scaled(2.0, std::span<const double>(v))),
                             scaled(2.0, std::span<const double>(p.sens_matvec(m, v)))),
            1e-13);
}

TEST(EikonalSensitivity, AdjointIdentity) {
  std::mt19937 rng(5);
  auto p = grid_problem(12, {5, 77, 130});
  const auto m = smooth_model(p.mesh());
  p.simulate(m);
  for (int k = 0; k < 20; ++k) {
    const auto v = oracle::random_vector(rng, m.size());
    const auto w = oracle::random_vector(rng, static_cast<std::size_t>(p.data_size()));
    const double lhs = oracle::inner(p.sens_matvec(m, v), w);
    const double rhs = oracle::inner(v, p.sens_tmatvec(m, w));
    EXPECT_LE(std::abs(lhs - rhs), 1e-11 * std::max(std::abs(lhs), std::abs(rhs))) << "pair " << k;
  }
}

TEST(EikonalSensitivity, TransposeMatchesDenseAssembly) {
  std::mt19937 rng(6);
  auto p = grid_problem(8, {3, 50});
  const auto m = smooth_model(p.mesh());
  p.simulate(m);
  const auto cols = oracle::assemble_columns([&](const Vector& e) { return p.sens_matvec(m, e); }, m.size());
  const auto w = oracle::random_vector(rng, static_cast<std::size_t>(p.data_size()));
  Vector dense(m.size());
  for (std::size_t c = 0; c < m.size(); ++c) dense[c] = oracle::inner(cols[c], w);
  EXPECT_LE(oracle::rel_diff(p.sens_tmatvec(m, w), dense), 1e-12);
}

TEST(EikonalSensitivity, TaylorRemainderIsSecondOrder) {
  std::mt19937 rng(7);
  auto p = grid_problem(12, {5, 77});
  const auto m = smooth_model(p.mesh());
  const auto v = oracle::random_vector(rng, m.size(), -1.0, 1.0);
  p.simulate(m);
  const auto jv = p.sens_matvec(m, v);
  auto probe = p.clone();
  EXPECT_GE(oracle::taylor_slope([&](const Vector& x) { return probe->simulate(x); }, m, v, jv,
                                 {1e-3, 5e-4, 2.5e-4, 1.25e-4, 6.25e-5}),
            1.9);
}

TEST(EikonalSensitivity, SourceNeighbourhoodStartKeepsAdjointAndDifferences) {
  std::mt19937 rng(8);
  auto mesh = TensorMesh::uniform({12, 12}, {1.0 / 12, 1.0 / 12});
  std::vector<Index> rec;
  for (Index i = 0; i < 12; ++i) rec.push_back(mesh.cell_index(i, 11));
  EikonalProblem p(mesh, {mesh.cell_index(6, 2), mesh.cell_index(2, 6)}, point_matrix(mesh, rec), 0.2);
  const auto m = smooth_model(mesh);
  const auto v = oracle::random_vector(rng, m.size());
  auto probe = p.clone();
  const auto fd = oracle::central_difference([&](const Vector& x) { return probe->simulate(x); }, m, v, 1e-6);
  p.simulate(m);
  const auto jv = p.sens_matvec(m, v);
  EXPECT_LE(oracle::rel_diff(jv, fd), 1e-5);
  const auto w = oracle::random_vector(rng, static_cast<std::size_t>(p.data_size()));
  const double lhs = oracle::inner(jv, w), rhs = oracle::inner(v, p.sens_tmatvec(m, w));
  EXPECT_LE(std::abs(lhs - rhs), 1e-11 * std::abs(lhs));
}

TEST(EikonalSensitivity, StaleCacheRejected) {
  auto p = grid_problem(6, {0});
  auto m = smooth_model(p.mesh());
  p.simulate(m);
  m[1] += 0.1;
  EXPECT_THROW(p.sens_matvec(m, m), Error);
}

TEST(EikonalForward, ResultShapes) {
  auto p = grid_problem(10, {0, 9, 55});
  auto r = fast_marching_solve(p, smooth_model(p.mesh()));
  EXPECT_EQ(r.data.rows, p.num_receivers());
  EXPECT_EQ(r.data.cols, 3);
  EXPECT_EQ(r.fields.rows, 100);
  EXPECT_EQ(r.order.size(), 3U);
  EXPECT_EQ(r.fields(55, 2), 0.0);
}
