#include <gtest/gtest.h>

#include <random>

#include "geoinv/krylov.hpp"
#include "geoinv/mesh.hpp"

using namespace geoinv;

namespace {

using Dense = std::vector<std::vector<double>>;

Vector dense_mul(const Dense& a, const Vector& x) {
  Vector y(a.size(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j) y[i] += a[i][j] * x[j];
  return y;
}

Vector dense_solve(Dense a, Vector b) {
  const std::size_t n = b.size();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a[i][k]) > std::abs(a[p][k])) p = i;
    std::swap(a[k], a[p]);
    std::swap(b[k], b[p]);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a[i][k] / a[k][k];
      for (std::size_t j = k; j < n; ++j) a[i][j] -= f * a[k][j];
      b[i] -= f * b[k];
    }
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= a[i][j] * b[j];
    b[i] = s / a[i][i];
  }
  return b;
}

SparseMatrix random_sparse(std::mt19937& rng, Index n, double density) {
  std::uniform_real_distribution<double> u(0, 1), v(-1, 1);
  std::vector<Triplet<double>> t;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (u(rng) < density) t.push_back({i, j, v(rng)});
  return SparseMatrix::from_triplets(n, n, t);
}

SparseMatrix random_spd(std::mt19937& rng, Index n) {
  auto b = random_sparse(rng, n, 0.15);
  auto a = multiply(b.transpose(), b);
  return add(a, SparseMatrix::identity(n), 1.0, 0.5);
}

// Neumann Laplacian on a mesh with one pinned degree of freedom (SPD).
SparseMatrix pinned_laplacian(const TensorMesh& m) {
  auto g = gradient_operator(m);
  auto l = multiply(g.transpose(), g.scaled(m.face_volumes(), {}));
  std::vector<Triplet<double>> pin{{0, 0, l.at(0, 0)}};
  return add(l, SparseMatrix::from_triplets(l.rows(), l.cols(), pin));
}

double rel_err(const Vector& a, const Vector& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST(Spmv, IdentityAndDiagonal) {
  Vector x = {1.5, -2, 3};
  EXPECT_EQ(SparseMatrix::identity(3) * x, x);
  auto d = SparseMatrix::diagonal(Vector{2, 3});
  EXPECT_EQ(d * Vector({1, 1}), Vector({2, 3}));
  EXPECT_THROW(d * x, Error);
}

TEST(Spmv, MatchesDenseOracleIncludingBlocks) {
  std::mt19937 rng(1);
  auto a = random_sparse(rng, 50, 0.1);
  auto dense = a.to_dense();
  std::normal_distribution<double> n;
  DenseBlock<double> xb(50, 3);
  for (auto& v : xb.data) v = n(rng);
  auto yb = a.multiply(xb);
  for (Index j = 0; j < 3; ++j) {
    Vector x(xb.col(j).begin(), xb.col(j).end());
    auto ref = dense_mul(dense, x);
    Vector y(yb.col(j).begin(), yb.col(j).end());
    EXPECT_LE(rel_err(y, ref), 1e-14);
  }
}

TEST(Cholesky, ScalarAndErrors) {
  auto h = factorize_spd(SparseMatrix::diagonal(Vector{4.0}));
  EXPECT_DOUBLE_EQ(h.solve(Vector{8.0})[0], 2.0);
  try {
    factorize_spd(SparseMatrix::diagonal(Vector{1.0, -1.0, 2.0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::not_spd);
  }
}

TEST(Cholesky, ResidualOnPinnedNeumannOperator) {
  auto m = TensorMesh::uniform({8, 8}, {1.0, 1.0});
  auto a = pinned_laplacian(m);
  auto h = factorize_spd(a);
  std::mt19937 rng(2);
  std::normal_distribution<double> n;
  Vector b(a.rows());
  double mean = 0;
  for (auto& v : b) mean += (v = n(rng));
  for (auto& v : b) v -= mean / b.size();
  auto x = h.solve(b);
  auto r = a * x;
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= b[i];
  EXPECT_LE(norm2(r) / norm2(b), 1e-12);
}

TEST(Cholesky, MatchesDenseSolveOnRandomSpd) {
  std::mt19937 rng(9);
  auto a = random_spd(rng, 40);
  Vector b(40);
  std::normal_distribution<double> n;
  for (auto& v : b) v = n(rng);
  EXPECT_LE(rel_err(factorize_spd(a).solve(b), dense_solve(a.to_dense(), b)), 1e-12);
}

TEST(Cholesky, ComplexSymmetricFactorization) {
  auto m = TensorMesh::uniform({6, 5}, {1.0, 1.0});
  auto l = pinned_laplacian(m).cast<Complex>();
  std::vector<Complex> shift(l.rows(), Complex(-0.3, 0.2));
  auto h = add(l, ComplexSparseMatrix::diagonal(shift));
  SparseLdlt<Complex> f(h);
  std::vector<Complex> b(h.rows());
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = Complex(std::sin(i), std::cos(3.0 * i));
  auto x = f.solve(b);
  auto r = h * x;
  double num = 0, den = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    num += std::norm(r[i] - b[i]);
    den += std::norm(b[i]);
  }
  EXPECT_LE(std::sqrt(num / den), 1e-12);
}

TEST(Preconditioner, JacobiAndSsorReductions) {
  auto d = SparseMatrix::diagonal(Vector{2, 4});
  auto jac = make_preconditioner(d, PreconditionerKind::jacobi);
  Vector z(2);
  jac(Vector{2, 4}, z);
  EXPECT_EQ(z, Vector({1, 1}));
  auto ssor = make_preconditioner(d, PreconditionerKind::ssor, 1.0);
  Vector z2(2);
  ssor(Vector{2, 4}, z2);
  EXPECT_DOUBLE_EQ(z2[0], 1.0);
  EXPECT_DOUBLE_EQ(z2[1], 1.0);
  try {
    make_preconditioner(SparseMatrix::diagonal(Vector{1, 0}), PreconditionerKind::jacobi);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::singular_preconditioner);
  }
}

TEST(Preconditioner, SsorMatchesDenseOracle) {
  std::mt19937 rng(4);
  auto a = random_spd(rng, 20);
  const double omega = 1.3;
  auto dense = a.to_dense();
  const std::size_t n = 20;
  Dense lower(n, Vector(n, 0.0)), dinv(n, Vector(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) lower[i][j] = dense[i][j];
    lower[i][i] = dense[i][i] / omega;
    dinv[i][i] = 1.0 / dense[i][i];
  }
  // M = (D/w + L) D^{-1} (D/w + L)^T
  Dense m(n, Vector(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) m[i][j] += lower[i][k] * dinv[k][k] * lower[j][k];
  auto apply = make_preconditioner(a, PreconditionerKind::ssor, omega);
  std::normal_distribution<double> nd;
  Vector r(n), z(n);
  for (auto& v : r) v = nd(rng);
  apply(r, z);
  EXPECT_LE(rel_err(z, dense_solve(m, r)), 1e-12);
  // symmetry of M^{-1}
  Vector s(n), zs(n);
  for (auto& v : s) v = nd(rng);
  apply(s, zs);
  EXPECT_NEAR(dot(s, z), dot(r, zs), 1e-12 * std::abs(dot(s, z)) + 1e-14);
}

TEST(Krylov, IdentityConvergesInOneIteration) {
  SolverSpec spec{SolverKind::cg, 1e-12, 100};
  SolverHandle<double> h(spec, SparseMatrix::identity(5));
  DenseBlock<double> b(5, 2);
  for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] = 1.0 + i;
  auto res = krylov_solve(h, b);
  for (auto& r : res.reports) {
    EXPECT_EQ(r.iterations, 1);
    EXPECT_TRUE(r.converged);
  }
  EXPECT_EQ(res.x.data, b.data);
}

TEST(Krylov, IterativeSolversMatchDirectOnLaplacian) {
  auto m = TensorMesh::uniform({16, 16}, {1.0, 1.0});
  auto a = pinned_laplacian(m);
  std::mt19937 rng(3);
  std::normal_distribution<double> nd;
  DenseBlock<double> b(a.rows(), 3);
  for (auto& v : b.data) v = nd(rng);
  auto direct = factorize_spd(a).solve(b);
  Index cg_iters = 0, ssor_iters = 0;
  for (auto kind : {SolverKind::cg, SolverKind::pcg_jacobi, SolverKind::pcg_ssor, SolverKind::bicgstab,
                    SolverKind::block_pcg}) {
    SolverSpec spec{kind, 1e-12, 5000, 1.0};
    SolverHandle<double> h(spec, a);
    auto res = krylov_solve(h, b);
    for (Index j = 0; j < 3; ++j) {
      Vector x(res.x.col(j).begin(), res.x.col(j).end()), y(direct.col(j).begin(), direct.col(j).end());
      EXPECT_LE(rel_err(x, y), 1e-8) << to_string(kind);
      EXPECT_TRUE(res.reports[j].converged) << to_string(kind);
    }
    if (kind == SolverKind::cg) cg_iters = res.reports[0].iterations;
    if (kind == SolverKind::pcg_ssor) ssor_iters = res.reports[0].iterations;
  }
  EXPECT_LT(ssor_iters, cg_iters);
}

TEST(Krylov, CgErrorDecreasesInEnergyNorm) {
  std::mt19937 rng(12);
  auto a = random_spd(rng, 30);
  Vector b(30);
  std::normal_distribution<double> nd;
  for (auto& v : b) v = nd(rng);
  auto exact = dense_solve(a.to_dense(), b);
  Vector x(30);
  double prev = std::numeric_limits<double>::infinity();
  bool monotone = true;
  pcg(a, b, x, 1e-14, 200, make_preconditioner(a, PreconditionerKind::none), [&](Index, std::span<const double> xi) {
    Vector e(30);
    for (int i = 0; i < 30; ++i) e[i] = xi[i] - exact[i];
    const double en = dot(e, a * e);
    if (en > prev * (1 + 1e-12)) monotone = false;
    prev = en;
  });
  EXPECT_TRUE(monotone);
}

TEST(Krylov, BlockPcgOfWidthOneMatchesPcg) {
  auto m = TensorMesh::uniform({10, 10}, {1.0, 1.0});
  auto a = pinned_laplacian(m);
  auto prec = make_preconditioner(a, PreconditionerKind::ssor, 1.0);
  std::mt19937 rng(5);
  std::normal_distribution<double> nd;
  DenseBlock<double> b(a.rows(), 1);
  for (auto& v : b.data) v = nd(rng);
  for (Index iters : {3, 10, 25}) {
    Vector x(a.rows());
    pcg(a, b.col(0), x, 1e-30, iters, prec);
    DenseBlock<double> xb;
    block_pcg(a, b, xb, 1e-30, iters, prec);
    for (Index i = 0; i < a.rows(); ++i) EXPECT_NEAR(xb.data[i], x[i], 1e-13 * (1.0 + std::abs(x[i])));
  }
}

TEST(Krylov, ComplexSystemsRouteToBicgstab) {
  auto m = TensorMesh::uniform({8, 6}, {1.0, 1.0});
  auto l = pinned_laplacian(m).cast<Complex>();
  auto h = add(l, ComplexSparseMatrix::diagonal(std::vector<Complex>(l.rows(), Complex(0.5, 0.4))));
  try {
    SolverHandle<Complex> bad(SolverSpec{SolverKind::cg}, h);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_argument);
  }
  SolverHandle<Complex> it(SolverSpec{SolverKind::bicgstab, 1e-11, 2000, 1.0}, h);
  SolverHandle<Complex> dir(SolverSpec{SolverKind::direct}, h);
  std::vector<Complex> b(h.rows());
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = Complex(std::cos(i), 0.3 * i);
  SolveReport rep;
  auto x1 = it.solve(std::span<const Complex>(b), &rep);
  auto x2 = dir.solve(std::span<const Complex>(b));
  EXPECT_TRUE(rep.converged);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    num += std::norm(x1[i] - x2[i]);
    den += std::norm(x2[i]);
  }
  EXPECT_LE(std::sqrt(num / den), 1e-8);
}

TEST(Krylov, NonConvergenceIsReportedNotThrown) {
  auto m = TensorMesh::uniform({16, 16}, {1.0, 1.0});
  SolverHandle<double> h(SolverSpec{SolverKind::cg, 1e-14, 3}, pinned_laplacian(m));
  Vector b(m.num_cells(), 0.0);
  b[0] = 1;
  b[100] = -1;
  SolveReport rep;
  h.solve(std::span<const double>(b), &rep);
  EXPECT_FALSE(rep.converged);
  EXPECT_EQ(rep.iterations, 3);
}
