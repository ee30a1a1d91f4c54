#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>

#include "mtdetect/error.hpp"
#include "mtdetect/matcore.hpp"
#include "mtdetect/randsys.hpp"
#include "test_util.hpp"

using namespace mtd;
using namespace mtd::matcore;
using testutil::rel_err;

namespace {

MatrixXd reassemble(const SemistableDecomposition& d) {
  const Eigen::Index n = d.dim();
  MatrixXd U(n, n);
  MatrixXd V(n, n);
  U << d.u_max, d.U_bar;
  V << d.v_max, d.V_bar;
  MatrixXd L = MatrixXd::Zero(n, n);
  L.bottomRightCorner(n - 1, n - 1) = d.A_bar;
  return U * L * V.transpose();
}

double quadrature_horizon(const MatrixXd& A) {
  const double rate = -A.eigenvalues().real().maxCoeff();
  return 18.0 / rate;
}

}  // namespace

TEST_CASE("decompose_semistable on a diagonal matrix") {
  MatrixXd A(2, 2);
  A << 0, 0, 0, -2;
  const auto d = decompose_semistable(A);
  CHECK(std::abs(std::abs(d.v_max(0)) - 1.0) < 1e-12);
  CHECK(std::abs(d.v_max(1)) < 1e-12);
  REQUIRE(d.lambda_bar.size() == 1);
  CHECK(d.lambda_bar(0).real() == doctest::Approx(-2.0));
  CHECK(d.v_max.dot(d.u_max) == doctest::Approx(1.0));
}

TEST_CASE("decompose_semistable on a symmetric Laplacian") {
  MatrixXd A(2, 2);
  A << -1, 1, 1, -1;
  const auto d = decompose_semistable(A);
  CHECK(std::abs(d.v_max(0) - d.v_max(1)) < 1e-12);
  CHECK(std::abs(d.v_max.norm() - 1.0) < 1e-12);
  CHECK(d.lambda_bar(0).real() == doctest::Approx(-2.0));
  CHECK(rel_err(reassemble(d), A) < 1e-12);
}

TEST_CASE("decompose_semistable rejects unstable and defective matrices") {
  MatrixXd unstable(2, 2);
  unstable << 0, 0, 0, 1;
  CHECK_THROWS_AS(decompose_semistable(unstable), NotSemistable);

  MatrixXd hurwitz(2, 2);
  hurwitz << -1, 0, 0, -2;
  CHECK_THROWS_AS(decompose_semistable(hurwitz), NotSemistable);

  MatrixXd two_zeros = MatrixXd::Zero(3, 3);
  two_zeros(2, 2) = -1;
  CHECK_THROWS_AS(decompose_semistable(two_zeros), NotSemistable);

  MatrixXd jordan(3, 3);
  jordan << 0, 1, 0, 0, 0, 0, 0, 0, -1;
  CHECK_THROWS_AS(decompose_semistable(jordan), Error);
}

TEST_CASE("decompose_semistable biorthogonality and reassembly on random systems") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto sys = randsys::semistable_system(seed, 7, 2, 7);
    const auto d = decompose_semistable(sys.A);
    const Eigen::Index n = d.dim();
    CHECK((d.V_bar.transpose() * d.U_bar - MatrixXd::Identity(n - 1, n - 1)).norm() < 1e-8);
    CHECK((d.v_max.transpose() * d.U_bar).norm() < 1e-8);
    CHECK((d.V_bar.transpose() * d.u_max).norm() < 1e-8);
    CHECK(rel_err(reassemble(d), sys.A) < 1e-8);
    CHECK(d.lambda_bar.real().maxCoeff() < -d.zero_tol);
    for (Eigen::Index k = 1; k < d.lambda_bar.size(); ++k) {
      CHECK(d.lambda_bar(k - 1).real() >= d.lambda_bar(k).real());
    }
  }
}

TEST_CASE("decompose_semistable is deterministic") {
  const auto sys = randsys::semistable_system(3, 6, 2, 6);
  const auto a = decompose_semistable(sys.A);
  const auto b = decompose_semistable(sys.A);
  CHECK(a.U_bar == b.U_bar);
  CHECK(a.V_bar == b.V_bar);
  CHECK(a.v_max == b.v_max);
}

TEST_CASE("solve_lyapunov closed forms") {
  MatrixXd a(1, 1);
  a << -1;
  MatrixXd q(1, 1);
  q << 1;
  CHECK(solve_lyapunov(a, q)(0, 0) == doctest::Approx(0.5).epsilon(1e-14));

  MatrixXd A(2, 2);
  A << -1, 0, 0, -2;
  const MatrixXd Q = MatrixXd::Ones(2, 2);
  MatrixXd expected(2, 2);
  expected << 0.5, 1.0 / 3.0, 1.0 / 3.0, 0.25;
  CHECK(rel_err(solve_lyapunov(A, Q), expected) < 1e-14);
}

TEST_CASE("solve_lyapunov rejects non-Hurwitz input") {
  MatrixXd A(2, 2);
  A << 0.1, 0, 0, -1;
  CHECK_THROWS_AS(solve_lyapunov(A, MatrixXd::Identity(2, 2)), NotHurwitz);
}

TEST_CASE("solve_lyapunov handles complex modes with a small residual") {
  MatrixXd A(4, 4);
  A << -0.1, 5, 0, 0, -5, -0.1, 0, 0, 0, 0, -1, 2, 0, 0, -2, -1;
  A = (MatrixXd::Identity(4, 4) + 0.2 * MatrixXd::Ones(4, 4)) * A *
      (MatrixXd::Identity(4, 4) + 0.2 * MatrixXd::Ones(4, 4)).inverse();
  const MatrixXd Q = MatrixXd::Identity(4, 4);
  const MatrixXd W = solve_lyapunov(A, Q);
  CHECK(lyapunov_residual(A, W, Q) < 1e-12);
  CHECK(rel_err(W, W.transpose()) < 1e-12);
}

TEST_CASE("LyapunovSolver reuses its Schur form") {
  const auto sys = randsys::stable_system(11, 6, 2);
  const LyapunovSolver solver(sys.A);
  for (int k = 0; k < 3; ++k) {
    const MatrixXd Q = (k + 1.0) * sys.G * sys.G.transpose();
    CHECK(rel_err(solver.solve(Q), solve_lyapunov(sys.A, Q)) < 1e-12);
  }
}

TEST_CASE("solve_lyapunov matches the quadrature oracle on random stable systems") {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    const auto sys = randsys::stable_system(seed, 5, 2);
    const MatrixXd W = solve_lyapunov(sys.A, sys.G * sys.G.transpose());
    const double fastest = sys.A.eigenvalues().cwiseAbs().maxCoeff();
    const MatrixXd Wq = oracle_gramian_quadrature(sys.A, sys.G, quadrature_horizon(sys.A),
                                                  std::min(0.01, 0.02 / fastest));
    CHECK(rel_err(Wq, W) < 1e-6);
  }
}

TEST_CASE("total output energy trace(C W C') matches the quadrature oracle") {
  for (std::uint64_t seed = 200; seed < 205; ++seed) {
    const auto sys = randsys::stable_system(seed, 8, 3);
    const MatrixXd C = MatrixXd::Random(4, 8);
    const MatrixXd W = solve_lyapunov(sys.A, sys.G * sys.G.transpose());
    const double fastest = sys.A.eigenvalues().cwiseAbs().maxCoeff();
    const MatrixXd Wq = oracle_gramian_quadrature(sys.A, sys.G, quadrature_horizon(sys.A),
                                                  std::min(0.01, 0.02 / fastest));
    const double e = (C * W * C.transpose()).trace();
    const double eq = (C * Wq * C.transpose()).trace();
    CHECK(std::abs(e - eq) / eq < 1e-5);
  }
}

TEST_CASE("semistable_gramian closed forms") {
  MatrixXd A(2, 2);
  A << -1, 1, 1, -1;
  MatrixXd G(2, 1);
  G << 1, 0;
  const Gramian g = semistable_gramian(A, G);
  MatrixXd expected(2, 2);
  expected << 1, -1, -1, 1;
  expected /= 16.0;
  CHECK(rel_err(g.W_c, expected) < 1e-12);
  CHECK(g.lyapunov_residual < 1e-12);
  CHECK(rel_err(g.W_L * g.W_L.transpose(), g.W_c) < 1e-12);
  CHECK(g.rank == 1);

  // Cross-check against the quadrature of the projected impulse response.
  const auto d = decompose_semistable(A);
  const MatrixXd Wbar = oracle_gramian_quadrature(d.A_bar, d.V_bar.transpose() * G, 20.0, 0.001);
  CHECK(rel_err(d.U_bar * Wbar * d.U_bar.transpose(), expected) < 1e-8);

  MatrixXd B(2, 2);
  B << 0, 0, 0, -2;
  MatrixXd H(2, 1);
  H << 0, 1;
  MatrixXd decoupled = MatrixXd::Zero(2, 2);
  decoupled(1, 1) = 0.25;
  CHECK(rel_err(semistable_gramian(B, H).W_c, decoupled) < 1e-12);

  const Gramian zero = semistable_gramian(A, MatrixXd::Zero(2, 1));
  CHECK(zero.W_c.norm() == 0.0);
  CHECK(zero.rank == 0);
}

TEST_CASE("semistable_gramian is PSD and factorizes on random systems") {
  for (std::uint64_t seed = 300; seed < 310; ++seed) {
    const auto sys = randsys::semistable_system(seed, 9, 3, 9);
    const Gramian g = semistable_gramian(sys.A, sys.G);
    CHECK(g.lyapunov_residual < 1e-8);
    CHECK(rel_err(g.W_c, g.W_c.transpose()) < 1e-10);
    const double lo = Eigen::SelfAdjointEigenSolver<MatrixXd>(g.W_c).eigenvalues().minCoeff();
    CHECK(lo >= -1e-10 * g.W_c.norm());
    CHECK(rel_err(g.W_L * g.W_L.transpose(), g.W_c) < 1e-8);
  }
}

TEST_CASE("psd_factor") {
  const MatrixXd I = MatrixXd::Identity(3, 3);
  const MatrixXd F = psd_factor(I);
  CHECK(rel_err(F * F.transpose(), I) < 1e-14);
  CHECK(F.cols() == 3);

  MatrixXd W(2, 2);
  W << 4, 2, 2, 1;
  const MatrixXd f = psd_factor(W);
  REQUIRE(f.cols() == 1);
  CHECK(std::abs(std::abs(f(0, 0)) - 2.0) < 1e-12);
  CHECK(std::abs(std::abs(f(1, 0)) - 1.0) < 1e-12);

  MatrixXd indefinite(2, 2);
  indefinite << 1, 0, 0, -1;
  CHECK_THROWS_AS(psd_factor(indefinite), NotPSD);
  CHECK(psd_factor(MatrixXd::Zero(2, 2)).cols() == 0);
}

TEST_CASE("oracle_gramian_quadrature") {
  MatrixXd a(1, 1);
  a << -1;
  MatrixXd g(1, 1);
  g << 1;
  CHECK(std::abs(oracle_gramian_quadrature(a, g, 40.0, 0.001)(0, 0) - 0.5) < 1e-6);

  MatrixXd z(1, 1);
  z << 0;
  CHECK_THROWS_AS(oracle_gramian_quadrature(z, g, 40.0, 0.01), HorizonTooShort);
  CHECK_THROWS_AS(oracle_gramian_quadrature(a, g, 0.0, 0.01), HorizonTooShort);
}
