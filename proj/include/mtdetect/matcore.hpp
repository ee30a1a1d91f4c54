#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <optional>

namespace mtd::matcore {

using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

/// Spectral split of a semistable matrix A into its single zero mode and the
/// Hurwitz remainder:
///
///   A = [u_max U_bar] blkdiag(0, A_bar) [v_max V_bar]^T
///
/// Complex eigenvector pairs are stored as (Re, Im) column pairs, so U_bar,
/// V_bar and A_bar are real and A_bar is block diagonal with 2x2 rotation
/// blocks for complex modes.
struct SemistableDecomposition {
  VectorXd u_max;       // right null vector, scaled so v_max' * u_max = 1
  VectorXd v_max;       // left null vector, unit Euclidean norm
  MatrixXd U_bar;       // n x (n-1)
  MatrixXd V_bar;       // n x (n-1), V_bar' * U_bar = I
  MatrixXd A_bar;       // V_bar' * A * U_bar, (n-1) x (n-1)
  VectorXcd lambda_bar; // stable eigenvalues, descending real then imag part
  std::complex<double> lambda_zero;  // the computed near-zero eigenvalue
  double zero_tol = 0.0;

  Eigen::Index dim() const { return u_max.size(); }

  /// Oblique projector U_bar * V_bar' onto the stable invariant subspace.
  MatrixXd stable_projector() const { return U_bar * V_bar.transpose(); }
};

/// Default zero threshold: 1e-7 times the largest |Re(lambda)| of A.
double default_zero_tol(const MatrixXd& A);

/// Throws NotSemistable when A has a positive-real-part eigenvalue, no zero
/// eigenvalue, or more than one; DefectiveZeroEigenvalue when the zero
/// eigenvalue has a Jordan block.
SemistableDecomposition decompose_semistable(
    const MatrixXd& A, std::optional<double> zero_tol = std::nullopt);

/// Bartels-Stewart solver for A W + W A' + Q = 0 with A Hurwitz. The real
/// Schur form of A is computed once, so repeated solves with the same A only
/// pay for the quasi-triangular back substitution.
class LyapunovSolver {
 public:
  explicit LyapunovSolver(const MatrixXd& A);

  MatrixXd solve(const MatrixXd& Q) const;

  const MatrixXd& a() const { return a_; }

 private:
  MatrixXd a_;
  MatrixXd schur_u_;
  MatrixXd schur_t_;
  std::vector<Eigen::Index> block_start_;
  std::vector<Eigen::Index> block_size_;
};

/// Solves A W + W A' + Q = 0. Throws NotHurwitz or NumericalFailure (when the
/// relative residual exceeds 1e-8).
MatrixXd solve_lyapunov(const MatrixXd& A_stable, const MatrixXd& Q);

/// Relative residual ||A W + W A' + Q||_F / ||Q||_F (0 when Q = 0 and the
/// residual vanishes).
double lyapunov_residual(const MatrixXd& A, const MatrixXd& W,
                         const MatrixXd& Q);

struct Gramian {
  MatrixXd W_c;      // U_bar * W_bar * U_bar'
  MatrixXd W_L;      // W_c = W_L * W_L', n x rank
  MatrixXd W_bar;    // reachability Gramian of (A_bar, G_bar)
  Eigen::Index rank = 0;
  double lyapunov_residual = 0.0;  // relative, of the projected equation
};

/// Reachability Gramian of the semistable pair (A, G), built from the
/// stable-subspace Gramian of (A_bar, G_bar = V_bar' G).
Gramian semistable_gramian(const SemistableDecomposition& decomp,
                           const MatrixXd& A, const MatrixXd& G);
Gramian semistable_gramian(const MatrixXd& A, const MatrixXd& G,
                           std::optional<double> zero_tol = std::nullopt);

/// Pivoted Cholesky factor F (n x r) with F F' = W. Pivoting stops once the
/// largest remaining diagonal entry drops below 1e-10 * trace(W). Throws
/// NotPSD when W has an eigenvalue below -1e-8 * ||W||.
MatrixXd psd_factor(const MatrixXd& W);

/// Test oracle: direct quadrature of int_0^T e^{At} G G' e^{A't} dt on a grid
/// of step dt. The trapezoid sums at dt and 2 dt are combined by one
/// Richardson step. Throws HorizonTooShort when the integrand has not
/// decayed by the end of the horizon.
MatrixXd oracle_gramian_quadrature(const MatrixXd& A, const MatrixXd& G,
                                   double horizon, double dt);

}  // namespace mtd::matcore
