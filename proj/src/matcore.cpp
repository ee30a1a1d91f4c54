#include "mtdetect/matcore.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <string>

#include "mtdetect/error.hpp"

namespace mtd::matcore {

namespace {

constexpr double kLyapunovTol = 1e-8;

std::vector<Eigen::Index> sorted_eigen_order(const VectorXcd& vals) {
  std::vector<Eigen::Index> order(static_cast<size_t>(vals.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) {
                     if (vals(a).real() != vals(b).real()) {
                       return vals(a).real() > vals(b).real();
                     }
                     return vals(a).imag() > vals(b).imag();
                   });
  return order;
}

std::string fmt_eig(std::complex<double> z) {
  return "(" + std::to_string(z.real()) + (z.imag() < 0 ? "" : "+") +
         std::to_string(z.imag()) + "i)";
}

// Solves T_ii Z + Z T_jj' = R for blocks of size 1 or 2.
MatrixXd solve_small_sylvester(const MatrixXd& Tii, const MatrixXd& Tjj,
                               const MatrixXd& R) {
  const Eigen::Index p = Tii.rows();
  const Eigen::Index q = Tjj.rows();
  if (p == 1 && q == 1) {
    MatrixXd Z(1, 1);
    Z(0, 0) = R(0, 0) / (Tii(0, 0) + Tjj(0, 0));
    return Z;
  }
  // vec(Tii Z) = (I_q kron Tii) vec(Z); vec(Z Tjj') = (Tjj kron I_p) vec(Z)
  MatrixXd K = MatrixXd::Zero(p * q, p * q);
  for (Eigen::Index c = 0; c < q; ++c) {
    K.block(c * p, c * p, p, p) += Tii;
    for (Eigen::Index d = 0; d < q; ++d) {
      K.block(c * p, d * p, p, p) += Tjj(c, d) * MatrixXd::Identity(p, p);
    }
  }
  const Eigen::Map<const VectorXd> rhs(R.data(), p * q);
  VectorXd z = K.fullPivLu().solve(rhs);
  return Eigen::Map<MatrixXd>(z.data(), p, q);
}

}  // namespace

double default_zero_tol(const MatrixXd& A) {
  if (A.size() == 0) return 0.0;
  const VectorXcd vals = A.eigenvalues();
  double max_re = 0.0;
  for (Eigen::Index i = 0; i < vals.size(); ++i) {
    max_re = std::max(max_re, std::abs(vals(i).real()));
  }
  if (max_re == 0.0) max_re = std::max(A.norm(), 1.0);
  return 1e-7 * max_re;
}

SemistableDecomposition decompose_semistable(const MatrixXd& A,
                                             std::optional<double> zero_tol) {
  if (A.rows() != A.cols() || A.rows() == 0) {
    throw NotSemistable("decompose_semistable: matrix must be square and non-empty");
  }
  const Eigen::Index n = A.rows();
  Eigen::EigenSolver<MatrixXd> es(A, true);
  if (es.info() != Eigen::Success) {
    throw NumericalFailure("decompose_semistable: eigendecomposition failed");
  }
  const VectorXcd vals = es.eigenvalues();
  const Eigen::MatrixXcd vecs = es.eigenvectors();
  const double tol = zero_tol.value_or(default_zero_tol(A));
  const auto order = sorted_eigen_order(vals);

  Eigen::Index near_zero = 0;
  Eigen::Index zero_modulus = 0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto z = vals(k);
    if (z.real() >= tol) {
      throw NotSemistable("decompose_semistable: eigenvalue " + fmt_eig(z) +
                          " has nonnegative real part");
    }
    if (std::abs(z.real()) < tol) ++near_zero;
    if (std::abs(z) < tol) ++zero_modulus;
  }
  if (near_zero == 0) {
    throw NotSemistable("decompose_semistable: no zero eigenvalue");
  }
  if (near_zero > 1) {
    if (zero_modulus >= 2) {
      Eigen::JacobiSVD<MatrixXd> svd(A);
      const auto& sv = svd.singularValues();
      Eigen::Index nullity = 0;
      for (Eigen::Index k = 0; k < sv.size(); ++k) {
        if (sv(k) < tol) ++nullity;
      }
      if (nullity < zero_modulus) {
        throw DefectiveZeroEigenvalue(
            "decompose_semistable: zero eigenvalue has algebraic multiplicity " +
            std::to_string(zero_modulus) + " but geometric multiplicity " +
            std::to_string(nullity));
      }
    }
    throw NotSemistable("decompose_semistable: " + std::to_string(near_zero) +
                        " eigenvalues on the imaginary axis");
  }

  SemistableDecomposition out;
  out.zero_tol = tol;
  out.lambda_zero = vals(order[0]);

  Eigen::JacobiSVD<MatrixXd> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  VectorXd u = svd.matrixV().col(n - 1);

  MatrixXd U(n, n);
  U.col(0) = u;
  out.lambda_bar.resize(n - 1);
  Eigen::Index col = 1;
  for (Eigen::Index k = 1; k < n; ++k) {
    const Eigen::Index idx = order[static_cast<size_t>(k)];
    out.lambda_bar(k - 1) = vals(idx);
    const auto z = vals(idx);
    if (z.imag() == 0.0) {
      VectorXd v = vecs.col(idx).real();
      U.col(col++) = v / v.norm();
    } else if (z.imag() > 0.0) {
      Eigen::VectorXcd v = vecs.col(idx);
      v /= v.norm();
      if (col + 2 > n) {
        col = -1;
        break;
      }
      U.col(col++) = v.real();
      U.col(col++) = v.imag();
    }
  }
  if (col != n) {
    throw NumericalFailure("decompose_semistable: unpaired complex eigenvalue");
  }

  Eigen::FullPivLU<MatrixXd> lu(U);
  if (!lu.isInvertible()) {
    throw NumericalFailure("decompose_semistable: eigenvector basis is singular");
  }
  const MatrixXd U_inv = lu.inverse();
  VectorXd w = U_inv.row(0).transpose();
  const double scale = w.norm();
  out.v_max = w / scale;
  out.u_max = u * scale;
  // Structural zeros of the left null vector come out at roundoff level.
  const double vpeak = out.v_max.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(out.v_max(i)) < 1e-10 * vpeak) out.v_max(i) = 0.0;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(out.v_max(i)) > 1e-9) {
      if (out.v_max(i) < 0) {
        out.v_max = -out.v_max;
        out.u_max = -out.u_max;
      }
      break;
    }
  }
  out.U_bar = U.rightCols(n - 1);
  out.V_bar = U_inv.bottomRows(n - 1).transpose();
  out.A_bar = out.V_bar.transpose() * A * out.U_bar;
  return out;
}

LyapunovSolver::LyapunovSolver(const MatrixXd& A) : a_(A) {
  if (A.rows() != A.cols()) {
    throw NotHurwitz("LyapunovSolver: matrix is not square");
  }
  const Eigen::Index m = A.rows();
  if (m == 0) return;
  Eigen::RealSchur<MatrixXd> schur(A, true);
  if (schur.info() != Eigen::Success) {
    throw NumericalFailure("LyapunovSolver: Schur factorization failed");
  }
  schur_u_ = schur.matrixU();
  schur_t_ = schur.matrixT();
  for (Eigen::Index i = 0; i < m;) {
    const bool two = (i + 1 < m) && schur_t_(i + 1, i) != 0.0;
    const Eigen::Index size = two ? 2 : 1;
    const double re =
        two ? 0.5 * (schur_t_(i, i) + schur_t_(i + 1, i + 1)) : schur_t_(i, i);
    if (!(re < 0.0)) {
      throw NotHurwitz("LyapunovSolver: eigenvalue with real part " +
                       std::to_string(re) + " is not in the open left half plane");
    }
    block_start_.push_back(i);
    block_size_.push_back(size);
    i += size;
  }
}

MatrixXd LyapunovSolver::solve(const MatrixXd& Q) const {
  const Eigen::Index m = a_.rows();
  if (Q.rows() != m || Q.cols() != m) {
    throw NumericalFailure("LyapunovSolver: Q has the wrong shape");
  }
  if (m == 0) return MatrixXd(0, 0);
  const MatrixXd& T = schur_t_;
  const MatrixXd C = -(schur_u_.transpose() * Q * schur_u_);
  MatrixXd X = MatrixXd::Zero(m, m);
  const auto nb = static_cast<Eigen::Index>(block_start_.size());
  for (Eigen::Index bj = nb - 1; bj >= 0; --bj) {
    const Eigen::Index cj = block_start_[static_cast<size_t>(bj)];
    const Eigen::Index qj = block_size_[static_cast<size_t>(bj)];
    const Eigen::Index tail_j = m - cj - qj;
    for (Eigen::Index bi = nb - 1; bi >= 0; --bi) {
      const Eigen::Index ri = block_start_[static_cast<size_t>(bi)];
      const Eigen::Index pi = block_size_[static_cast<size_t>(bi)];
      const Eigen::Index tail_i = m - ri - pi;
      MatrixXd R = C.block(ri, cj, pi, qj);
      if (tail_i > 0) {
        R.noalias() -= T.block(ri, ri + pi, pi, tail_i) *
                       X.block(ri + pi, cj, tail_i, qj);
      }
      if (tail_j > 0) {
        R.noalias() -= X.block(ri, cj + qj, pi, tail_j) *
                       T.block(cj, cj + qj, qj, tail_j).transpose();
      }
      X.block(ri, cj, pi, qj) = solve_small_sylvester(
          T.block(ri, ri, pi, pi), T.block(cj, cj, qj, qj), R);
    }
  }
  MatrixXd W = schur_u_ * X * schur_u_.transpose();
  return 0.5 * (W + W.transpose());
}

double lyapunov_residual(const MatrixXd& A, const MatrixXd& W,
                         const MatrixXd& Q) {
  const double res = (A * W + W * A.transpose() + Q).norm();
  const double qn = Q.norm();
  if (qn == 0.0) return res;
  return res / qn;
}

MatrixXd solve_lyapunov(const MatrixXd& A_stable, const MatrixXd& Q) {
  LyapunovSolver solver(A_stable);
  MatrixXd W = solver.solve(Q);
  const double res = lyapunov_residual(A_stable, W, Q);
  if (!(res <= kLyapunovTol)) {
    throw NumericalFailure("solve_lyapunov: relative residual " +
                           std::to_string(res) + " exceeds tolerance");
  }
  return W;
}

MatrixXd psd_factor(const MatrixXd& W) {
  if (W.rows() != W.cols()) throw NotPSD("psd_factor: matrix is not square");
  const Eigen::Index n = W.rows();
  if (n == 0) return MatrixXd(0, 0);
  const MatrixXd S = 0.5 * (W + W.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(S, Eigen::EigenvaluesOnly);
  const double spectral = eig.eigenvalues().cwiseAbs().maxCoeff();
  if (eig.eigenvalues().minCoeff() < -1e-8 * spectral) {
    throw NotPSD("psd_factor: eigenvalue " +
                 std::to_string(eig.eigenvalues().minCoeff()) +
                 " is significantly negative");
  }
  const double trace = S.trace();
  const double stop = 1e-10 * trace;
  MatrixXd F = MatrixXd::Zero(n, n);
  VectorXd d = S.diagonal();
  std::vector<bool> used(static_cast<size_t>(n), false);
  Eigen::Index r = 0;
  while (r < n && trace > 0.0) {
    Eigen::Index p = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (used[static_cast<size_t>(i)]) continue;
      if (p < 0 || d(i) > d(p)) p = i;
    }
    if (p < 0 || !(d(p) > stop)) break;
    const double pivot = std::sqrt(d(p));
    VectorXd l = S.col(p);
    if (r > 0) l.noalias() -= F.leftCols(r) * F.row(p).head(r).transpose();
    l /= pivot;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (used[static_cast<size_t>(i)]) l(i) = 0.0;
    }
    l(p) = pivot;
    F.col(r) = l;
    used[static_cast<size_t>(p)] = true;
    d -= l.cwiseAbs2();
    d(p) = 0.0;
    ++r;
  }
  return F.leftCols(r);
}

Gramian semistable_gramian(const SemistableDecomposition& decomp,
                           const MatrixXd& A, const MatrixXd& G) {
  if (G.rows() != A.rows() || decomp.dim() != A.rows()) {
    throw NumericalFailure("semistable_gramian: dimension mismatch");
  }
  Gramian out;
  const MatrixXd G_bar = decomp.V_bar.transpose() * G;
  const MatrixXd Q = G_bar * G_bar.transpose();
  LyapunovSolver solver(decomp.A_bar);
  out.W_bar = solver.solve(Q);
  out.lyapunov_residual = lyapunov_residual(decomp.A_bar, out.W_bar, Q);
  if (!(out.lyapunov_residual <= kLyapunovTol)) {
    throw NumericalFailure("semistable_gramian: projected Lyapunov residual " +
                           std::to_string(out.lyapunov_residual) +
                           " exceeds tolerance");
  }
  MatrixXd Wc = decomp.U_bar * out.W_bar * decomp.U_bar.transpose();
  out.W_c = 0.5 * (Wc + Wc.transpose());
  out.W_L = psd_factor(out.W_c);
  out.rank = out.W_L.cols();
  return out;
}

Gramian semistable_gramian(const MatrixXd& A, const MatrixXd& G,
                           std::optional<double> zero_tol) {
  return semistable_gramian(decompose_semistable(A, zero_tol), A, G);
}

MatrixXd oracle_gramian_quadrature(const MatrixXd& A, const MatrixXd& G,
                                   double horizon, double dt) {
  if (!(dt > 0.0) || !(horizon > dt)) {
    throw HorizonTooShort("oracle_gramian_quadrature: need horizon > dt > 0");
  }
  auto steps = static_cast<Eigen::Index>(std::ceil(horizon / dt));
  if (steps % 2 != 0) ++steps;
  const MatrixXd step = (A * dt).exp();
  MatrixXd X = G;
  MatrixXd fine = MatrixXd::Zero(A.rows(), A.rows());
  MatrixXd coarse = MatrixXd::Zero(A.rows(), A.rows());
  double peak = 0.0;
  double norm_check = 0.0;
  const Eigen::Index check_at = steps - std::max<Eigen::Index>(steps / 10, 2);
  MatrixXd f;
  for (Eigen::Index k = 0; k <= steps; ++k) {
    f.noalias() = X * X.transpose();
    const double w_fine = (k == 0 || k == steps) ? 0.5 : 1.0;
    fine += w_fine * f;
    if (k % 2 == 0) coarse += w_fine * f;
    const double fn = f.norm();
    peak = std::max(peak, fn);
    if (k == check_at) norm_check = fn;
    if (k < steps) X = step * X;
  }
  fine *= dt;
  coarse *= 2.0 * dt;
  MatrixXd W = (4.0 * fine - coarse) / 3.0;
  W = 0.5 * (W + W.transpose());

  const double f_end = f.norm();
  if (f_end > 1e-13 * peak) {
    const double span = static_cast<double>(steps - check_at) * dt;
    const double rate = std::log(norm_check / f_end) / span;
    const double tail = rate > 0.0 ? f_end / rate : INFINITY;
    if (!(tail <= 1e-8 * W.norm())) {
      throw HorizonTooShort(
          "oracle_gramian_quadrature: integrand has not decayed by t = " +
          std::to_string(horizon));
    }
  }
  return W;
}

}  // namespace mtd::matcore
