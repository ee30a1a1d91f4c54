#include "mtdetect/randsys.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace mtd::randsys {

namespace {

MatrixXd gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd M(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) M(i, j) = normal(rng);
  return M;
}

MatrixXd hurwitz(std::mt19937_64& rng, Eigen::Index n) {
  MatrixXd R = gaussian(rng, n, n);
  if (n == 0) return R;
  const double top = Eigen::EigenSolver<MatrixXd>(R, false).eigenvalues().real().maxCoeff();
  std::uniform_real_distribution<double> margin(0.3, 1.0);
  return R - (top + margin(rng)) * MatrixXd::Identity(n, n);
}

}  // namespace

RandomSystem stable_system(std::uint64_t seed, Eigen::Index n, Eigen::Index m) {
  std::mt19937_64 rng(seed);
  RandomSystem sys;
  sys.A = hurwitz(rng, n);
  sys.G = gaussian(rng, n, m);
  sys.C = MatrixXd::Identity(n, n);
  return sys;
}

RandomSystem semistable_system(std::uint64_t seed, Eigen::Index n, Eigen::Index m,
                               Eigen::Index l) {
  std::mt19937_64 rng(seed);
  MatrixXd block = MatrixXd::Zero(n, n);
  block.bottomRightCorner(n - 1, n - 1) = hurwitz(rng, n - 1);
  const MatrixXd T = MatrixXd::Identity(n, n) + 0.3 * gaussian(rng, n, n);
  RandomSystem sys;
  sys.A = T * block * T.inverse();
  sys.G = gaussian(rng, n, m);
  sys.C = gaussian(rng, l, n);
  return sys;
}

}  // namespace mtd::randsys
