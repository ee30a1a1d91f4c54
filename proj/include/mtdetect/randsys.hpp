#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>

namespace mtd::randsys {

using Eigen::MatrixXd;

/// Seeded random linear systems for the oracle cross-checks.
struct RandomSystem {
  MatrixXd A;
  MatrixXd G;
  MatrixXd C;
};

/// A Hurwitz with stability margin in [0.3, 1.0], G n x m, C = I.
RandomSystem stable_system(std::uint64_t seed, Eigen::Index n, Eigen::Index m);

/// A = T blkdiag(0, S) T^-1 with S Hurwitz, so A has one semisimple zero
/// eigenvalue; C is l x n.
RandomSystem semistable_system(std::uint64_t seed, Eigen::Index n, Eigen::Index m,
                               Eigen::Index l);

}  // namespace mtd::randsys
