#pragma once

#include <Eigen/Core>

#include <string>
#include <string_view>
#include <vector>

#include "mtdetect/gridmodel.hpp"
#include "mtdetect/matcore.hpp"

namespace mtd::clustering {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

using IndexSet = std::vector<Index>;

/// Phi = C * W_L. Row i describes the disturbance response of measurement i;
/// its Euclidean norm equals the H2 norm of that response.
struct PhiMatrix {
  MatrixXd Phi;
  VectorXd row_norms;

  Index rows() const { return Phi.rows(); }
};

/// Partition of the measurement indices {0..l-1}. Cluster member lists are
/// ascending; clusters are ordered by their seed (smallest member).
struct ClusterSet {
  std::vector<IndexSet> clusters;
  std::vector<VectorXd> coefficients;  // unit norm, first entry >= 0
  MatrixXd Pi;                         // K x l aggregation matrix
  double theta = 0.0;
  std::string label;

  Index size() const { return static_cast<Index>(clusters.size()); }
  Index measurements() const { return Pi.cols(); }
  /// Cluster index of every measurement.
  std::vector<Index> membership() const;
  /// All measurements that are the only member of their cluster.
  IndexSet singletons() const;
};

PhiMatrix compute_phi(const grid::LinearModel& model, const matcore::Gramian& gramian);
PhiMatrix compute_phi(const MatrixXd& C, const matcore::Gramian& gramian);

/// Restriction of v (the measurement-space left null vector) to each set,
/// normalized. When the restriction vanishes (norm < 1e-12) the coefficients
/// fall back to the Phi row norms of the set, if `phi` is given. Throws
/// ZeroRestriction when both vanish.
std::vector<VectorXd> clustering_coefficients(const VectorXd& v,
                                              const std::vector<IndexSet>& sets,
                                              const PhiMatrix* phi = nullptr);

/// Row-proportionality distance ||p_j Phi_i - p_i Phi_j|| with (p_i, p_j) the
/// clustering coefficients of the two-element set {i, j}.
double pair_distance(const PhiMatrix& phi, const VectorXd& v, Index i, Index j);

/// Aggregation matrix with row k holding p_k at the columns of cluster k.
MatrixXd aggregation_matrix(const std::vector<IndexSet>& clusters,
                            const std::vector<VectorXd>& coefficients, Index l);

/// Greedy clustering: the smallest unassigned index seeds a new cluster and
/// every unassigned j with pair_distance(seed, j) <= theta joins it.
ClusterSet form_clusters(const PhiMatrix& phi, const VectorXd& v, double theta,
                         std::string label = "");

/// Log grid 1e-6 .. 1e-1 with ten points per decade.
std::vector<double> theta_grid();

struct ThetaChoice {
  double theta = 0.0;
  bool satisfied = false;  // every cluster has at least two members
};

/// Smallest theta on theta_grid() for which no cluster is a singleton; the
/// largest grid value (unsatisfied) when none qualifies.
ThetaChoice auto_theta(const PhiMatrix& phi, const VectorXd& v);

/// Model -> Gramian -> Phi -> clusters. A negative theta selects auto_theta.
struct ClusteringResult {
  matcore::Gramian gramian;
  PhiMatrix phi;
  ClusterSet clusters;
  bool theta_satisfied = true;
};
ClusteringResult cluster_model(const grid::LinearModel& model, double theta);

/// Rows of an orthonormal basis of the complement of the row space of Pi,
/// so that [Pi; Pi_bar] is orthogonal. Throws CompletionFailure.
MatrixXd orthonormal_complement(const MatrixXd& Pi);

struct ErrorStabilityReport {
  double pi_bar_vmax_norm = 0.0;
  double max_real_pole = 0.0;     // -inf when the error system is empty
  double zero_mode_residue = 0.0; // ||Pi_bar C u_max|| * ||v_max' G||
  bool pass = false;
};

/// Checks that the clustering error system Pi_bar g(s) has only stable
/// poles once the structural zero mode is deflated.
ErrorStabilityReport verify_error_stability(const grid::LinearModel& model,
                                            const ClusterSet& clusters,
                                            double pole_tol = 1e-8);

/// H2 norm of the output difference p_j y_i - p_i y_j of the deflated
/// system, evaluated through the observability Gramian. The Schur form of the
/// deflated state matrix is shared across pairs.
class H2PairOracle {
 public:
  H2PairOracle(const MatrixXd& C, const MatrixXd& G,
               const matcore::SemistableDecomposition& decomp);
  explicit H2PairOracle(const grid::LinearModel& model);

  double evaluate(Index i, Index j, double p_i, double p_j) const;

 private:
  MatrixXd CU_;     // C * U_bar
  MatrixXd G_bar_;  // V_bar' * G
  matcore::LyapunovSolver solver_;
};

double h2_pair_condition(const grid::LinearModel& model, Index i, Index j,
                         double p_i, double p_j);

std::string serialize_clusters(const ClusterSet& clusters);
ClusterSet parse_clusters(std::string_view content, const std::string& source);

/// Human-readable listing with output labels.
std::string describe_clusters(const ClusterSet& clusters,
                              const std::vector<std::string>& labels);

}  // namespace mtd::clustering
