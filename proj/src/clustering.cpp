#include "mtdetect/clustering.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <sstream>

#include "mtdetect/error.hpp"
#include "mtdetect/sectionfile.hpp"

namespace mtd::clustering {

namespace {

constexpr double kZeroRestriction = 1e-12;

VectorXd restrict_to(const VectorXd& v, const IndexSet& set) {
  VectorXd r(static_cast<Index>(set.size()));
  for (size_t k = 0; k < set.size(); ++k) r(static_cast<Index>(k)) = v(set[k]);
  return r;
}

VectorXd unit_with_sign(VectorXd p) {
  p /= p.norm();
  if (p(0) < 0.0) p = -p;
  return p;
}

VectorXd coefficients_for(const VectorXd& v, const IndexSet& set,
                          const PhiMatrix* phi) {
  const VectorXd r = restrict_to(v, set);
  if (r.norm() >= kZeroRestriction) return unit_with_sign(r);
  if (phi != nullptr) {
    const VectorXd norms = restrict_to(phi->row_norms, set);
    if (norms.norm() > 0.0) return unit_with_sign(norms);
  }
  throw ZeroRestriction("clustering coefficients undefined: left null vector and "
                        "response norms vanish on the set");
}

// Greedy partition on a precomputed pair-distance matrix.
std::vector<IndexSet> greedy_partition(const MatrixXd& dist, double theta) {
  const Index l = dist.rows();
  std::vector<bool> assigned(static_cast<size_t>(l), false);
  std::vector<IndexSet> clusters;
  for (Index i = 0; i < l; ++i) {
    if (assigned[static_cast<size_t>(i)]) continue;
    IndexSet cluster{i};
    assigned[static_cast<size_t>(i)] = true;
    for (Index j = i + 1; j < l; ++j) {
      if (!assigned[static_cast<size_t>(j)] && dist(i, j) <= theta) {
        cluster.push_back(j);
        assigned[static_cast<size_t>(j)] = true;
      }
    }
    clusters.push_back(std::move(cluster));
  }
  return clusters;
}

MatrixXd pair_distances(const PhiMatrix& phi, const VectorXd& v) {
  const Index l = phi.rows();
  MatrixXd dist = MatrixXd::Zero(l, l);
  for (Index i = 0; i < l; ++i) {
    for (Index j = i + 1; j < l; ++j) {
      dist(i, j) = dist(j, i) = pair_distance(phi, v, i, j);
    }
  }
  return dist;
}

void check_dims(const PhiMatrix& phi, const VectorXd& v) {
  if (v.size() != phi.rows()) {
    throw DimensionMismatch("null vector has " + std::to_string(v.size()) +
                            " entries but Phi has " + std::to_string(phi.rows()) +
                            " rows");
  }
}

ClusterSet assemble(const PhiMatrix& phi, const VectorXd& v,
                    std::vector<IndexSet> clusters, double theta,
                    std::string label) {
  ClusterSet out;
  out.coefficients = clustering_coefficients(v, clusters, &phi);
  out.Pi = aggregation_matrix(clusters, out.coefficients, phi.rows());
  out.clusters = std::move(clusters);
  out.theta = theta;
  out.label = std::move(label);
  return out;
}

}  // namespace

std::vector<Index> ClusterSet::membership() const {
  std::vector<Index> m(static_cast<size_t>(measurements()), -1);
  for (size_t k = 0; k < clusters.size(); ++k) {
    for (Index i : clusters[k]) m[static_cast<size_t>(i)] = static_cast<Index>(k);
  }
  return m;
}

IndexSet ClusterSet::singletons() const {
  IndexSet out;
  for (const auto& c : clusters) {
    if (c.size() == 1) out.push_back(c.front());
  }
  return out;
}

PhiMatrix compute_phi(const MatrixXd& C, const matcore::Gramian& gramian) {
  if (C.cols() != gramian.W_L.rows()) {
    throw DimensionMismatch("compute_phi: C has " + std::to_string(C.cols()) +
                            " columns, Gramian factor has " +
                            std::to_string(gramian.W_L.rows()) + " rows");
  }
  PhiMatrix out;
  out.Phi = C * gramian.W_L;
  out.row_norms = out.Phi.rowwise().norm();
  return out;
}

PhiMatrix compute_phi(const grid::LinearModel& model, const matcore::Gramian& gramian) {
  return compute_phi(model.C, gramian);
}

std::vector<VectorXd> clustering_coefficients(const VectorXd& v,
                                              const std::vector<IndexSet>& sets,
                                              const PhiMatrix* phi) {
  std::vector<VectorXd> out;
  out.reserve(sets.size());
  for (const auto& set : sets) {
    if (set.empty()) throw ZeroRestriction("clustering coefficients of an empty set");
    for (Index i : set) {
      if (i < 0 || i >= v.size()) {
        throw DimensionMismatch("measurement index " + std::to_string(i) +
                                " out of range");
      }
    }
    out.push_back(coefficients_for(v, set, phi));
  }
  return out;
}

double pair_distance(const PhiMatrix& phi, const VectorXd& v, Index i, Index j) {
  const VectorXd p = coefficients_for(v, IndexSet{i, j}, &phi);
  return (p(1) * phi.Phi.row(i) - p(0) * phi.Phi.row(j)).norm();
}

MatrixXd aggregation_matrix(const std::vector<IndexSet>& clusters,
                            const std::vector<VectorXd>& coefficients, Index l) {
  if (clusters.size() != coefficients.size()) {
    throw DimensionMismatch("aggregation_matrix: one coefficient vector per cluster");
  }
  MatrixXd Pi = MatrixXd::Zero(static_cast<Index>(clusters.size()), l);
  for (size_t k = 0; k < clusters.size(); ++k) {
    if (coefficients[k].size() != static_cast<Index>(clusters[k].size())) {
      throw DimensionMismatch("aggregation_matrix: coefficient length mismatch");
    }
    for (size_t m = 0; m < clusters[k].size(); ++m) {
      Pi(static_cast<Index>(k), clusters[k][m]) = coefficients[k](static_cast<Index>(m));
    }
  }
  return Pi;
}

ClusterSet form_clusters(const PhiMatrix& phi, const VectorXd& v, double theta,
                         std::string label) {
  check_dims(phi, v);
  const MatrixXd dist = pair_distances(phi, v);
  return assemble(phi, v, greedy_partition(dist, theta), theta, std::move(label));
}

std::vector<double> theta_grid() {
  std::vector<double> grid;
  for (int k = 0; k <= 50; ++k) grid.push_back(std::pow(10.0, -6.0 + k / 10.0));
  return grid;
}

ThetaChoice auto_theta(const PhiMatrix& phi, const VectorXd& v) {
  check_dims(phi, v);
  const MatrixXd dist = pair_distances(phi, v);
  const auto grid = theta_grid();
  for (double theta : grid) {
    const auto clusters = greedy_partition(dist, theta);
    bool ok = true;
    for (const auto& c : clusters) ok = ok && c.size() >= 2;
    if (ok) return ThetaChoice{theta, true};
  }
  return ThetaChoice{grid.back(), false};
}

ClusteringResult cluster_model(const grid::LinearModel& model, double theta) {
  ClusteringResult out;
  out.gramian = matcore::semistable_gramian(model.semistability, model.A, model.G);
  out.phi = compute_phi(model, out.gramian);
  const VectorXd v = model.measurement_vmax();
  if (theta < 0.0) {
    const ThetaChoice choice = auto_theta(out.phi, v);
    theta = choice.theta;
    out.theta_satisfied = choice.satisfied;
  }
  out.clusters = form_clusters(out.phi, v, theta, model.op.loading_label);
  return out;
}

MatrixXd orthonormal_complement(const MatrixXd& Pi) {
  const Index K = Pi.rows();
  const Index l = Pi.cols();
  if (K > l) throw CompletionFailure("aggregation matrix has more rows than columns");
  if (K == l) return MatrixXd(0, l);
  const MatrixXd P = MatrixXd::Identity(l, l) - Pi.transpose() * Pi;
  Eigen::ColPivHouseholderQR<MatrixXd> qr(P);
  qr.setThreshold(1e-10);
  if (qr.rank() != l - K) {
    throw CompletionFailure("projector complement has rank " +
                            std::to_string(qr.rank()) + ", expected " +
                            std::to_string(l - K));
  }
  const MatrixXd Q = qr.householderQ();
  MatrixXd Pi_bar = Q.leftCols(l - K).transpose();
  if ((Pi_bar * Pi.transpose()).norm() > 1e-8) {
    throw CompletionFailure("complement is not orthogonal to the aggregation rows");
  }
  return Pi_bar;
}

ErrorStabilityReport verify_error_stability(const grid::LinearModel& model,
                                            const ClusterSet& clusters,
                                            double pole_tol) {
  if (clusters.Pi.cols() != model.outputs()) {
    throw DimensionMismatch("verify_error_stability: cluster set does not match outputs");
  }
  const auto& dec = model.semistability;
  ErrorStabilityReport rep;
  const MatrixXd Pi_bar = orthonormal_complement(clusters.Pi);
  VectorXd v = model.measurement_vmax();
  if (v.norm() > 0.0) v.normalize();
  rep.pi_bar_vmax_norm = Pi_bar.rows() > 0 ? (Pi_bar * v).norm() : 0.0;
  if (Pi_bar.rows() == 0) {
    rep.max_real_pole = -std::numeric_limits<double>::infinity();
  } else {
    rep.zero_mode_residue = (Pi_bar * model.C * dec.u_max).norm() *
                            (dec.v_max.transpose() * model.G).norm();
    if (rep.zero_mode_residue > pole_tol) {
      rep.max_real_pole = 0.0;
    } else {
      rep.max_real_pole = -std::numeric_limits<double>::infinity();
      for (Index k = 0; k < dec.lambda_bar.size(); ++k) {
        rep.max_real_pole = std::max(rep.max_real_pole, dec.lambda_bar(k).real());
      }
    }
  }
  rep.pass = rep.pi_bar_vmax_norm <= pole_tol && rep.max_real_pole < -pole_tol;
  return rep;
}

H2PairOracle::H2PairOracle(const MatrixXd& C, const MatrixXd& G,
                           const matcore::SemistableDecomposition& decomp)
    : CU_(C * decomp.U_bar),
      G_bar_(decomp.V_bar.transpose() * G),
      solver_(decomp.A_bar.transpose()) {}

H2PairOracle::H2PairOracle(const grid::LinearModel& model)
    : H2PairOracle(model.C, model.G, model.semistability) {}

double H2PairOracle::evaluate(Index i, Index j, double p_i, double p_j) const {
  if (i < 0 || j < 0 || i >= CU_.rows() || j >= CU_.rows()) {
    throw DimensionMismatch("h2 pair condition: measurement index out of range");
  }
  const Eigen::RowVectorXd c = p_j * CU_.row(i) - p_i * CU_.row(j);
  const MatrixXd Q = c.transpose() * c;
  const MatrixXd Wo = solver_.solve(Q);
  const double h2sq = (G_bar_.transpose() * Wo * G_bar_).trace();
  return std::sqrt(std::max(0.0, h2sq));
}

double h2_pair_condition(const grid::LinearModel& model, Index i, Index j,
                         double p_i, double p_j) {
  return H2PairOracle(model).evaluate(i, j, p_i, p_j);
}

std::string serialize_clusters(const ClusterSet& cs) {
  std::ostringstream os;
  os << "# cluster: members | coefficients\n";
  os << "theta " << text::format_double(cs.theta) << "\n";
  os << "label " << cs.label << "\n";
  os << "measurements " << cs.measurements() << "\n";
  for (size_t k = 0; k < cs.clusters.size(); ++k) {
    os << k << ":";
    for (Index i : cs.clusters[k]) os << ' ' << i;
    os << " |";
    for (Index m = 0; m < cs.coefficients[k].size(); ++m) {
      os << ' ' << text::format_double(cs.coefficients[k](m));
    }
    os << "\n";
  }
  return os.str();
}

ClusterSet parse_clusters(std::string_view content, const std::string& source) {
  ClusterSet cs;
  std::istringstream in{std::string(content)};
  std::string line;
  int line_no = 0;
  Index l = -1;
  bool have_theta = false;
  bool have_label = false;
  auto fail = [&](const std::string& msg) {
    throw ParseError(source, line_no, 1, msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("theta ", 0) == 0) {
      cs.theta = text::to_double(text::Token{line.substr(6), line_no, 7}, source);
      have_theta = true;
    } else if (line == "label" || line.rfind("label ", 0) == 0) {
      cs.label = line.size() > 6 ? line.substr(6) : "";
      have_label = true;
    } else if (line.rfind("measurements ", 0) == 0) {
      l = text::to_long(text::Token{line.substr(13), line_no, 14}, source);
    } else {
      const size_t colon = line.find(':');
      const size_t bar = line.find('|');
      if (colon == std::string::npos || bar == std::string::npos || bar < colon) {
        fail("expected 'k: members | coefficients'");
      }
      const long k = text::to_long(text::Token{line.substr(0, colon), line_no, 1}, source);
      if (k != static_cast<long>(cs.clusters.size())) fail("cluster index out of sequence");
      std::istringstream members(line.substr(colon + 1, bar - colon - 1));
      std::istringstream coeffs(line.substr(bar + 1));
      IndexSet set;
      std::string tok;
      while (members >> tok) set.push_back(text::to_long(text::Token{tok, line_no, 1}, source));
      std::vector<double> p;
      while (coeffs >> tok) p.push_back(text::to_double(text::Token{tok, line_no, 1}, source));
      if (set.empty() || set.size() != p.size()) fail("member and coefficient counts differ");
      cs.clusters.push_back(set);
      cs.coefficients.push_back(Eigen::Map<VectorXd>(p.data(), static_cast<Index>(p.size())));
    }
  }
  if (!have_theta || !have_label || l < 0) fail("missing theta, label or measurements header");
  std::vector<int> seen(static_cast<size_t>(l), 0);
  for (const auto& c : cs.clusters) {
    for (Index i : c) {
      if (i < 0 || i >= l || seen[static_cast<size_t>(i)]++) fail("clusters do not partition the measurements");
    }
  }
  for (int s : seen) {
    if (s != 1) fail("clusters do not cover every measurement");
  }
  cs.Pi = aggregation_matrix(cs.clusters, cs.coefficients, l);
  return cs;
}

std::string describe_clusters(const ClusterSet& cs, const std::vector<std::string>& labels) {
  std::ostringstream os;
  for (size_t k = 0; k < cs.clusters.size(); ++k) {
    os << k << ":";
    for (Index i : cs.clusters[k]) {
      os << ' ' << (static_cast<size_t>(i) < labels.size() ? labels[static_cast<size_t>(i)]
                                                            : std::to_string(i));
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace mtd::clustering
