#pragma once

#include <Eigen/Core>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mtdetect/clustering.hpp"
#include "mtdetect/gridmodel.hpp"
#include "mtdetect/simkit.hpp"

namespace mtd::detect {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using clustering::ClusterSet;
using clustering::IndexSet;

constexpr double kEpsilonFloor = 1e-9;

/// |p_j y_i - p_i y_j|
double residual_pair(double y_i, double y_j, double p_i, double p_j);

/// Intra-cluster pair with its coefficients; i < j are measurement indices.
struct PairRef {
  Index cluster = 0;
  Index i = 0;
  Index j = 0;
  double p_i = 0.0;
  double p_j = 0.0;
};

/// All intra-cluster pairs, ordered by cluster, then i, then j.
std::vector<PairRef> cluster_pairs(const ClusterSet& clusters);

/// Per-cluster thresholds. Singleton clusters are not covered and carry
/// epsilon 0.
struct Thresholds {
  std::vector<double> epsilon;
  std::vector<bool> covered;
  double safety = 1.5;
};

/// Causal moving average over the last `window` samples of each pair's
/// signed residual. window = 1 disables smoothing.
class PairResidualFilter {
 public:
  PairResidualFilter(std::vector<PairRef> pairs, long window);

  /// Residuals |filtered p_j y_i - p_i y_j| for one sample, in pair order.
  const std::vector<double>& push(const VectorXd& y_tilde);
  const std::vector<PairRef>& pairs() const { return pairs_; }

 private:
  std::vector<PairRef> pairs_;
  long window_;
  long count_ = 0;
  std::vector<double> ring_;  // pairs x window
  std::vector<double> sums_;
  std::vector<double> out_;
};

/// epsilon_k = safety * max over samples [begin, end) and pairs of r_ij,
/// floored at `floor`.
Thresholds calibrate_threshold(const MatrixXd& y_tilde, Index begin, Index end,
                               const ClusterSet& clusters, double safety,
                               long smooth_window = 1, double floor = kEpsilonFloor);
Thresholds calibrate_threshold(const sim::SimulationTrace& trace, const ClusterSet& clusters,
                               double safety);

struct FiredPair {
  Index cluster = 0;
  Index i = 0;
  Index j = 0;
  double residual = 0.0;
};

/// Pairs with r_ij >= epsilon_k, ordered by cluster, i, j.
std::vector<FiredPair> detect_step(const VectorXd& y_tilde, const ClusterSet& clusters,
                                   const Thresholds& thresholds);

/// Attacked-measurement isolation from one sample's fired pairs. In a
/// cluster of m >= 3 members, i is isolated when it appears in more than
/// (m-1)/2 fired pairs. A fired two-member cluster is ambiguous.
struct Vote {
  IndexSet isolated;
  std::vector<std::pair<Index, Index>> ambiguous;
};
Vote majority_vote(const std::vector<FiredPair>& fired, const ClusterSet& clusters);

/// Clusters and thresholds of one ED interval.
struct IntervalCalibration {
  std::string label;
  ClusterSet clusters;
  Thresholds thresholds;
};

struct EpsilonTable {
  double safety = 1.5;
  std::vector<IntervalCalibration> intervals;
};

std::string serialize_epsilon_table(const EpsilonTable& table);
EpsilonTable parse_epsilon_table(std::string_view content, const std::string& source);

/// Clusters the model of one ED interval with the scenario's theta.
ClusterSet interval_clusters(const grid::LinearModel& model, const sim::ScenarioSpec& spec,
                             const sim::EdInterval& interval);

/// Simulates an attack-free scenario and calibrates every ED interval.
/// Throws InputError when the scenario has an attack script.
EpsilonTable calibrate_scenario(const sim::ScenarioSpec& spec, sim::ModelProvider& models);

struct ResidualRow {
  double t = 0.0;
  Index cluster = 0;
  Index i = 0;
  Index j = 0;
  double residual = 0.0;
  double epsilon = 0.0;
  bool fired = false;
};

struct DetectionReport {
  /// Every fired pair, plus the largest pair residual of each covered
  /// cluster every `stride` samples.
  std::vector<ResidualRow> rows;
  std::optional<double> first_detection;
  long fired_pairs = 0;
  long fired_samples = 0;
  std::vector<std::string> flagged;
  std::vector<std::string> isolated;
  std::vector<std::string> ambiguous;  // "a/b"
  std::vector<std::string> uncovered;
  long intervals = 0;

  bool detected() const { return fired_pairs > 0; }
  /// Times of samples with at least one fired pair.
  std::vector<double> fired_times() const;
};

struct DetectorOptions {
  long stride = 10;
  /// Reuse thresholds instead of calibrating on an attack-free copy.
  const EpsilonTable* table = nullptr;
};

/// Moving-target detection over a simulated trace: re-cluster at every ED
/// boundary, check every sample. Without a table the thresholds come from
/// an attack-free copy of the scenario (seed + 1 when noisy).
DetectionReport run_detector(const sim::ScenarioSpec& spec, const sim::SimulationTrace& trace,
                             sim::ModelProvider& models, const DetectorOptions& options = {});

std::string report_to_csv(const DetectionReport& report);
DetectionReport parse_report_csv(std::string_view content, const std::string& source);

/// Baseline Luenberger observer x_hat' = (A - L C) x_hat + L y_tilde.
struct ObserverState {
  VectorXd x_hat;
  MatrixXd L;
  VectorXd r_c;
  MatrixXd A_obs;  // A - L C
};

/// Modal placement: the structural mode goes to -1 and the remaining modes
/// to -1.5, -2, ... in the order of the decomposition. Requires C with full
/// column rank (DimensionMismatch otherwise).
MatrixXd observer_gain(const grid::LinearModel& model);

ObserverState make_observer(const grid::LinearModel& model, const VectorXd& x_hat0);

/// r_c = C x_hat - y_tilde, then one RK4 step with y_tilde held.
void baseline_observer_step(ObserverState& obs, const grid::LinearModel& model,
                            const VectorXd& y_tilde, double dt);

/// Steady observer residual C (A - L C)^{-1} G d for constant d.
VectorXd observer_steady_residual(const grid::LinearModel& model, const MatrixXd& L,
                                  const VectorXd& d);

}  // namespace mtd::detect
