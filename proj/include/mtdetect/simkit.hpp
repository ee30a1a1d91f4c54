#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mtdetect/gridmodel.hpp"

namespace mtd::sim {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Step change of one load bus demand, relative to the dispatched value.
struct LoadEvent {
  double time = 0.0;
  int bus = 0;
  double delta = 0.0;  // p.u.
};

enum class AttackKind { Scale, Bias };

struct Attack {
  double start = 0.0;
  double duration = 0.0;
  std::string target;  // output label, e.g. P_G8
  AttackKind kind = AttackKind::Scale;
  double magnitude = 0.0;  // k for scale, p.u. for bias
};

/// What a scale attack multiplies. OperatingPoint scales the reported
/// absolute value (operating point plus deviation); Deviation scales the
/// deviation signal alone.
enum class AttackReference { OperatingPoint, Deviation };

struct NoiseSpec {
  double std = 0.0;            // measurement noise, p.u.
  bool smoothing = false;      // moving-average residual smoother
  double window = 0.5;         // smoother window, s
  double load_std = 0.0;       // stationary std of the load fluctuation
  double load_tau = 5.0;       // fluctuation correlation time, s
};

/// Economic dispatch set-point change taking effect at the first ED
/// boundary at or after `time`.
struct DispatchPoint {
  double time = 0.0;
  double demand_scale = 1.0;
};

struct ScenarioSpec {
  std::string case_path;
  std::string loading_label;
  double demand_scale = 1.0;
  double duration = 0.0;
  double dt = 0.01;
  double ed_interval = 100.0;
  std::optional<double> theta;  // empty: automatic choice
  double safety = 1.5;
  std::uint64_t seed = 1;
  std::vector<std::string> outputs{"all"};
  AttackReference attack_reference = AttackReference::OperatingPoint;
  std::vector<LoadEvent> load_events;
  std::vector<Attack> attacks;
  NoiseSpec noise;
  std::vector<DispatchPoint> dispatch;

  /// Number of grid steps, duration / dt rounded.
  long steps() const;
};

ScenarioSpec parse_scenario(const std::string& path);
ScenarioSpec parse_scenario_text(std::string_view content, const std::string& source);
std::string serialize_scenario(const ScenarioSpec& spec);

/// Checks ordering and ranges; throws ValidationError. With a grid, also
/// checks that every load event names a load bus.
void validate_scenario(const ScenarioSpec& spec, const grid::GridCase* grid = nullptr);

/// case_path resolved relative to the directory of the scenario file.
std::string resolve_case_path(const ScenarioSpec& spec, const std::string& scenario_path);

/// Piecewise-constant demand deviation per load bus at time t.
VectorXd load_profile_eval(const ScenarioSpec& spec, const std::vector<int>& load_buses,
                           double t);

/// Index of every attack target in `labels`; throws UnknownTarget.
std::vector<Eigen::Index> resolve_targets(const std::vector<Attack>& attacks,
                                          const std::vector<std::string>& labels);

bool attack_active(const Attack& a, double t);

/// y_a for deviation outputs y. `reference` holds the operating-point
/// outputs used by AttackReference::OperatingPoint; pass an empty vector to
/// scale deviations.
VectorXd inject_attack(const VectorXd& y, const std::vector<Attack>& attacks,
                       const std::vector<Eigen::Index>& targets, double t,
                       const VectorXd& reference);

VectorXd add_noise(const VectorXd& y, double noise_std, std::mt19937_64& rng);

/// One classical RK4 step of x' = A x + G d with d held over the step.
VectorXd step_dynamics(const VectorXd& x, const VectorXd& d, const grid::LinearModel& model,
                       double dt);

/// Consecutive ED intervals covering [0, duration).
struct EdInterval {
  double start = 0.0;
  double end = 0.0;
  double demand_scale = 1.0;
  std::string label;
};
std::vector<EdInterval> ed_intervals(const ScenarioSpec& spec);

/// Index of the ED interval containing t.
size_t interval_at(const std::vector<EdInterval>& intervals, double t);

/// Builds (and caches per demand scale) the output-selected model of every
/// ED interval. Returned references stay valid for the provider's lifetime.
class ModelProvider {
 public:
  ModelProvider(grid::GridCase grid, std::vector<std::string> outputs);

  const grid::LinearModel& model(const EdInterval& interval);
  const grid::GridCase& grid() const { return grid_; }

 private:
  grid::GridCase grid_;
  std::vector<std::string> outputs_;
  std::deque<std::pair<double, grid::LinearModel>> cache_;
};

struct SimulationTrace {
  std::vector<double> t;
  MatrixXd x;        // n x T
  MatrixXd y;        // l x T, y = C x
  MatrixXd y_tilde;  // l x T, y + y_a + noise
  MatrixXd d;        // n_L x T
  std::vector<int> interval;  // ED interval of every sample
  std::vector<EdInterval> intervals;
  std::vector<std::string> state_labels;
  std::vector<std::string> output_labels;
  std::vector<int> load_buses;

  Eigen::Index samples() const { return static_cast<Eigen::Index>(t.size()); }
};

SimulationTrace simulate_scenario(const ScenarioSpec& spec, ModelProvider& models);
SimulationTrace simulate_scenario(const ScenarioSpec& spec, const grid::GridCase& grid);

/// CSV with a `t` column and x.<state>, y.<output>, yt.<output>, d.<bus>
/// columns, every `stride`-th sample (the last sample is always kept).
std::string trace_to_csv(const SimulationTrace& trace, long stride = 1);

struct TraceTable {
  std::vector<std::string> columns;
  MatrixXd values;  // rows = samples
};
TraceTable parse_trace_csv(std::string_view content, const std::string& source);

}  // namespace mtd::sim
