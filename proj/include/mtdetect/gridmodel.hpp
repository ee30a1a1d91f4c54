#pragma once

#include <Eigen/Core>

#include <string>
#include <string_view>
#include <vector>

#include "mtdetect/matcore.hpp"

namespace mtd::grid {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class BusKind { Generator, Load };

struct Bus {
  int id = 0;
  BusKind kind = BusKind::Load;
};

struct Branch {
  int from = 0;
  int to = 0;
  double b = 0.0;  // series susceptance, p.u.
};

/// Swing and governor parameters of one generator bus. pmax is the dispatch
/// capacity; pd is a fixed local demand netted against the dispatch.
struct Generator {
  int bus = 0;
  double J = 0.0;
  double D = 0.0;
  double e_T = 1.0;
  double T_u = 0.0;
  double T_g = 0.0;
  double K_t = 1.0;
  double r = 0.0;
  double pmax = 0.0;
  double pd = 0.0;
};

struct Load {
  int bus = 0;
  double J = 0.0;
  double D = 0.0;
  double demand = 0.0;  // nominal demand L_i^0, p.u.
};

/// Generators and loads are stored in the order their buses appear in the
/// [bus] section.
struct GridCase {
  std::string name;
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;
  std::vector<Load> loads;

  size_t n_gen() const { return generators.size(); }
  size_t n_load() const { return loads.size(); }
  /// Position of a bus id in `buses`; throws ValidationError when absent.
  size_t bus_index(int id) const;
  VectorXd nominal_demand() const;
};

GridCase parse_case(const std::string& path);
GridCase parse_case_text(std::string_view content, const std::string& source);
std::string serialize_case(const GridCase& grid);

/// Checks connectivity and parameter signs; throws ValidationError.
void validate(const GridCase& grid);

struct OperatingPoint {
  VectorXd angles;      // radians per bus, angles(0) = 0
  VectorXd injections;  // p.u. per bus, sums to zero
  VectorXd demand;      // p.u. per load bus
  std::string loading_label;
};

/// DC power flow with proportional-to-capacity dispatch. Throws
/// SingularNetwork for a disconnected network and InfeasibleDispatch when the
/// total demand exceeds the installed capacity.
OperatingPoint dc_power_flow(const GridCase& grid, const VectorXd& demand,
                             std::string loading_label = "");

/// Bus admittance of the lossless network linearized at the operating point:
/// off-diagonal -b_ij cos(delta_i - delta_j), rows summing to zero.
MatrixXd admittance(const GridCase& grid, const VectorXd& angles);

/// Linearized closed-loop model with states ordered
/// [omega_G, omega_L, P_G, P_L, P_T, a].
struct LinearModel {
  MatrixXd A;  // closed-loop state matrix
  MatrixXd G;  // n x n_L load disturbance input
  MatrixXd C;  // l x n output matrix
  std::vector<std::string> state_labels;
  std::vector<std::string> output_labels;
  Eigen::Index n = 0;
  Eigen::Index n_gen = 0;
  Eigen::Index n_load = 0;
  std::vector<int> gen_buses;
  std::vector<int> load_buses;
  OperatingPoint op;
  matcore::SemistableDecomposition semistability;
  /// Absolute operating-point values of the states: zero frequency
  /// deviation, P_G = net injection, P_L = demand drawn, P_T = dispatch,
  /// a = P_T / K_t. The dynamic model itself is in deviation coordinates.
  VectorXd x0;

  Eigen::Index outputs() const { return C.rows(); }
  /// Left null vector mapped to measurement space (C * v_max).
  VectorXd measurement_vmax() const;
  /// C * x0, the reported values at the operating point.
  VectorXd reference_outputs() const { return C * x0; }
};

/// omega_G1.., omega_L1.., P_G1.., P_L1.., P_T1.., a1..
std::vector<std::string> make_state_labels(size_t n_gen, size_t n_load);

LinearModel linearize(const GridCase& grid, const OperatingPoint& op);

/// Keeps the named outputs in the given order. A name is either a state
/// label, a block name (omega_G, omega_L, P_G, P_L, P_T, a) or "all".
LinearModel select_outputs(const LinearModel& model,
                           const std::vector<std::string>& selection);

/// Operating point at `scale` times nominal load-bus demand, then linearize.
LinearModel build_model(const GridCase& grid, double demand_scale,
                        const std::string& label = "");

}  // namespace mtd::grid
