// Acceptance run: one PASS/FAIL line per criterion. Exits non-zero when a
// criterion fails that is not listed as a known limitation in the README.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mtdetect/clustering.hpp"
#include "mtdetect/detection.hpp"
#include "mtdetect/gridmodel.hpp"
#include "mtdetect/matcore.hpp"
#include "mtdetect/randsys.hpp"
#include "mtdetect/simkit.hpp"

#ifndef MTDETECT_DATA_DIR
#define MTDETECT_DATA_DIR "data"
#endif

using namespace mtd;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::string data(const std::string& name) { return std::string(MTDETECT_DATA_DIR) + "/" + name; }

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

double rel(const MatrixXd& a, const MatrixXd& b) {
  const double s = b.norm();
  return s > 0.0 ? (a - b).norm() / s : (a - b).norm();
}

const grid::GridCase& rts() {
  static const grid::GridCase g = grid::parse_case(data("rts24.case"));
  return g;
}

sim::ScenarioSpec scenario(const std::string& name) {
  const std::string path = data(name);
  sim::ScenarioSpec s = sim::parse_scenario(path);
  s.case_path = sim::resolve_case_path(s, path);
  return s;
}

struct Outcome {
  bool pass = false;
  std::string detail;
  bool known_limitation = false;
};

int g_unexpected = 0;

void criterion(int id, const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const char* tag = o.pass ? "PASS" : (o.known_limitation ? "FAIL (known limitation, see README)" : "FAIL");
  if (!o.pass && !o.known_limitation) ++g_unexpected;
  std::cout << "[" << tag << "] " << id << " " << name << ": " << o.detail << " (" << num(secs)
            << " s)" << std::endl;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

MatrixXd quadrature(const MatrixXd& A, const MatrixXd& G, double step_factor) {
  const Eigen::VectorXcd eig = Eigen::EigenSolver<MatrixXd>(A, false).eigenvalues();
  const double rate = -eig.real().maxCoeff();
  const double dt = std::min(0.01, step_factor / eig.cwiseAbs().maxCoeff());
  return matcore::oracle_gramian_quadrature(A, G, 18.0 / rate, dt);
}

// Windows of `attacks` hit by the report, fires outside every window, and
// the worst delay from window start to its first fire.
struct WindowStats {
  int hit = 0;
  long outside = 0;
  double worst_delay = 0.0;
};

WindowStats window_stats(const detect::DetectionReport& rep, const std::vector<sim::Attack>& attacks) {
  WindowStats w;
  std::vector<double> first(attacks.size(), -1.0);
  for (double t : rep.fired_times()) {
    bool inside = false;
    for (size_t a = 0; a < attacks.size(); ++a) {
      if (!sim::attack_active(attacks[a], t)) continue;
      inside = true;
      if (first[a] < 0.0) first[a] = t;
    }
    if (!inside) ++w.outside;
  }
  for (size_t a = 0; a < attacks.size(); ++a) {
    if (first[a] < 0.0) continue;
    ++w.hit;
    w.worst_delay = std::max(w.worst_delay, first[a] - attacks[a].start);
  }
  return w;
}

}  // namespace

int main() {
  criterion(1, "Lyapunov solver vs quadrature, 20 random systems", [] {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto sys = randsys::stable_system(seed, 5, 2);
      const MatrixXd W = matcore::solve_lyapunov(sys.A, sys.G * sys.G.transpose());
      worst = std::max(worst, rel(quadrature(sys.A, sys.G, 0.02), W));
    }
    const double secs = seconds_since(t0);
    return Outcome{worst <= 1e-6 && secs < 5.0, "max rel err " + num(worst)};
  });

  criterion(2, "semistable Gramian of rts24", [] {
    const auto t0 = std::chrono::steady_clock::now();
    const grid::LinearModel m = grid::build_model(rts(), 1.0);
    const matcore::Gramian g = matcore::semistable_gramian(m.semistability, m.A, m.G);
    const double lo = Eigen::SelfAdjointEigenSolver<MatrixXd>(g.W_c).eigenvalues().minCoeff();
    const clustering::PhiMatrix phi = clustering::compute_phi(m, g);
    const double tr = (m.C * g.W_c * m.C.transpose()).trace();
    const double ident = std::abs(tr - phi.Phi.squaredNorm()) / tr;
    const double secs = seconds_since(t0);
    const bool ok = g.lyapunov_residual <= 1e-8 && lo >= -1e-10 && ident <= 1e-8 && secs < 2.0;
    return Outcome{ok, "residual " + num(g.lyapunov_residual) + ", min eig " + num(lo) +
                           ", trace identity " + num(ident)};
  });

  criterion(3, "pair distance vs H2 pair oracle, 10 systems", [] {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    long pairs = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const Index n = 4 + static_cast<Index>(seed % 7);
      const auto sys = randsys::semistable_system(seed, n, 3, n);
      const auto dec = matcore::decompose_semistable(sys.A);
      const auto gram = matcore::semistable_gramian(dec, sys.A, sys.G);
      const auto phi = clustering::compute_phi(sys.C, gram);
      const VectorXd v = sys.C * dec.v_max;
      const clustering::H2PairOracle oracle(sys.C, sys.G, dec);
      for (Index i = 0; i < sys.C.rows(); ++i) {
        for (Index j = i + 1; j < sys.C.rows(); ++j) {
          const VectorXd p = clustering::clustering_coefficients(v, {{i, j}}, &phi).front();
          const double d = clustering::pair_distance(phi, v, i, j);
          const double h = oracle.evaluate(i, j, p(0), p(1));
          worst = std::max(worst, std::abs(d - h) / std::max(h, 1e-300));
          ++pairs;
        }
      }
    }
    const double secs = seconds_since(t0);
    return Outcome{worst <= 1e-8 && secs < 30.0,
                   std::to_string(pairs) + " pairs, max rel err " + num(worst)};
  });

  criterion(4, "error system stability at default theta", [] {
    const auto t0 = std::chrono::steady_clock::now();
    const grid::LinearModel m = grid::build_model(rts(), 1.0);
    const auto res = clustering::cluster_model(m, -1.0);
    const auto rep = clustering::verify_error_stability(m, res.clusters);
    const double secs = seconds_since(t0);
    const bool ok = rep.pi_bar_vmax_norm <= 1e-8 && rep.max_real_pole < -1e-8 && secs < 5.0;
    return Outcome{ok, "theta " + num(res.clusters.theta) + ", K " +
                           std::to_string(res.clusters.size()) + ", ||Pi_bar v|| " +
                           num(rep.pi_bar_vmax_norm) + ", max pole " + num(rep.max_real_pole)};
  });

  criterion(5, "partition and unitarity invariants, 1000 fuzzed calls", [] {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<int> dim(2, 12);
    std::uniform_real_distribution<double> logt(-4.0, 1.5);
    long bad = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      const Index l = dim(rng);
      const Index r = dim(rng);
      clustering::PhiMatrix phi;
      phi.Phi.resize(l, r);
      for (Index i = 0; i < l; ++i) {
        for (Index j = 0; j < r; ++j) phi.Phi(i, j) = normal(rng);
      }
      for (Index i = 1; i < l; i += 3) phi.Phi.row(i) = 0.7 * phi.Phi.row(i - 1) + 1e-3 * phi.Phi.row(i);
      phi.row_norms = phi.Phi.rowwise().norm();
      VectorXd v(l);
      for (Index i = 0; i < l; ++i) v(i) = normal(rng);
      if (trial % 5 == 0) v.head(l / 2).setZero();
      const double theta = std::pow(10.0, logt(rng));
      auto valid = [&](const clustering::ClusterSet& cs) {
        std::vector<int> seen(static_cast<size_t>(l), 0);
        for (const auto& c : cs.clusters) {
          for (Index i : c) {
            if (i < 0 || i >= l) return false;
            ++seen[static_cast<size_t>(i)];
          }
        }
        if (std::any_of(seen.begin(), seen.end(), [](int s) { return s != 1; })) return false;
        const Index K = cs.size();
        return (cs.Pi * cs.Pi.transpose() - MatrixXd::Identity(K, K)).cwiseAbs().maxCoeff() <= 1e-10;
      };
      if (!valid(clustering::form_clusters(phi, v, theta))) ++bad;
      const auto none = clustering::form_clusters(phi, v, 0.0);
      const auto all = clustering::form_clusters(phi, v, 1e9);
      if (!valid(none) || none.size() != l) ++bad;
      if (!valid(all) || all.size() != 1) ++bad;
    }
    return Outcome{bad == 0, std::to_string(bad) + " violations"};
  });

  criterion(6, "clusters move with the loading (x1.2 vs x0.8)", [] {
    const double theta = 0.05;
    auto run = [&](double scale) {
      return clustering::cluster_model(grid::build_model(rts(), scale), theta).clusters;
    };
    const auto hi = run(1.2);
    const auto lo = run(0.8);
    const bool differ = hi.clusters != lo.clusters;
    const bool repeat = run(1.2).Pi == hi.Pi && run(0.8).Pi == lo.Pi;
    return Outcome{differ && repeat, "theta " + num(theta) + ", K " + std::to_string(hi.size()) +
                                         " vs " + std::to_string(lo.size()) +
                                         (repeat ? ", repeat runs identical" : ", NOT deterministic")};
  });

  criterion(7, "end-to-end detection of six scale-attack windows", [] {
    const auto t0 = std::chrono::steady_clock::now();
    const sim::ScenarioSpec s = scenario("scenario3.scn");
    sim::ModelProvider models(rts(), s.outputs);
    const detect::EpsilonTable table = detect::calibrate_scenario(scenario("holdout3.scn"), models);
    const sim::SimulationTrace trace = sim::simulate_scenario(s, models);
    detect::DetectorOptions opt;
    opt.table = &table;
    const detect::DetectionReport rep = detect::run_detector(s, trace, models, opt);
    const WindowStats w = window_stats(rep, s.attacks);
    const double secs = seconds_since(t0);
    const bool isolated =
        std::find(rep.isolated.begin(), rep.isolated.end(), s.attacks.front().target) != rep.isolated.end();
    const bool ok = w.hit == static_cast<int>(s.attacks.size()) && w.outside == 0 &&
                    w.worst_delay <= 2.0 * s.dt + 1e-9 && isolated && secs < 60.0;
    return Outcome{ok, std::to_string(w.hit) + "/6 windows, " + std::to_string(w.outside) +
                           " fires outside, worst delay " + num(w.worst_delay) + " s, isolated " +
                           (isolated ? s.attacks.front().target : std::string("-"))};
  });

  criterion(8, "no false alarms on the attack-free load step", [] {
    const sim::ScenarioSpec s = scenario("scenario1.scn");
    sim::ModelProvider models(rts(), s.outputs);
    const detect::EpsilonTable table = detect::calibrate_scenario(scenario("holdout1.scn"), models);
    detect::DetectorOptions opt;
    opt.table = &table;
    const auto rep = detect::run_detector(s, sim::simulate_scenario(s, models), models, opt);
    return Outcome{rep.fired_pairs == 0, std::to_string(rep.fired_pairs) + " fired pairs"};
  });

  criterion(9, "baseline observer residual vs clustering residual", [] {
    const sim::ScenarioSpec s = scenario("scenario1.scn");
    sim::ModelProvider models(rts(), s.outputs);
    const auto iv = sim::ed_intervals(s);
    const grid::LinearModel& m = models.model(iv.front());
    const sim::SimulationTrace tr = sim::simulate_scenario(s, models);
    const auto cs = detect::interval_clusters(m, s, iv.front());
    const auto th = detect::calibrate_threshold(tr.y_tilde, 0, tr.samples(), cs, 1.0);
    double intra = 0.0;
    for (size_t k = 0; k < th.epsilon.size(); ++k) {
      if (th.covered[k]) intra = std::max(intra, th.epsilon[k]);
    }
    // observer residual just before the load step is removed
    auto obs = detect::make_observer(m, VectorXd::Zero(m.n));
    double settled = 0.0;
    for (Index k = 0; k < tr.samples(); ++k) {
      detect::baseline_observer_step(obs, m, tr.y_tilde.col(k), s.dt);
      if (tr.t[static_cast<size_t>(k)] < 199.995) settled = obs.r_c.norm();
    }
    const double ratio = settled / intra;
    Outcome o{ratio > 100.0, "observer " + num(settled) + ", max intra-cluster " + num(intra) +
                                 ", ratio " + num(ratio)};
    o.known_limitation = true;
    return o;
  });

  criterion(10, "noisy mode", [] {
    // false alarms in the full-state configuration with noiseless thresholds
    sim::ScenarioSpec s1 = scenario("scenario1.scn");
    sim::ModelProvider full(rts(), s1.outputs);
    const detect::EpsilonTable clean = detect::calibrate_scenario(scenario("holdout1.scn"), full);
    s1.noise.std = 1e-3;
    detect::DetectorOptions opt;
    opt.table = &clean;
    const auto fa = detect::run_detector(s1, sim::simulate_scenario(s1, full), full, opt);

    // smoothed detection with thresholds recalibrated on a noisy run
    sim::ScenarioSpec s3 = scenario("scenario3.scn");
    s3.noise.std = 1e-3;
    s3.noise.smoothing = true;
    sim::ScenarioSpec h3 = scenario("holdout3.scn");
    h3.noise = s3.noise;
    h3.seed = 77;
    sim::ModelProvider pg(rts(), s3.outputs);
    const detect::EpsilonTable noisy = detect::calibrate_scenario(h3, pg);
    opt.table = &noisy;
    const auto det = detect::run_detector(s3, sim::simulate_scenario(s3, pg), pg, opt);
    const WindowStats w = window_stats(det, s3.attacks);
    return Outcome{fa.fired_pairs >= 1 && w.hit >= 5,
                   std::to_string(fa.fired_pairs) + " false fired pairs unsmoothed; smoothed " +
                       std::to_string(w.hit) + "/6 windows detected"};
  });

  criterion(11, "RK4 fourth-order convergence on rts24", [] {
    const grid::LinearModel m = grid::build_model(rts(), 1.2);
    auto integrate = [&](double dt) {
      VectorXd x = VectorXd::Zero(m.n);
      VectorXd d = VectorXd::Zero(m.n_load);
      d(0) = 0.5;
      const long steps = std::lround(2.0 / dt);
      for (long k = 0; k < steps; ++k) x = sim::step_dynamics(x, d, m, dt);
      return x;
    };
    const VectorXd ref = integrate(0.01 / 32.0);
    const double ratio = (integrate(0.01) - ref).norm() / (integrate(0.005) - ref).norm();
    return Outcome{ratio >= 8.0 && ratio <= 32.0, "error ratio " + num(ratio)};
  });

  return g_unexpected == 0 ? 0 : 1;
}
