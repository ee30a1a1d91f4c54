#include "cli.hpp"

#include <CLI11.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "mtdetect/clustering.hpp"
#include "mtdetect/detection.hpp"
#include "mtdetect/error.hpp"
#include "mtdetect/gridmodel.hpp"
#include "mtdetect/matcore.hpp"
#include "mtdetect/randsys.hpp"
#include "mtdetect/sectionfile.hpp"
#include "mtdetect/simkit.hpp"

namespace mtd::cli {

namespace fs = std::filesystem;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using text::format_double;

std::string resolve_out_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("MTDETECT_OUT_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return ".";
}

namespace {

std::string out_file(const RunConfig& cfg, const std::string& name) {
  const fs::path dir = resolve_out_dir(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw InputError("cannot create output directory " + dir.string());
  }
  return (dir / name).string();
}

std::optional<double> parse_theta(const std::optional<std::string>& s) {
  if (!s || *s == "auto") return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s->c_str(), &end);
  if (end == s->c_str() || *end != '\0' || !(v >= 0.0) || !std::isfinite(v)) {
    throw InputError("--theta must be a non-negative number or auto, got " + *s);
  }
  return v;
}

sim::ScenarioSpec load_scenario(const RunConfig& cfg, const std::string& path) {
  sim::ScenarioSpec spec = sim::parse_scenario(path);
  spec.case_path = cfg.case_path.empty() ? sim::resolve_case_path(spec, path) : cfg.case_path;
  if (cfg.theta) spec.theta = parse_theta(cfg.theta);
  if (cfg.safety) spec.safety = *cfg.safety;
  if (cfg.seed) spec.seed = *cfg.seed;
  if (cfg.noise_std) spec.noise.std = *cfg.noise_std;
  if (cfg.dt) spec.dt = *cfg.dt;
  if (cfg.smoothing) spec.noise.smoothing = true;
  if (!cfg.outputs.empty()) spec.outputs = cfg.outputs;
  return spec;
}

std::string join(const std::vector<std::string>& v) {
  if (v.empty()) return "-";
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : " ") + x;
  return s;
}

std::string stability_report(const clustering::ErrorStabilityReport& r) {
  std::ostringstream os;
  os << "pi_bar_vmax_norm " << format_double(r.pi_bar_vmax_norm) << "\n"
     << "max_real_pole " << format_double(r.max_real_pole) << "\n"
     << "zero_mode_residue " << format_double(r.zero_mode_residue) << "\n"
     << "pass " << (r.pass ? "yes" : "no") << "\n";
  return os.str();
}

int cmd_cluster(const RunConfig& cfg, std::ostream& summary) {
  std::string case_path = cfg.case_path;
  double scale = cfg.demand_scale;
  std::string label = cfg.label;
  std::optional<double> theta = parse_theta(cfg.theta);
  std::vector<std::string> outputs = cfg.outputs.empty() ? std::vector<std::string>{"all"}
                                                         : cfg.outputs;
  if (!cfg.scenario_path.empty()) {
    const sim::ScenarioSpec spec = load_scenario(cfg, cfg.scenario_path);
    case_path = spec.case_path;
    scale = spec.demand_scale;
    if (label.empty()) label = spec.loading_label;
    theta = spec.theta;
    outputs = spec.outputs;
  }
  if (case_path.empty()) throw InputError("cluster: --case or --scenario is required");
  if (label.empty()) label = "x" + format_double(scale);

  const grid::GridCase grid = grid::parse_case(case_path);
  const grid::LinearModel model =
      grid::select_outputs(grid::build_model(grid, scale, label), outputs);
  const auto result = clustering::cluster_model(model, theta ? *theta : -1.0);
  const auto report = clustering::verify_error_stability(model, result.clusters);

  text::write_file(out_file(cfg, "clusters_" + label + ".txt"),
                   clustering::serialize_clusters(result.clusters));
  text::write_file(out_file(cfg, "stability_" + label + ".txt"), stability_report(report));

  summary << label << ": " << result.clusters.size() << " clusters, "
          << result.clusters.singletons().size() << " singletons, theta "
          << format_double(result.clusters.theta)
          << (result.theta_satisfied ? "" : " (no theta on the grid avoids singletons)") << "\n"
          << clustering::describe_clusters(result.clusters, model.output_labels)
          << "error system check: " << (report.pass ? "PASS" : "FAIL") << "\n";
  return report.pass ? kNoDetection : kNumericalFailure;
}

int cmd_calibrate(const RunConfig& cfg, std::ostream& summary) {
  if (cfg.scenario_path.empty()) throw InputError("calibrate: --scenario is required");
  const sim::ScenarioSpec spec = load_scenario(cfg, cfg.scenario_path);
  const grid::GridCase grid = grid::parse_case(spec.case_path);
  sim::validate_scenario(spec, &grid);
  sim::ModelProvider models(grid, spec.outputs);
  const detect::EpsilonTable table = detect::calibrate_scenario(spec, models);
  text::write_file(out_file(cfg, "epsilon.txt"), detect::serialize_epsilon_table(table));
  for (const auto& iv : table.intervals) {
    size_t covered = 0;
    for (bool c : iv.thresholds.covered) covered += c ? 1 : 0;
    summary << iv.label << ": " << iv.clusters.size() << " clusters, " << covered
            << " covered, " << iv.clusters.singletons().size() << " uncovered singletons\n";
  }
  return kNoDetection;
}

int cmd_run(const RunConfig& cfg, std::ostream& summary) {
  if (cfg.scenario_path.empty()) throw InputError("run: --scenario is required");
  if (!cfg.epsilon_path.empty() && !cfg.holdout_path.empty()) {
    throw InputError("run: --epsilon and --holdout are mutually exclusive");
  }
  const sim::ScenarioSpec spec = load_scenario(cfg, cfg.scenario_path);
  const grid::GridCase grid = grid::parse_case(spec.case_path);
  sim::validate_scenario(spec, &grid);
  sim::ModelProvider models(grid, spec.outputs);

  std::optional<detect::EpsilonTable> table;
  if (!cfg.epsilon_path.empty()) {
    table = detect::parse_epsilon_table(text::read_file(cfg.epsilon_path), cfg.epsilon_path);
  } else if (!cfg.holdout_path.empty()) {
    sim::ScenarioSpec holdout = load_scenario(cfg, cfg.holdout_path);
    sim::validate_scenario(holdout, &grid);
    table = detect::calibrate_scenario(holdout, models);
  }

  const sim::SimulationTrace trace = sim::simulate_scenario(spec, models);
  detect::DetectorOptions options;
  options.stride = cfg.trace_stride;
  if (table) options.table = &*table;
  const detect::DetectionReport report = detect::run_detector(spec, trace, models, options);

  text::write_file(out_file(cfg, "trace.csv"), sim::trace_to_csv(trace, cfg.trace_stride));
  text::write_file(out_file(cfg, "report.csv"), detect::report_to_csv(report));

  summary << "intervals " << report.intervals << ", fired pairs " << report.fired_pairs
          << " in " << report.fired_samples << " samples\n"
          << "first detection "
          << (report.first_detection ? format_double(*report.first_detection) + " s" : "-")
          << "\nflagged " << join(report.flagged) << "\nisolated " << join(report.isolated)
          << "\nambiguous " << join(report.ambiguous) << "\nuncovered " << join(report.uncovered)
          << "\n";
  return report.detected() ? kDetection : kNoDetection;
}

double relative(const MatrixXd& a, const MatrixXd& b) {
  const double scale = b.norm();
  return scale > 0.0 ? (a - b).norm() / scale : (a - b).norm();
}

/// Worst relative gap between the Phi-row pair distance and the H2 oracle.
double pair_gap(const MatrixXd& C, const MatrixXd& G,
                const matcore::SemistableDecomposition& decomp, const matcore::Gramian& gram) {
  const clustering::PhiMatrix phi = clustering::compute_phi(C, gram);
  const VectorXd v = C * decomp.v_max;
  const clustering::H2PairOracle oracle(C, G, decomp);
  const double floor = 1e-12 * std::max(1.0, phi.row_norms.maxCoeff());
  double worst = 0.0;
  for (Index i = 0; i < C.rows(); ++i) {
    for (Index j = i + 1; j < C.rows(); ++j) {
      const VectorXd p = clustering::clustering_coefficients(v, {{i, j}}, &phi).front();
      const double d = clustering::pair_distance(phi, v, i, j);
      const double h = oracle.evaluate(i, j, p(0), p(1));
      worst = std::max(worst, std::abs(d - h) / std::max(h, floor));
    }
  }
  return worst;
}

double quadrature_gap(const MatrixXd& A, const MatrixXd& G, double step_factor) {
  const MatrixXd W = matcore::solve_lyapunov(A, G * G.transpose());
  const Eigen::VectorXcd eig = Eigen::EigenSolver<MatrixXd>(A, false).eigenvalues();
  const double rate = -eig.real().maxCoeff();
  const double fastest = eig.cwiseAbs().maxCoeff();
  const double horizon = 18.0 / rate;
  const double dt = std::min(0.01, step_factor / fastest);
  return relative(matcore::oracle_gramian_quadrature(A, G, horizon, dt), W);
}

int cmd_oracle(const RunConfig& cfg, std::ostream& summary) {
  const std::uint64_t seed = cfg.seed ? *cfg.seed : 1;
  std::ostringstream rep;
  bool pass = true;
  if (!cfg.case_path.empty()) {
    const double tol = cfg.tolerance ? *cfg.tolerance : 1e-5;
    const grid::GridCase grid = grid::parse_case(cfg.case_path);
    const grid::LinearModel model = grid::select_outputs(
        grid::build_model(grid, cfg.demand_scale, cfg.label),
        cfg.outputs.empty() ? std::vector<std::string>{"all"} : cfg.outputs);
    const auto& decomp = model.semistability;
    const matcore::Gramian gram = matcore::semistable_gramian(decomp, model.A, model.G);
    const MatrixXd G_bar = decomp.V_bar.transpose() * model.G;
    const double lyap = quadrature_gap(decomp.A_bar, G_bar, 0.2);
    const double pairs = pair_gap(model.C, model.G, decomp, gram);
    pass = lyap <= tol && pairs <= tol;
    rep << "case " << cfg.case_path << "\nlyapunov_vs_quadrature " << format_double(lyap)
        << "\npair_vs_h2 " << format_double(pairs) << "\n";
    rep << "tolerance " << format_double(tol) << "\n";
  } else {
    const double tol = cfg.tolerance ? *cfg.tolerance : 1e-6;
    const double pair_tol = cfg.tolerance ? *cfg.tolerance : 1e-8;
    if (cfg.n < 2 || cfg.count < 1) throw InputError("oracle: need --n >= 2 and --count >= 1");
    double lyap = 0.0;
    double pairs = 0.0;
    for (long s = 0; s < cfg.count; ++s) {
      const auto stable = randsys::stable_system(seed + static_cast<std::uint64_t>(s), cfg.n, 2);
      lyap = std::max(lyap, quadrature_gap(stable.A, stable.G, 0.02));
      const auto semi =
          randsys::semistable_system(seed + static_cast<std::uint64_t>(s), cfg.n, 3, cfg.n);
      const auto decomp = matcore::decompose_semistable(semi.A);
      const auto gram = matcore::semistable_gramian(decomp, semi.A, semi.G);
      pairs = std::max(pairs, pair_gap(semi.C, semi.G, decomp, gram));
    }
    pass = lyap <= tol && pairs <= pair_tol;
    rep << "systems " << cfg.count << "\nn " << cfg.n << "\nseed " << seed
        << "\nlyapunov_vs_quadrature " << format_double(lyap) << "\npair_vs_h2 "
        << format_double(pairs) << "\ntolerance " << format_double(tol) << " "
        << format_double(pair_tol) << "\n";
  }
  rep << "result " << (pass ? "PASS" : "FAIL") << "\n";
  text::write_file(out_file(cfg, "oracle.txt"), rep.str());
  summary << rep.str();
  return pass ? kNoDetection : kNumericalFailure;
}

void add_common(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--case", cfg.case_path, "Grid case file");
  sub->add_option("--out-dir", cfg.out_dir, "Output directory (default $MTDETECT_OUT_DIR or .)");
  sub->add_option("--seed", cfg.seed, "RNG seed");
  sub->add_option("--outputs", cfg.outputs, "Measured outputs: labels, block names or all");
  sub->add_flag("--summary-stdout", cfg.summary_stdout, "Print the summary on stdout");
}

void add_scenario_overrides(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--scenario", cfg.scenario_path, "Scenario file");
  sub->add_option("--theta", cfg.theta, "Clustering coarseness, or auto");
  sub->add_option("--safety", cfg.safety, "Threshold safety factor (>= 1)");
  sub->add_option("--noise-std", cfg.noise_std, "Measurement noise std, p.u.")
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--dt", cfg.dt, "Integration step, s");
  sub->add_flag("--smoothing", cfg.smoothing, "Enable the residual smoother");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  CLI::App app{"Moving-target FDI attack detection by dynamic clustering"};
  app.require_subcommand(1, 1);

  auto* cluster = app.add_subcommand("cluster", "Cluster the measurements of a case");
  add_common(cluster, cfg);
  add_scenario_overrides(cluster, cfg);
  cluster->add_option("--demand-scale", cfg.demand_scale, "Load-bus demand multiplier");
  cluster->add_option("--label", cfg.label, "Loading label used in file names");

  auto* calibrate = app.add_subcommand("calibrate", "Calibrate thresholds on an attack-free run");
  add_common(calibrate, cfg);
  add_scenario_overrides(calibrate, cfg);

  auto* run = app.add_subcommand("run", "Simulate a scenario and run the detector");
  add_common(run, cfg);
  add_scenario_overrides(run, cfg);
  run->add_option("--epsilon", cfg.epsilon_path, "Threshold table from calibrate");
  run->add_option("--holdout", cfg.holdout_path, "Attack-free scenario to calibrate on");
  run->add_option("--trace-stride", cfg.trace_stride, "Write every n-th sample")
      ->check(CLI::PositiveNumber);

  auto* oracle = app.add_subcommand("oracle", "Cross-check the solvers against oracles");
  add_common(oracle, cfg);
  oracle->add_option("--count", cfg.count, "Number of random systems");
  oracle->add_option("--n", cfg.n, "State dimension of the random systems");
  oracle->add_option("--tol", cfg.tolerance, "Relative tolerance");
  oracle->add_option("--demand-scale", cfg.demand_scale, "Load-bus demand multiplier");
  oracle->add_option("--label", cfg.label, "Loading label");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kInputError;
  }

  std::ostream& summary = cfg.summary_stdout ? out : err;
  try {
    if (*cluster) return cmd_cluster(cfg, summary);
    if (*calibrate) return cmd_calibrate(cfg, summary);
    if (*run) return cmd_run(cfg, summary);
    return cmd_oracle(cfg, summary);
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumericalFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kNumericalFailure;
  }
}

int run_cli(int argc, const char* const* argv) { return run_cli(argc, argv, std::cout, std::cerr); }

}  // namespace mtd::cli
