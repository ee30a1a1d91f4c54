#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mtd::cli {

enum ExitCode : int {
  kNoDetection = 0,
  kInputError = 1,
  kNumericalFailure = 2,
  kDetection = 3,
};

/// Options shared by the subcommands; unset overrides keep the scenario's
/// values.
struct RunConfig {
  std::string subcommand;
  std::string case_path;
  std::string scenario_path;
  std::string epsilon_path;   // run: reuse a calibrated table
  std::string holdout_path;   // run: calibrate on this scenario first
  std::string out_dir;
  std::string label;
  std::vector<std::string> outputs;
  double demand_scale = 1.0;
  std::optional<std::string> theta;  // number or "auto"
  std::optional<double> safety;
  std::optional<unsigned long long> seed;
  std::optional<double> noise_std;
  std::optional<double> dt;
  bool smoothing = false;
  long trace_stride = 10;
  bool summary_stdout = false;
  // oracle
  long count = 20;
  long n = 5;
  std::optional<double> tolerance;
};

/// Parses argv and runs one subcommand. Human-readable summaries go to `err`
/// unless --summary-stdout is given; reports are written to files only.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv);

/// Output directory: --out-dir, else $MTDETECT_OUT_DIR, else ".".
std::string resolve_out_dir(const std::string& flag);

}  // namespace mtd::cli
