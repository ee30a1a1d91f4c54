#include "mtdetect/simkit.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

#include "mtdetect/error.hpp"
#include "mtdetect/sectionfile.hpp"

namespace mtd::sim {

namespace {

constexpr double kTimeTol = 1e-9;

std::string join_fields(const text::Record& rec, size_t from) {
  std::string out;
  for (size_t i = from; i < rec.fields.size(); ++i) {
    if (!out.empty()) out += ' ';
    out += rec.fields[i].text;
  }
  return out;
}

bool parse_flag(const text::Token& tok, const std::string& src) {
  if (tok.text == "on" || tok.text == "true" || tok.text == "1") return true;
  if (tok.text == "off" || tok.text == "false" || tok.text == "0") return false;
  text::fail(tok, src, "expected on or off, found '" + tok.text + "'");
}

void parse_scenario_section(const text::Section& sec, const std::string& src,
                            ScenarioSpec& spec) {
  for (const auto& rec : sec.records) {
    const std::string& key = rec.fields[0].text;
    if (rec.fields.size() < 2) text::fail(rec, src, "missing value for '" + key + "'");
    const text::Token& val = rec.fields[1];
    auto single = [&] { text::expect_fields(rec, src, 2); };
    if (key == "case") {
      single();
      spec.case_path = val.text;
    } else if (key == "loading") {
      spec.loading_label = join_fields(rec, 1);
    } else if (key == "demand_scale") {
      single();
      spec.demand_scale = text::to_double(val, src);
    } else if (key == "duration") {
      single();
      spec.duration = text::to_double(val, src);
    } else if (key == "dt") {
      single();
      spec.dt = text::to_double(val, src);
    } else if (key == "ed_interval") {
      single();
      spec.ed_interval = text::to_double(val, src);
    } else if (key == "theta") {
      single();
      if (val.text == "auto") {
        spec.theta.reset();
      } else {
        spec.theta = text::to_double(val, src);
      }
    } else if (key == "safety") {
      single();
      spec.safety = text::to_double(val, src);
    } else if (key == "seed") {
      single();
      const long s = text::to_long(val, src);
      if (s < 0) text::fail(val, src, "seed must be nonnegative");
      spec.seed = static_cast<std::uint64_t>(s);
    } else if (key == "outputs") {
      spec.outputs.clear();
      for (size_t i = 1; i < rec.fields.size(); ++i) spec.outputs.push_back(rec.fields[i].text);
    } else if (key == "attack_reference") {
      single();
      if (val.text == "operating_point") {
        spec.attack_reference = AttackReference::OperatingPoint;
      } else if (val.text == "deviation") {
        spec.attack_reference = AttackReference::Deviation;
      } else {
        text::fail(val, src, "expected operating_point or deviation");
      }
    } else {
      text::fail(rec.fields[0], src, "unknown scenario key '" + key + "'");
    }
  }
}

void parse_noise_section(const text::Section& sec, const std::string& src, NoiseSpec& noise) {
  for (const auto& rec : sec.records) {
    text::expect_fields(rec, src, 2);
    const std::string& key = rec.fields[0].text;
    const text::Token& val = rec.fields[1];
    if (key == "std") {
      noise.std = text::to_double(val, src);
    } else if (key == "smoothing") {
      noise.smoothing = parse_flag(val, src);
    } else if (key == "window") {
      noise.window = text::to_double(val, src);
    } else if (key == "load_std") {
      noise.load_std = text::to_double(val, src);
    } else if (key == "load_tau") {
      noise.load_tau = text::to_double(val, src);
    } else {
      text::fail(rec.fields[0], src, "unknown noise key '" + key + "'");
    }
  }
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

}  // namespace

long ScenarioSpec::steps() const { return std::lround(duration / dt); }

ScenarioSpec parse_scenario_text(std::string_view content, const std::string& source) {
  const text::SectionFile file = text::parse_sections(content, source);
  ScenarioSpec spec;
  bool seen_scenario = false;
  bool seen_noise = false;
  for (const auto& sec : file.sections) {
    if (sec.name == "scenario") {
      if (seen_scenario) throw ParseError(source, sec.line, 1, "duplicate [scenario] section");
      seen_scenario = true;
      parse_scenario_section(sec, source, spec);
    } else if (sec.name == "load_event") {
      for (const auto& rec : sec.records) {
        text::expect_fields(rec, source, 3);
        LoadEvent ev;
        ev.time = text::to_double(rec.fields[0], source);
        ev.bus = static_cast<int>(text::to_long(rec.fields[1], source));
        ev.delta = text::to_double(rec.fields[2], source);
        spec.load_events.push_back(ev);
      }
    } else if (sec.name == "attack") {
      for (const auto& rec : sec.records) {
        text::expect_fields(rec, source, 5);
        Attack a;
        a.start = text::to_double(rec.fields[0], source);
        a.duration = text::to_double(rec.fields[1], source);
        a.target = rec.fields[2].text;
        const std::string& kind = rec.fields[3].text;
        if (kind == "scale") {
          a.kind = AttackKind::Scale;
        } else if (kind == "bias") {
          a.kind = AttackKind::Bias;
        } else {
          text::fail(rec.fields[3], source, "attack kind must be scale or bias");
        }
        a.magnitude = text::to_double(rec.fields[4], source);
        spec.attacks.push_back(a);
      }
    } else if (sec.name == "noise") {
      if (seen_noise) throw ParseError(source, sec.line, 1, "duplicate [noise] section");
      seen_noise = true;
      parse_noise_section(sec, source, spec.noise);
    } else if (sec.name == "dispatch") {
      for (const auto& rec : sec.records) {
        text::expect_fields(rec, source, 2);
        spec.dispatch.push_back(DispatchPoint{text::to_double(rec.fields[0], source),
                                              text::to_double(rec.fields[1], source)});
      }
    } else {
      throw ParseError(source, sec.line, 1, "unknown section [" + sec.name + "]");
    }
  }
  if (!seen_scenario) throw ParseError(source, 1, 1, "missing [scenario] section");
  if (spec.case_path.empty()) throw ParseError(source, 1, 1, "scenario has no case");
  if (spec.duration <= 0.0) throw ParseError(source, 1, 1, "scenario has no duration");
  return spec;
}

ScenarioSpec parse_scenario(const std::string& path) {
  return parse_scenario_text(text::read_file(path), path);
}

std::string serialize_scenario(const ScenarioSpec& spec) {
  using text::format_double;
  std::ostringstream os;
  os << "[scenario]\n";
  os << "case " << spec.case_path << "\n";
  if (!spec.loading_label.empty()) os << "loading " << spec.loading_label << "\n";
  os << "demand_scale " << format_double(spec.demand_scale) << "\n";
  os << "duration " << format_double(spec.duration) << "\n";
  os << "dt " << format_double(spec.dt) << "\n";
  os << "ed_interval " << format_double(spec.ed_interval) << "\n";
  os << "theta " << (spec.theta ? format_double(*spec.theta) : std::string("auto")) << "\n";
  os << "safety " << format_double(spec.safety) << "\n";
  os << "seed " << spec.seed << "\n";
  os << "outputs";
  for (const auto& o : spec.outputs) os << ' ' << o;
  os << "\n";
  os << "attack_reference "
     << (spec.attack_reference == AttackReference::OperatingPoint ? "operating_point"
                                                                  : "deviation")
     << "\n";
  if (!spec.load_events.empty()) {
    os << "\n[load_event]\n# time bus delta\n";
    for (const auto& ev : spec.load_events) {
      os << format_double(ev.time) << ' ' << ev.bus << ' ' << format_double(ev.delta) << "\n";
    }
  }
  if (!spec.attacks.empty()) {
    os << "\n[attack]\n# start duration target kind magnitude\n";
    for (const auto& a : spec.attacks) {
      os << format_double(a.start) << ' ' << format_double(a.duration) << ' ' << a.target
         << ' ' << (a.kind == AttackKind::Scale ? "scale" : "bias") << ' '
         << format_double(a.magnitude) << "\n";
    }
  }
  os << "\n[noise]\n";
  os << "std " << format_double(spec.noise.std) << "\n";
  os << "smoothing " << (spec.noise.smoothing ? "on" : "off") << "\n";
  os << "window " << format_double(spec.noise.window) << "\n";
  os << "load_std " << format_double(spec.noise.load_std) << "\n";
  os << "load_tau " << format_double(spec.noise.load_tau) << "\n";
  if (!spec.dispatch.empty()) {
    os << "\n[dispatch]\n# time demand_scale\n";
    for (const auto& p : spec.dispatch) {
      os << format_double(p.time) << ' ' << format_double(p.demand_scale) << "\n";
    }
  }
  return os.str();
}

void validate_scenario(const ScenarioSpec& spec, const grid::GridCase* grid) {
  require(spec.dt > 0.0 && spec.dt <= 0.02, "dt must lie in (0, 0.02]");
  require(spec.duration > 0.0, "duration must be positive");
  require(spec.ed_interval > 0.0, "ed_interval must be positive");
  require(spec.demand_scale > 0.0, "demand_scale must be positive");
  require(spec.safety >= 1.0, "safety factor must be at least 1");
  require(!spec.theta || *spec.theta >= 0.0, "theta must be nonnegative");
  require(!spec.outputs.empty(), "outputs must not be empty");
  require(spec.noise.std >= 0.0, "noise std must be nonnegative");
  require(spec.noise.window > 0.0, "smoother window must be positive");
  require(spec.noise.load_std >= 0.0, "load_std must be nonnegative");
  require(spec.noise.load_tau > 0.0, "load_tau must be positive");
  double last = 0.0;
  for (const auto& ev : spec.load_events) {
    require(ev.time >= last, "load events must be time-ordered");
    require(ev.time <= spec.duration + kTimeTol, "load event after the end of the scenario");
    last = ev.time;
    if (grid != nullptr) {
      bool is_load = false;
      for (const auto& l : grid->loads) is_load = is_load || l.bus == ev.bus;
      require(is_load, "load event at bus " + std::to_string(ev.bus) + ", not a load bus");
    }
  }
  last = 0.0;
  for (const auto& a : spec.attacks) {
    require(a.start >= last, "attacks must be time-ordered");
    require(a.duration > 0.0, "attack duration must be positive");
    require(a.start + a.duration <= spec.duration + kTimeTol,
            "attack extends past the end of the scenario");
    last = a.start;
  }
  last = 0.0;
  for (const auto& p : spec.dispatch) {
    require(p.time >= last, "dispatch points must be time-ordered");
    require(p.demand_scale > 0.0, "dispatch demand_scale must be positive");
    last = p.time;
  }
}

std::string resolve_case_path(const ScenarioSpec& spec, const std::string& scenario_path) {
  namespace fs = std::filesystem;
  const fs::path p(spec.case_path);
  if (p.is_absolute()) return p.string();
  const fs::path beside = fs::path(scenario_path).parent_path() / p;
  if (fs::exists(beside)) return beside.string();
  return p.string();
}

VectorXd load_profile_eval(const ScenarioSpec& spec, const std::vector<int>& load_buses,
                           double t) {
  VectorXd d = VectorXd::Zero(static_cast<Eigen::Index>(load_buses.size()));
  for (const auto& ev : spec.load_events) {
    if (ev.time > t + kTimeTol) break;
    for (size_t k = 0; k < load_buses.size(); ++k) {
      if (load_buses[k] == ev.bus) d(static_cast<Eigen::Index>(k)) += ev.delta;
    }
  }
  return d;
}

std::vector<Eigen::Index> resolve_targets(const std::vector<Attack>& attacks,
                                          const std::vector<std::string>& labels) {
  std::vector<Eigen::Index> out;
  for (const auto& a : attacks) {
    Eigen::Index found = -1;
    for (size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == a.target) found = static_cast<Eigen::Index>(i);
    }
    if (found < 0) throw UnknownTarget("attack target '" + a.target + "' is not a measured output");
    out.push_back(found);
  }
  return out;
}

bool attack_active(const Attack& a, double t) {
  return t >= a.start - kTimeTol && t < a.start + a.duration - kTimeTol;
}

VectorXd inject_attack(const VectorXd& y, const std::vector<Attack>& attacks,
                       const std::vector<Eigen::Index>& targets, double t,
                       const VectorXd& reference) {
  if (targets.size() != attacks.size()) {
    throw DimensionMismatch("inject_attack: one target index per attack");
  }
  VectorXd ya = VectorXd::Zero(y.size());
  for (size_t k = 0; k < attacks.size(); ++k) {
    const Attack& a = attacks[k];
    if (!attack_active(a, t)) continue;
    const Eigen::Index m = targets[k];
    if (m < 0 || m >= y.size()) throw UnknownTarget("attack target index out of range");
    if (a.kind == AttackKind::Scale) {
      const double base = reference.size() == y.size() ? reference(m) + y(m) : y(m);
      ya(m) += a.magnitude * base;
    } else {
      ya(m) += a.magnitude;
    }
  }
  return ya;
}

VectorXd add_noise(const VectorXd& y, double noise_std, std::mt19937_64& rng) {
  if (noise_std <= 0.0) return y;
  std::normal_distribution<double> normal(0.0, noise_std);
  VectorXd out = y;
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) += normal(rng);
  return out;
}

VectorXd step_dynamics(const VectorXd& x, const VectorXd& d, const grid::LinearModel& model,
                       double dt) {
  if (dt <= 0.0) throw ValidationError("step_dynamics: dt must be positive");
  const VectorXd gd = model.G * d;
  const VectorXd k1 = model.A * x + gd;
  const VectorXd k2 = model.A * (x + 0.5 * dt * k1) + gd;
  const VectorXd k3 = model.A * (x + 0.5 * dt * k2) + gd;
  const VectorXd k4 = model.A * (x + dt * k3) + gd;
  VectorXd next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite()) throw NonFinite("state became non-finite during integration");
  return next;
}

std::vector<EdInterval> ed_intervals(const ScenarioSpec& spec) {
  std::vector<EdInterval> out;
  for (long k = 0;; ++k) {
    const double start = static_cast<double>(k) * spec.ed_interval;
    if (start >= spec.duration - kTimeTol && k > 0) break;
    EdInterval iv;
    iv.start = start;
    iv.end = std::min(start + spec.ed_interval, spec.duration);
    iv.demand_scale = spec.demand_scale;
    for (const auto& p : spec.dispatch) {
      if (p.time <= start + kTimeTol) iv.demand_scale = p.demand_scale;
    }
    iv.label = (spec.loading_label.empty() ? std::string("ed") : spec.loading_label) + "/" +
               std::to_string(k);
    out.push_back(iv);
  }
  return out;
}

size_t interval_at(const std::vector<EdInterval>& intervals, double t) {
  size_t idx = 0;
  for (size_t k = 0; k < intervals.size(); ++k) {
    if (intervals[k].start <= t + kTimeTol) idx = k;
  }
  return idx;
}

ModelProvider::ModelProvider(grid::GridCase grid, std::vector<std::string> outputs)
    : grid_(std::move(grid)), outputs_(std::move(outputs)) {}

const grid::LinearModel& ModelProvider::model(const EdInterval& interval) {
  for (const auto& [scale, m] : cache_) {
    if (scale == interval.demand_scale) return m;
  }
  grid::LinearModel m = grid::select_outputs(
      grid::build_model(grid_, interval.demand_scale, interval.label), outputs_);
  cache_.emplace_back(interval.demand_scale, std::move(m));
  return cache_.back().second;
}

SimulationTrace simulate_scenario(const ScenarioSpec& spec, ModelProvider& models) {
  validate_scenario(spec, &models.grid());
  SimulationTrace tr;
  tr.intervals = ed_intervals(spec);
  const long steps = spec.steps();
  const auto samples = static_cast<Eigen::Index>(steps + 1);

  const grid::LinearModel& first = models.model(tr.intervals.front());
  const Eigen::Index n = first.n;
  const Eigen::Index l = first.outputs();
  const Eigen::Index nL = first.n_load;
  tr.state_labels = first.state_labels;
  tr.output_labels = first.output_labels;
  tr.load_buses = first.load_buses;
  const auto targets = resolve_targets(spec.attacks, tr.output_labels);

  tr.t.resize(static_cast<size_t>(samples));
  tr.interval.resize(static_cast<size_t>(samples));
  tr.x.resize(n, samples);
  tr.y.resize(l, samples);
  tr.y_tilde.resize(l, samples);
  tr.d.resize(nL, samples);

  std::mt19937_64 meas_rng(spec.seed);
  std::mt19937_64 load_rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> unit(0.0, 1.0);
  const double decay = std::exp(-spec.dt / spec.noise.load_tau);
  const double kick = spec.noise.load_std * std::sqrt(1.0 - decay * decay);
  VectorXd fluct = VectorXd::Zero(nL);

  VectorXd x = VectorXd::Zero(n);
  for (Eigen::Index k = 0; k < samples; ++k) {
    const double t = static_cast<double>(k) * spec.dt;
    const size_t iv = interval_at(tr.intervals, t);
    const grid::LinearModel& model = models.model(tr.intervals[iv]);
    const VectorXd d = load_profile_eval(spec, tr.load_buses, t) + fluct;
    const VectorXd y = model.C * x;
    const VectorXd ref = spec.attack_reference == AttackReference::OperatingPoint
                             ? model.reference_outputs()
                             : VectorXd();
    const VectorXd ya = inject_attack(y, spec.attacks, targets, t, ref);

    tr.t[static_cast<size_t>(k)] = t;
    tr.interval[static_cast<size_t>(k)] = static_cast<int>(iv);
    tr.x.col(k) = x;
    tr.y.col(k) = y;
    tr.y_tilde.col(k) = add_noise(y + ya, spec.noise.std, meas_rng);
    tr.d.col(k) = d;

    if (k + 1 < samples) {
      x = step_dynamics(x, d, model, spec.dt);
      if (spec.noise.load_std > 0.0) {
        for (Eigen::Index i = 0; i < nL; ++i) fluct(i) = decay * fluct(i) + kick * unit(load_rng);
      }
    }
  }
  return tr;
}

SimulationTrace simulate_scenario(const ScenarioSpec& spec, const grid::GridCase& grid) {
  ModelProvider models(grid, spec.outputs);
  return simulate_scenario(spec, models);
}

std::string trace_to_csv(const SimulationTrace& trace, long stride) {
  if (stride < 1) stride = 1;
  std::ostringstream os;
  os << 't';
  for (const auto& s : trace.state_labels) os << ",x." << s;
  for (const auto& s : trace.output_labels) os << ",y." << s;
  for (const auto& s : trace.output_labels) os << ",yt." << s;
  for (int b : trace.load_buses) os << ",d." << b;
  os << "\n";
  const Eigen::Index T = trace.samples();
  for (Eigen::Index k = 0; k < T; ++k) {
    if (k % stride != 0 && k != T - 1) continue;
    os << text::format_double(trace.t[static_cast<size_t>(k)]);
    for (const MatrixXd* m : {&trace.x, &trace.y, &trace.y_tilde, &trace.d}) {
      for (Eigen::Index r = 0; r < m->rows(); ++r) os << ',' << text::format_double((*m)(r, k));
    }
    os << "\n";
  }
  return os.str();
}

TraceTable parse_trace_csv(std::string_view content, const std::string& source) {
  TraceTable out;
  std::vector<std::vector<double>> rows;
  size_t pos = 0;
  int line_no = 0;
  while (pos < content.size()) {
    size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    const std::string_view line = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    size_t start = 0;
    while (true) {
      const size_t comma = line.find(',', start);
      cells.emplace_back(line.substr(start, comma == std::string_view::npos ? comma : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (out.columns.empty()) {
      if (cells.empty() || cells[0] != "t") throw ParseError(source, line_no, 1, "trace must start with a t column");
      out.columns = cells;
      continue;
    }
    if (cells.size() != out.columns.size()) {
      throw ParseError(source, line_no, 1, "row has " + std::to_string(cells.size()) +
                                              " cells, header has " +
                                              std::to_string(out.columns.size()));
    }
    std::vector<double> row;
    int col = 1;
    for (const auto& c : cells) {
      row.push_back(text::to_double(text::Token{c, line_no, col}, source));
      col += static_cast<int>(c.size()) + 1;
    }
    rows.push_back(std::move(row));
  }
  if (out.columns.empty()) throw ParseError(source, 1, 1, "empty trace");
  out.values.resize(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(out.columns.size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    for (size_t c = 0; c < rows[r].size(); ++c) {
      out.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return out;
}

}  // namespace mtd::sim
