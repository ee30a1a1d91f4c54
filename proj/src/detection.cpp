#include "mtdetect/detection.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "mtdetect/error.hpp"
#include "mtdetect/sectionfile.hpp"

namespace mtd::detect {

namespace {

long smoothing_samples(const sim::ScenarioSpec& spec) {
  if (!spec.noise.smoothing) return 1;
  return std::max(1L, std::lround(spec.noise.window / spec.dt));
}

std::vector<std::string> labels_of(const std::set<Index>& idx,
                                   const std::vector<std::string>& labels) {
  std::vector<std::string> out;
  for (Index i : idx) out.push_back(labels.at(static_cast<size_t>(i)));
  return out;
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

}  // namespace

double residual_pair(double y_i, double y_j, double p_i, double p_j) {
  return std::abs(p_j * y_i - p_i * y_j);
}

std::vector<PairRef> cluster_pairs(const ClusterSet& clusters) {
  std::vector<PairRef> out;
  for (size_t k = 0; k < clusters.clusters.size(); ++k) {
    const IndexSet& c = clusters.clusters[k];
    const VectorXd& p = clusters.coefficients[k];
    for (size_t a = 0; a < c.size(); ++a) {
      for (size_t b = a + 1; b < c.size(); ++b) {
        out.push_back(PairRef{static_cast<Index>(k), c[a], c[b], p(static_cast<Index>(a)),
                              p(static_cast<Index>(b))});
      }
    }
  }
  return out;
}

PairResidualFilter::PairResidualFilter(std::vector<PairRef> pairs, long window)
    : pairs_(std::move(pairs)),
      window_(std::max(1L, window)),
      ring_(pairs_.size() * static_cast<size_t>(window_), 0.0),
      sums_(pairs_.size(), 0.0),
      out_(pairs_.size(), 0.0) {}

const std::vector<double>& PairResidualFilter::push(const VectorXd& y) {
  if (window_ == 1) {
    for (size_t q = 0; q < pairs_.size(); ++q) {
      const PairRef& pr = pairs_[q];
      out_[q] = residual_pair(y(pr.i), y(pr.j), pr.p_i, pr.p_j);
    }
    return out_;
  }
  const auto slot = static_cast<size_t>(count_ % window_);
  const long filled = std::min(count_ + 1, window_);
  for (size_t q = 0; q < pairs_.size(); ++q) {
    const PairRef& pr = pairs_[q];
    const double s = pr.p_j * y(pr.i) - pr.p_i * y(pr.j);
    double& cell = ring_[q * static_cast<size_t>(window_) + slot];
    sums_[q] += s - cell;
    cell = s;
    out_[q] = std::abs(sums_[q] / static_cast<double>(filled));
  }
  ++count_;
  return out_;
}

Thresholds calibrate_threshold(const MatrixXd& y_tilde, Index begin, Index end,
                               const ClusterSet& clusters, double safety, long smooth_window,
                               double floor) {
  if (y_tilde.rows() != clusters.measurements()) {
    throw DimensionMismatch("calibrate_threshold: trace and cluster set sizes differ");
  }
  Thresholds th;
  th.safety = safety;
  th.epsilon.assign(clusters.clusters.size(), 0.0);
  th.covered.assign(clusters.clusters.size(), false);
  std::vector<double> peak(clusters.clusters.size(), 0.0);
  PairResidualFilter filter(cluster_pairs(clusters), smooth_window);
  for (Index k = begin; k < end; ++k) {
    const auto& r = filter.push(y_tilde.col(k));
    for (size_t q = 0; q < r.size(); ++q) {
      auto c = static_cast<size_t>(filter.pairs()[q].cluster);
      peak[c] = std::max(peak[c], r[q]);
    }
  }
  for (size_t c = 0; c < clusters.clusters.size(); ++c) {
    if (clusters.clusters[c].size() < 2) continue;
    th.covered[c] = true;
    th.epsilon[c] = std::max(safety * peak[c], floor);
  }
  return th;
}

Thresholds calibrate_threshold(const sim::SimulationTrace& trace, const ClusterSet& clusters,
                               double safety) {
  return calibrate_threshold(trace.y_tilde, 0, trace.samples(), clusters, safety);
}

std::vector<FiredPair> detect_step(const VectorXd& y_tilde, const ClusterSet& clusters,
                                   const Thresholds& thresholds) {
  std::vector<FiredPair> fired;
  for (const PairRef& pr : cluster_pairs(clusters)) {
    const auto c = static_cast<size_t>(pr.cluster);
    if (!thresholds.covered[c]) continue;
    const double r = residual_pair(y_tilde(pr.i), y_tilde(pr.j), pr.p_i, pr.p_j);
    if (r >= thresholds.epsilon[c]) fired.push_back(FiredPair{pr.cluster, pr.i, pr.j, r});
  }
  return fired;
}

Vote majority_vote(const std::vector<FiredPair>& fired, const ClusterSet& clusters) {
  Vote vote;
  std::map<Index, std::map<Index, long>> count;
  for (const auto& f : fired) {
    ++count[f.cluster][f.i];
    ++count[f.cluster][f.j];
  }
  for (const auto& [k, members] : count) {
    const auto m = static_cast<long>(clusters.clusters[static_cast<size_t>(k)].size());
    if (m == 2) {
      const IndexSet& c = clusters.clusters[static_cast<size_t>(k)];
      vote.ambiguous.emplace_back(c[0], c[1]);
      continue;
    }
    for (const auto& [i, n] : members) {
      if (2 * n > m - 1) vote.isolated.push_back(i);
    }
  }
  std::sort(vote.isolated.begin(), vote.isolated.end());
  return vote;
}

std::string serialize_epsilon_table(const EpsilonTable& table) {
  using text::format_double;
  std::ostringstream os;
  os << "# cluster: members | coefficients | epsilon (- when uncovered)\n";
  os << "safety " << format_double(table.safety) << "\n";
  for (size_t k = 0; k < table.intervals.size(); ++k) {
    const auto& iv = table.intervals[k];
    os << "interval " << k << ' ' << iv.label << "\n";
    os << "theta " << format_double(iv.clusters.theta) << "\n";
    os << "measurements " << iv.clusters.measurements() << "\n";
    for (size_t c = 0; c < iv.clusters.clusters.size(); ++c) {
      os << c << ":";
      for (Index i : iv.clusters.clusters[c]) os << ' ' << i;
      os << " |";
      const VectorXd& p = iv.clusters.coefficients[c];
      for (Index m = 0; m < p.size(); ++m) os << ' ' << format_double(p(m));
      os << " | "
         << (iv.thresholds.covered[c] ? format_double(iv.thresholds.epsilon[c]) : std::string("-"))
         << "\n";
    }
  }
  return os.str();
}

EpsilonTable parse_epsilon_table(std::string_view content, const std::string& source) {
  EpsilonTable table;
  std::istringstream in{std::string(content)};
  std::string line;
  int line_no = 0;
  bool have_safety = false;
  IntervalCalibration* cur = nullptr;
  Index l = -1;
  auto fail = [&](const std::string& msg) { throw ParseError(source, line_no, 1, msg); };
  auto num = [&](const std::string& s) { return text::to_double(text::Token{s, line_no, 1}, source); };
  auto integer = [&](const std::string& s) { return text::to_long(text::Token{s, line_no, 1}, source); };
  auto finish = [&]() {
    if (cur == nullptr) return;
    if (l < 0) fail("interval without measurements line");
    std::vector<int> seen(static_cast<size_t>(l), 0);
    for (const auto& c : cur->clusters.clusters) {
      for (Index i : c) {
        if (i < 0 || i >= l || seen[static_cast<size_t>(i)]++) fail("clusters do not partition the measurements");
      }
    }
    for (int s : seen) {
      if (s != 1) fail("clusters do not cover every measurement");
    }
    cur->clusters.Pi = clustering::aggregation_matrix(cur->clusters.clusters,
                                                      cur->clusters.coefficients, l);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto words = split_words(line);
    if (words.empty()) continue;
    if (words[0] == "safety" && words.size() == 2) {
      table.safety = num(words[1]);
      have_safety = true;
    } else if (words[0] == "interval" && words.size() >= 2) {
      finish();
      if (integer(words[1]) != static_cast<long>(table.intervals.size())) fail("interval index out of sequence");
      table.intervals.emplace_back();
      cur = &table.intervals.back();
      const size_t at = line.find(words[1]) + words[1].size();
      cur->label = at < line.size() ? line.substr(at + 1) : "";
      cur->thresholds.safety = table.safety;
      l = -1;
    } else if (cur == nullptr) {
      fail("record before the first interval");
    } else if (words[0] == "theta" && words.size() == 2) {
      cur->clusters.theta = num(words[1]);
    } else if (words[0] == "measurements" && words.size() == 2) {
      l = integer(words[1]);
    } else {
      const size_t colon = line.find(':');
      const size_t bar1 = line.find('|');
      const size_t bar2 = bar1 == std::string::npos ? bar1 : line.find('|', bar1 + 1);
      if (colon == std::string::npos || bar2 == std::string::npos || bar1 < colon) {
        fail("expected 'k: members | coefficients | epsilon'");
      }
      if (integer(line.substr(0, colon)) != static_cast<long>(cur->clusters.clusters.size())) {
        fail("cluster index out of sequence");
      }
      IndexSet set;
      for (const auto& w : split_words(line.substr(colon + 1, bar1 - colon - 1))) set.push_back(integer(w));
      std::vector<double> p;
      for (const auto& w : split_words(line.substr(bar1 + 1, bar2 - bar1 - 1))) p.push_back(num(w));
      const auto eps = split_words(line.substr(bar2 + 1));
      if (set.empty() || set.size() != p.size() || eps.size() != 1) fail("malformed cluster line");
      cur->clusters.clusters.push_back(set);
      cur->clusters.coefficients.push_back(Eigen::Map<VectorXd>(p.data(), static_cast<Index>(p.size())));
      const bool covered = eps[0] != "-";
      if (covered && set.size() < 2) fail("singleton cluster cannot carry a threshold");
      if (!covered && set.size() >= 2) fail("cluster with pairs needs a threshold");
      cur->thresholds.covered.push_back(covered);
      cur->thresholds.epsilon.push_back(covered ? num(eps[0]) : 0.0);
    }
  }
  finish();
  if (!have_safety) fail("missing safety line");
  if (table.intervals.empty()) fail("table has no intervals");
  return table;
}

ClusterSet interval_clusters(const grid::LinearModel& model, const sim::ScenarioSpec& spec,
                             const sim::EdInterval& interval) {
  ClusterSet cs = clustering::cluster_model(model, spec.theta ? *spec.theta : -1.0).clusters;
  cs.label = interval.label;
  return cs;
}

EpsilonTable calibrate_scenario(const sim::ScenarioSpec& spec, sim::ModelProvider& models) {
  if (!spec.attacks.empty()) {
    throw InputError("calibration scenario must be attack-free");
  }
  const sim::SimulationTrace trace = sim::simulate_scenario(spec, models);
  EpsilonTable table;
  table.safety = spec.safety;
  const long window = smoothing_samples(spec);
  for (size_t iv = 0; iv < trace.intervals.size(); ++iv) {
    Index begin = -1;
    Index end = -1;
    for (Index k = 0; k < trace.samples(); ++k) {
      if (trace.interval[static_cast<size_t>(k)] == static_cast<int>(iv)) {
        if (begin < 0) begin = k;
        end = k + 1;
      }
    }
    IntervalCalibration cal;
    cal.label = trace.intervals[iv].label;
    cal.clusters = interval_clusters(models.model(trace.intervals[iv]), spec, trace.intervals[iv]);
    if (begin < 0) {
      begin = end = 0;
    }
    cal.thresholds = calibrate_threshold(trace.y_tilde, begin, end, cal.clusters, spec.safety, window);
    table.intervals.push_back(std::move(cal));
  }
  return table;
}

std::vector<double> DetectionReport::fired_times() const {
  std::vector<double> out;
  for (const auto& r : rows) {
    if (r.fired && (out.empty() || out.back() != r.t)) out.push_back(r.t);
  }
  return out;
}

DetectionReport run_detector(const sim::ScenarioSpec& spec, const sim::SimulationTrace& trace,
                             sim::ModelProvider& models, const DetectorOptions& options) {
  EpsilonTable own;
  const EpsilonTable* table = options.table;
  if (table == nullptr) {
    sim::ScenarioSpec calib = spec;
    calib.attacks.clear();
    if (calib.noise.std > 0.0 || calib.noise.load_std > 0.0) calib.seed = spec.seed + 1;
    own = calibrate_scenario(calib, models);
    table = &own;
  }
  if (table->intervals.empty()) throw ValidationError("threshold table has no intervals");

  DetectionReport rep;
  rep.intervals = static_cast<long>(trace.intervals.size());
  const long window = smoothing_samples(spec);
  const long stride = std::max(1L, options.stride);
  std::set<Index> flagged;
  std::set<Index> isolated;
  std::set<std::string> ambiguous;
  std::set<Index> uncovered;
  const auto& labels = trace.output_labels;

  for (size_t iv = 0; iv < trace.intervals.size(); ++iv) {
    const IntervalCalibration& cal = table->intervals[std::min(iv, table->intervals.size() - 1)];
    const ClusterSet clusters =
        interval_clusters(models.model(trace.intervals[iv]), spec, trace.intervals[iv]);
    if (clusters.clusters != cal.clusters.clusters) {
      throw ValidationError("threshold table clusters do not match interval " +
                            trace.intervals[iv].label + "; recalibrate");
    }
    const Thresholds& th = cal.thresholds;
    for (Index s : clusters.singletons()) uncovered.insert(s);

    PairResidualFilter filter(cluster_pairs(clusters), window);
    const auto& pairs = filter.pairs();
    long local = 0;
    for (Index k = 0; k < trace.samples(); ++k) {
      if (trace.interval[static_cast<size_t>(k)] != static_cast<int>(iv)) continue;
      const double t = trace.t[static_cast<size_t>(k)];
      const auto& r = filter.push(trace.y_tilde.col(k));
      const bool keep_max = local % stride == 0 || k == trace.samples() - 1;
      ++local;

      std::vector<FiredPair> fired;
      std::vector<long> best(clusters.clusters.size(), -1);
      for (size_t q = 0; q < pairs.size(); ++q) {
        const auto c = static_cast<size_t>(pairs[q].cluster);
        if (!th.covered[c]) continue;
        if (best[c] < 0 || r[q] > r[static_cast<size_t>(best[c])]) best[c] = static_cast<long>(q);
        if (r[q] >= th.epsilon[c]) {
          fired.push_back(FiredPair{pairs[q].cluster, pairs[q].i, pairs[q].j, r[q]});
        }
      }
      for (size_t q = 0; q < pairs.size(); ++q) {
        const auto c = static_cast<size_t>(pairs[q].cluster);
        if (!th.covered[c]) continue;
        const bool hit = r[q] >= th.epsilon[c];
        if (hit || (keep_max && best[c] == static_cast<long>(q))) {
          rep.rows.push_back(ResidualRow{t, pairs[q].cluster, pairs[q].i, pairs[q].j, r[q],
                                         th.epsilon[c], hit});
        }
      }
      if (fired.empty()) continue;
      rep.fired_pairs += static_cast<long>(fired.size());
      ++rep.fired_samples;
      if (!rep.first_detection) rep.first_detection = t;
      for (const auto& f : fired) {
        flagged.insert(f.i);
        flagged.insert(f.j);
      }
      const Vote vote = majority_vote(fired, clusters);
      for (Index i : vote.isolated) isolated.insert(i);
      for (const auto& [a, b] : vote.ambiguous) {
        ambiguous.insert(labels.at(static_cast<size_t>(a)) + "/" + labels.at(static_cast<size_t>(b)));
      }
    }
  }
  rep.flagged = labels_of(flagged, labels);
  rep.isolated = labels_of(isolated, labels);
  rep.ambiguous.assign(ambiguous.begin(), ambiguous.end());
  rep.uncovered = labels_of(uncovered, labels);
  return rep;
}

std::string report_to_csv(const DetectionReport& report) {
  using text::format_double;
  std::ostringstream os;
  os << "t,cluster,i,j,residual,epsilon,fired\n";
  for (const auto& r : report.rows) {
    os << format_double(r.t) << ',' << r.cluster << ',' << r.i << ',' << r.j << ','
       << format_double(r.residual) << ',' << format_double(r.epsilon) << ','
       << (r.fired ? 1 : 0) << "\n";
  }
  auto list = [&](const char* key, const std::vector<std::string>& v) {
    os << "# " << key;
    for (const auto& s : v) os << ' ' << s;
    os << "\n";
  };
  os << "# first_detection "
     << (report.first_detection ? format_double(*report.first_detection) : std::string("none"))
     << "\n";
  os << "# fired_pairs " << report.fired_pairs << "\n";
  os << "# fired_samples " << report.fired_samples << "\n";
  os << "# intervals " << report.intervals << "\n";
  list("flagged", report.flagged);
  list("isolated", report.isolated);
  list("ambiguous", report.ambiguous);
  list("uncovered", report.uncovered);
  return os.str();
}

DetectionReport parse_report_csv(std::string_view content, const std::string& source) {
  DetectionReport rep;
  std::istringstream in{std::string(content)};
  std::string line;
  int line_no = 0;
  bool header = false;
  auto fail = [&](const std::string& msg) { throw ParseError(source, line_no, 1, msg); };
  auto tok = [&](const std::string& s) { return text::Token{s, line_no, 1}; };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (!header) {
      if (line != "t,cluster,i,j,residual,epsilon,fired") fail("unexpected report header");
      header = true;
      continue;
    }
    if (line[0] == '#') {
      auto words = split_words(line.substr(1));
      if (words.empty()) continue;
      const std::string key = words[0];
      words.erase(words.begin());
      auto one = [&]() -> const std::string& {
        if (words.size() != 1) fail("summary key '" + key + "' needs one value");
        return words[0];
      };
      if (key == "first_detection") {
        const std::string& v = one();
        if (v != "none") rep.first_detection = text::to_double(tok(v), source);
      } else if (key == "fired_pairs") {
        rep.fired_pairs = text::to_long(tok(one()), source);
      } else if (key == "fired_samples") {
        rep.fired_samples = text::to_long(tok(one()), source);
      } else if (key == "intervals") {
        rep.intervals = text::to_long(tok(one()), source);
      } else if (key == "flagged") {
        rep.flagged = words;
      } else if (key == "isolated") {
        rep.isolated = words;
      } else if (key == "ambiguous") {
        rep.ambiguous = words;
      } else if (key == "uncovered") {
        rep.uncovered = words;
      } else {
        fail("unknown summary key '" + key + "'");
      }
      continue;
    }
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) fail("report row needs 7 cells");
    ResidualRow r;
    r.t = text::to_double(tok(cells[0]), source);
    r.cluster = text::to_long(tok(cells[1]), source);
    r.i = text::to_long(tok(cells[2]), source);
    r.j = text::to_long(tok(cells[3]), source);
    r.residual = text::to_double(tok(cells[4]), source);
    r.epsilon = text::to_double(tok(cells[5]), source);
    if (cells[6] != "0" && cells[6] != "1") fail("fired must be 0 or 1");
    r.fired = cells[6] == "1";
    rep.rows.push_back(r);
  }
  if (!header) fail("empty report");
  return rep;
}

MatrixXd observer_gain(const grid::LinearModel& model) {
  const auto& dec = model.semistability;
  const Index n = model.n;
  Eigen::ColPivHouseholderQR<MatrixXd> qr(model.C);
  if (model.C.cols() != n || qr.rank() != n) {
    throw DimensionMismatch("observer_gain: pole placement needs C with full column rank");
  }
  VectorXd poles(n - 1);
  for (Index k = 0; k < n - 1; ++k) poles(k) = -1.5 - 0.5 * static_cast<double>(k);
  const MatrixXd M = dec.U_bar * poles.asDiagonal() * dec.V_bar.transpose() -
                     dec.u_max * dec.v_max.transpose();
  const MatrixXd C_pinv = model.C.completeOrthogonalDecomposition().pseudoInverse();
  const MatrixXd L = (model.A - M) * C_pinv;
  const Eigen::VectorXcd eig = Eigen::EigenSolver<MatrixXd>(model.A - L * model.C, false).eigenvalues();
  if (eig.real().maxCoeff() >= 0.0) throw NotHurwitz("observer error dynamics are not Hurwitz");
  return L;
}

ObserverState make_observer(const grid::LinearModel& model, const VectorXd& x_hat0) {
  if (x_hat0.size() != model.n) throw DimensionMismatch("make_observer: initial estimate size");
  ObserverState obs;
  obs.L = observer_gain(model);
  obs.x_hat = x_hat0;
  obs.r_c = VectorXd::Zero(model.outputs());
  obs.A_obs = model.A - obs.L * model.C;
  return obs;
}

void baseline_observer_step(ObserverState& obs, const grid::LinearModel& model,
                            const VectorXd& y_tilde, double dt) {
  obs.r_c = model.C * obs.x_hat - y_tilde;
  if (obs.A_obs.rows() != model.n) obs.A_obs = model.A - obs.L * model.C;
  const MatrixXd& M = obs.A_obs;
  const VectorXd u = obs.L * y_tilde;
  auto f = [&](const VectorXd& z) -> VectorXd { return M * z + u; };
  const VectorXd k1 = f(obs.x_hat);
  const VectorXd k2 = f(obs.x_hat + 0.5 * dt * k1);
  const VectorXd k3 = f(obs.x_hat + 0.5 * dt * k2);
  const VectorXd k4 = f(obs.x_hat + dt * k3);
  obs.x_hat += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!obs.x_hat.allFinite()) throw NonFinite("observer state became non-finite");
}

VectorXd observer_steady_residual(const grid::LinearModel& model, const MatrixXd& L,
                                  const VectorXd& d) {
  const MatrixXd M = model.A - L * model.C;
  return model.C * M.partialPivLu().solve(model.G * d);
}

}  // namespace mtd::detect
