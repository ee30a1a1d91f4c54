#include "mtdetect/gridmodel.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <queue>
#include <set>
#include <sstream>

#include "mtdetect/error.hpp"
#include "mtdetect/sectionfile.hpp"

namespace mtd::grid {

using text::format_double;

size_t GridCase::bus_index(int id) const {
  for (size_t i = 0; i < buses.size(); ++i) {
    if (buses[i].id == id) return i;
  }
  throw ValidationError("unknown bus id " + std::to_string(id));
}

VectorXd GridCase::nominal_demand() const {
  VectorXd d(static_cast<Eigen::Index>(loads.size()));
  for (size_t i = 0; i < loads.size(); ++i) {
    d(static_cast<Eigen::Index>(i)) = loads[i].demand;
  }
  return d;
}

namespace {

int to_bus_id(const text::Token& tok, const std::string& src) {
  const long v = text::to_long(tok, src);
  if (v < 0 || v > 1000000) text::fail(tok, src, "bus id out of range");
  return static_cast<int>(v);
}

void check_positive(double v, const std::string& what) {
  if (!(v > 0.0)) {
    throw ValidationError(what + " must be positive, got " + format_double(v));
  }
}

void check_nonnegative(double v, const std::string& what) {
  if (!(v >= 0.0)) {
    throw ValidationError(what + " must be nonnegative, got " +
                          format_double(v));
  }
}

bool is_connected(size_t n_bus, const std::vector<std::pair<size_t, size_t>>& edges) {
  if (n_bus == 0) return true;
  std::vector<std::vector<size_t>> adj(n_bus);
  for (auto [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<bool> seen(n_bus, false);
  std::queue<size_t> q;
  q.push(0);
  seen[0] = true;
  size_t count = 1;
  while (!q.empty()) {
    const size_t u = q.front();
    q.pop();
    for (size_t v : adj[u]) {
      if (!seen[v]) {
        seen[v] = true;
        ++count;
        q.push(v);
      }
    }
  }
  return count == n_bus;
}

}  // namespace

void validate(const GridCase& grid) {
  check_positive(grid.base_mva, "base_mva");
  if (grid.buses.empty()) throw ValidationError("case has no buses");
  std::set<int> ids;
  for (const auto& b : grid.buses) {
    if (!ids.insert(b.id).second) {
      throw ValidationError("duplicate bus id " + std::to_string(b.id));
    }
  }
  std::vector<std::pair<size_t, size_t>> edges;
  for (const auto& br : grid.branches) {
    const size_t a = grid.bus_index(br.from);
    const size_t b = grid.bus_index(br.to);
    if (a == b) {
      throw ValidationError("branch " + std::to_string(br.from) + "-" +
                            std::to_string(br.to) + " is a self loop");
    }
    check_positive(br.b, "susceptance of branch " + std::to_string(br.from) +
                             "-" + std::to_string(br.to));
    edges.emplace_back(a, b);
  }
  if (!is_connected(grid.buses.size(), edges)) {
    throw ValidationError("branch graph is not connected");
  }

  size_t gi = 0;
  size_t li = 0;
  for (const auto& bus : grid.buses) {
    const std::string tag = " at bus " + std::to_string(bus.id);
    if (bus.kind == BusKind::Generator) {
      if (gi >= grid.generators.size() || grid.generators[gi].bus != bus.id) {
        throw ValidationError("missing generator record" + tag);
      }
      const auto& g = grid.generators[gi++];
      check_positive(g.J, "generator inertia J" + tag);
      check_nonnegative(g.D, "generator damping D" + tag);
      check_nonnegative(g.e_T, "turbine parameter e_T" + tag);
      check_positive(g.T_u, "time constant T_u" + tag);
      check_positive(g.T_g, "time constant T_g" + tag);
      check_nonnegative(g.K_t, "gain K_t" + tag);
      check_positive(g.r, "droop r" + tag);
      check_nonnegative(g.pmax, "capacity pmax" + tag);
      check_nonnegative(g.pd, "local demand pd" + tag);
    } else {
      if (li >= grid.loads.size() || grid.loads[li].bus != bus.id) {
        throw ValidationError("missing load record" + tag);
      }
      const auto& l = grid.loads[li++];
      check_positive(l.J, "load inertia J" + tag);
      check_nonnegative(l.D, "load damping D" + tag);
    }
  }
  if (gi != grid.generators.size() || li != grid.loads.size()) {
    throw ValidationError("generator or load record attached to a bus of the wrong kind");
  }
  if (grid.generators.empty()) throw ValidationError("case has no generators");
}

GridCase parse_case_text(std::string_view content, const std::string& source) {
  const text::SectionFile file = text::parse_sections(content, source);
  GridCase grid;
  std::set<std::string> seen;
  std::vector<Generator> gens;
  std::vector<Load> loads;
  std::vector<int> gen_lines;
  std::vector<int> load_lines;
  for (const auto& sec : file.sections) {
    if (!seen.insert(sec.name).second) {
      throw ParseError(source, sec.line, 1, "duplicate section [" + sec.name + "]");
    }
    if (sec.name == "system") {
      for (const auto& rec : sec.records) {
        const auto& key = rec.fields[0].text;
        if (rec.fields.size() < 2) text::fail(rec, source, "missing value for '" + key + "'");
        if (key == "base_mva") {
          text::expect_fields(rec, source, 2);
          grid.base_mva = text::to_double(rec.fields[1], source);
        } else if (key == "name") {
          std::string name;
          for (size_t i = 1; i < rec.fields.size(); ++i) {
            if (i > 1) name += ' ';
            name += rec.fields[i].text;
          }
          grid.name = name;
        } else {
          text::fail(rec.fields[0], source, "unknown [system] key '" + key + "'");
        }
      }
    } else if (sec.name == "bus") {
      for (const auto& rec : sec.records) {
        text::expect_fields(rec, source, 2);
        Bus b;
        b.id = to_bus_id(rec.fields[0], source);
        const auto& kind = rec.fields[1].text;
        if (kind == "generator") {
          b.kind = BusKind::Generator;
        } else if (kind == "load") {
          b.kind = BusKind::Load;
        } else {
          text::fail(rec.fields[1], source, "bus kind must be 'generator' or 'load'");
        }
        grid.buses.push_back(b);
      }
    } else if (sec.name == "branch") {
      for (const auto& rec : sec.records) {
        text::expect_fields(rec, source, 3);
        grid.branches.push_back(Branch{to_bus_id(rec.fields[0], source),
                                       to_bus_id(rec.fields[1], source),
                                       text::to_double(rec.fields[2], source)});
      }
    } else if (sec.name == "generator") {
      for (const auto& rec : sec.records) {
        text::expect_fields(rec, source, 10);
        Generator g;
        g.bus = to_bus_id(rec.fields[0], source);
        double* dst[] = {&g.J, &g.D, &g.e_T, &g.T_u, &g.T_g,
                         &g.K_t, &g.r, &g.pmax, &g.pd};
        for (size_t i = 0; i < 9; ++i) *dst[i] = text::to_double(rec.fields[i + 1], source);
        gens.push_back(g);
        gen_lines.push_back(rec.line);
      }
    } else if (sec.name == "load") {
      for (const auto& rec : sec.records) {
        text::expect_fields(rec, source, 4);
        Load l;
        l.bus = to_bus_id(rec.fields[0], source);
        l.J = text::to_double(rec.fields[1], source);
        l.D = text::to_double(rec.fields[2], source);
        l.demand = text::to_double(rec.fields[3], source);
        loads.push_back(l);
        load_lines.push_back(rec.line);
      }
    } else {
      throw ParseError(source, sec.line, 1, "unknown section [" + sec.name + "]");
    }
  }

  // Reorder generator and load records to follow the bus section.
  std::map<int, size_t> gen_by_bus;
  for (size_t i = 0; i < gens.size(); ++i) {
    if (!gen_by_bus.emplace(gens[i].bus, i).second) {
      throw ValidationError("duplicate generator record at bus " +
                            std::to_string(gens[i].bus));
    }
  }
  std::map<int, size_t> load_by_bus;
  for (size_t i = 0; i < loads.size(); ++i) {
    if (!load_by_bus.emplace(loads[i].bus, i).second) {
      throw ValidationError("duplicate load record at bus " +
                            std::to_string(loads[i].bus));
    }
  }
  size_t used_g = 0;
  size_t used_l = 0;
  for (const auto& bus : grid.buses) {
    if (bus.kind == BusKind::Generator) {
      auto it = gen_by_bus.find(bus.id);
      if (it == gen_by_bus.end()) {
        throw ValidationError("missing generator record at bus " + std::to_string(bus.id));
      }
      grid.generators.push_back(gens[it->second]);
      ++used_g;
    } else {
      auto it = load_by_bus.find(bus.id);
      if (it == load_by_bus.end()) {
        throw ValidationError("missing load record at bus " + std::to_string(bus.id));
      }
      grid.loads.push_back(loads[it->second]);
      ++used_l;
    }
  }
  if (used_g != gens.size() || used_l != loads.size()) {
    throw ValidationError("generator or load record attached to a bus of the wrong kind");
  }
  validate(grid);
  return grid;
}

GridCase parse_case(const std::string& path) {
  return parse_case_text(text::read_file(path), path);
}

std::string serialize_case(const GridCase& grid) {
  std::ostringstream os;
  os << "[system]\n";
  if (!grid.name.empty()) os << "name " << grid.name << "\n";
  os << "base_mva " << format_double(grid.base_mva) << "\n";
  os << "\n[bus]\n# id kind\n";
  for (const auto& b : grid.buses) {
    os << b.id << ' ' << (b.kind == BusKind::Generator ? "generator" : "load") << "\n";
  }
  os << "\n[branch]\n# from to b\n";
  for (const auto& br : grid.branches) {
    os << br.from << ' ' << br.to << ' ' << format_double(br.b) << "\n";
  }
  os << "\n[generator]\n# bus J D e_T T_u T_g K_t r pmax pd\n";
  for (const auto& g : grid.generators) {
    os << g.bus;
    for (double v : {g.J, g.D, g.e_T, g.T_u, g.T_g, g.K_t, g.r, g.pmax, g.pd}) {
      os << ' ' << format_double(v);
    }
    os << "\n";
  }
  os << "\n[load]\n# bus J D demand\n";
  for (const auto& l : grid.loads) {
    os << l.bus << ' ' << format_double(l.J) << ' ' << format_double(l.D) << ' '
       << format_double(l.demand) << "\n";
  }
  return os.str();
}

namespace {

MatrixXd dc_susceptance(const GridCase& grid) {
  const auto n = static_cast<Eigen::Index>(grid.buses.size());
  MatrixXd B = MatrixXd::Zero(n, n);
  for (const auto& br : grid.branches) {
    const auto i = static_cast<Eigen::Index>(grid.bus_index(br.from));
    const auto j = static_cast<Eigen::Index>(grid.bus_index(br.to));
    B(i, i) += br.b;
    B(j, j) += br.b;
    B(i, j) -= br.b;
    B(j, i) -= br.b;
  }
  return B;
}

}  // namespace

OperatingPoint dc_power_flow(const GridCase& grid, const VectorXd& demand,
                             std::string loading_label) {
  if (demand.size() != static_cast<Eigen::Index>(grid.n_load())) {
    throw DimensionMismatch("dc_power_flow: demand has " +
                            std::to_string(demand.size()) + " entries, case has " +
                            std::to_string(grid.n_load()) + " loads");
  }
  const auto n = static_cast<Eigen::Index>(grid.buses.size());
  std::vector<std::pair<size_t, size_t>> edges;
  for (const auto& br : grid.branches) {
    edges.emplace_back(grid.bus_index(br.from), grid.bus_index(br.to));
  }
  if (!is_connected(grid.buses.size(), edges)) {
    throw SingularNetwork("dc_power_flow: network is disconnected");
  }

  double capacity = 0.0;
  double total = demand.sum();
  for (const auto& g : grid.generators) {
    capacity += g.pmax;
    total += g.pd;
  }
  if (total > capacity * (1.0 + 1e-12)) {
    throw InfeasibleDispatch("dc_power_flow: demand " + format_double(total) +
                             " p.u. exceeds capacity " + format_double(capacity) +
                             " p.u.");
  }
  const double share = capacity > 0.0 ? total / capacity : 0.0;

  OperatingPoint op;
  op.loading_label = std::move(loading_label);
  op.demand = demand;
  op.injections = VectorXd::Zero(n);
  size_t gi = 0;
  size_t li = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (grid.buses[static_cast<size_t>(i)].kind == BusKind::Generator) {
      const auto& g = grid.generators[gi++];
      op.injections(i) = g.pmax * share - g.pd;
    } else {
      op.injections(i) = -demand(static_cast<Eigen::Index>(li++));
    }
  }
  // Remove the rounding residue so the balance holds to machine precision.
  op.injections(0) -= op.injections.sum();

  op.angles = VectorXd::Zero(n);
  if (n > 1) {
    const MatrixXd B = dc_susceptance(grid);
    const MatrixXd Br = B.bottomRightCorner(n - 1, n - 1);
    Eigen::LDLT<MatrixXd> ldlt(Br);
    if (ldlt.info() != Eigen::Success) {
      throw SingularNetwork("dc_power_flow: susceptance matrix is singular");
    }
    op.angles.tail(n - 1) = ldlt.solve(op.injections.tail(n - 1));
  }
  return op;
}

MatrixXd admittance(const GridCase& grid, const VectorXd& angles) {
  const auto n = static_cast<Eigen::Index>(grid.buses.size());
  MatrixXd Y = MatrixXd::Zero(n, n);
  for (const auto& br : grid.branches) {
    const auto i = static_cast<Eigen::Index>(grid.bus_index(br.from));
    const auto j = static_cast<Eigen::Index>(grid.bus_index(br.to));
    const double w = br.b * std::cos(angles(i) - angles(j));
    Y(i, j) -= w;
    Y(j, i) -= w;
    Y(i, i) += w;
    Y(j, j) += w;
  }
  return Y;
}

std::vector<std::string> make_state_labels(size_t n_gen, size_t n_load) {
  std::vector<std::string> labels;
  auto block = [&](const std::string& prefix, size_t count) {
    for (size_t i = 1; i <= count; ++i) labels.push_back(prefix + std::to_string(i));
  };
  block("omega_G", n_gen);
  block("omega_L", n_load);
  block("P_G", n_gen);
  block("P_L", n_load);
  block("P_T", n_gen);
  block("a", n_gen);
  return labels;
}

VectorXd LinearModel::measurement_vmax() const { return C * semistability.v_max; }

LinearModel linearize(const GridCase& grid, const OperatingPoint& op) {
  const auto nG = static_cast<Eigen::Index>(grid.n_gen());
  const auto nL = static_cast<Eigen::Index>(grid.n_load());
  const Eigen::Index n = 2 * (nG + nL) + 2 * nG;
  if (op.angles.size() != static_cast<Eigen::Index>(grid.buses.size())) {
    throw DimensionMismatch("linearize: operating point does not match the case");
  }
  const MatrixXd Y = admittance(grid, op.angles);

  std::vector<Eigen::Index> gen_pos;
  std::vector<Eigen::Index> load_pos;
  LinearModel m;
  for (size_t i = 0; i < grid.buses.size(); ++i) {
    if (grid.buses[i].kind == BusKind::Generator) {
      gen_pos.push_back(static_cast<Eigen::Index>(i));
      m.gen_buses.push_back(grid.buses[i].id);
    } else {
      load_pos.push_back(static_cast<Eigen::Index>(i));
      m.load_buses.push_back(grid.buses[i].id);
    }
  }
  // Offsets of the state blocks.
  const Eigen::Index wG = 0;
  const Eigen::Index wL = nG;
  const Eigen::Index pG = nG + nL;
  const Eigen::Index pL = 2 * nG + nL;
  const Eigen::Index pT = 2 * (nG + nL);
  const Eigen::Index av = pT + nG;

  MatrixXd A = MatrixXd::Zero(n, n);
  MatrixXd G = MatrixXd::Zero(n, nL);
  for (Eigen::Index g = 0; g < nG; ++g) {
    const auto& p = grid.generators[static_cast<size_t>(g)];
    A(wG + g, wG + g) = -p.D / p.J;
    A(wG + g, pG + g) = -1.0 / p.J;
    A(wG + g, pT + g) = 1.0 / p.J;
    A(wG + g, av + g) = p.e_T / p.J;
    A(pT + g, pT + g) = -1.0 / p.T_u;
    A(pT + g, av + g) = p.K_t / p.T_u;
    A(av + g, wG + g) = -1.0 / p.T_g;
    A(av + g, av + g) = -p.r / p.T_g;
  }
  for (Eigen::Index l = 0; l < nL; ++l) {
    const auto& p = grid.loads[static_cast<size_t>(l)];
    A(wL + l, wL + l) = -p.D / p.J;
    A(wL + l, pL + l) = 1.0 / p.J;
    G(wL + l, l) = -1.0 / p.J;
  }
  // [P_G; -P_L]' = Y_bus * [omega_G; omega_L]
  for (Eigen::Index g = 0; g < nG; ++g) {
    for (Eigen::Index h = 0; h < nG; ++h) A(pG + g, wG + h) = Y(gen_pos[g], gen_pos[h]);
    for (Eigen::Index l = 0; l < nL; ++l) A(pG + g, wL + l) = Y(gen_pos[g], load_pos[l]);
  }
  for (Eigen::Index l = 0; l < nL; ++l) {
    for (Eigen::Index h = 0; h < nG; ++h) A(pL + l, wG + h) = -Y(load_pos[l], gen_pos[h]);
    for (Eigen::Index k = 0; k < nL; ++k) A(pL + l, wL + k) = -Y(load_pos[l], load_pos[k]);
  }

  m.A = std::move(A);
  m.G = std::move(G);
  m.C = MatrixXd::Identity(n, n);
  m.n = n;
  m.n_gen = nG;
  m.n_load = nL;
  m.state_labels = make_state_labels(grid.n_gen(), grid.n_load());
  m.output_labels = m.state_labels;
  m.x0 = VectorXd::Zero(n);
  for (Eigen::Index g = 0; g < nG; ++g) {
    const auto& p = grid.generators[static_cast<size_t>(g)];
    const double inj = op.injections(gen_pos[g]);
    m.x0(pG + g) = inj;
    m.x0(pT + g) = inj + p.pd;
    m.x0(av + g) = p.K_t > 0.0 ? (inj + p.pd) / p.K_t : 0.0;
  }
  for (Eigen::Index l = 0; l < nL; ++l) m.x0(pL + l) = -op.injections(load_pos[l]);
  m.op = op;
  m.semistability = matcore::decompose_semistable(m.A);
  return m;
}

LinearModel select_outputs(const LinearModel& model,
                           const std::vector<std::string>& selection) {
  static const std::vector<std::string> blocks = {"omega_G", "omega_L", "P_G",
                                                  "P_L",     "P_T",     "a"};
  std::vector<Eigen::Index> rows;
  const auto nG = model.n_gen;
  const auto nL = model.n_load;
  const std::vector<Eigen::Index> block_start = {0, nG, nG + nL, 2 * nG + nL,
                                                 2 * (nG + nL), 2 * (nG + nL) + nG};
  const std::vector<Eigen::Index> block_len = {nG, nL, nG, nL, nG, nG};
  for (const auto& name : selection) {
    if (name == "all") {
      for (Eigen::Index i = 0; i < model.n; ++i) rows.push_back(i);
      continue;
    }
    bool matched = false;
    for (size_t b = 0; b < blocks.size(); ++b) {
      if (name == blocks[b]) {
        for (Eigen::Index i = 0; i < block_len[b]; ++i) rows.push_back(block_start[b] + i);
        matched = true;
      }
    }
    if (matched) continue;
    for (size_t i = 0; i < model.state_labels.size(); ++i) {
      if (model.state_labels[i] == name) {
        rows.push_back(static_cast<Eigen::Index>(i));
        matched = true;
        break;
      }
    }
    if (!matched) throw UnknownStateLabel("unknown state label '" + name + "'");
  }
  LinearModel out = model;
  out.C = MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), model.n);
  out.output_labels.clear();
  for (size_t r = 0; r < rows.size(); ++r) {
    out.C(static_cast<Eigen::Index>(r), rows[r]) = 1.0;
    out.output_labels.push_back(model.state_labels[static_cast<size_t>(rows[r])]);
  }
  return out;
}

LinearModel build_model(const GridCase& grid, double demand_scale,
                        const std::string& label) {
  const OperatingPoint op =
      dc_power_flow(grid, grid.nominal_demand() * demand_scale, label);
  return linearize(grid, op);
}

}  // namespace mtd::grid
