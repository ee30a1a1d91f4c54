#include <doctest.h>

#include <cmath>

#include "mtdetect/error.hpp"
#include "mtdetect/gridmodel.hpp"
#include "mtdetect/simkit.hpp"
#include "test_util.hpp"

using namespace mtd;
using namespace mtd::sim;
using testutil::data;

namespace {

const grid::GridCase& rts() {
  static const grid::GridCase g = grid::parse_case(data("rts24.case"));
  return g;
}

ScenarioSpec scenario(const std::string& name) {
  const std::string path = data(name);
  ScenarioSpec s = parse_scenario(path);
  s.case_path = resolve_case_path(s, path);
  return s;
}

grid::LinearModel scalar_model() {
  grid::LinearModel m;
  m.A = MatrixXd::Constant(1, 1, -1.0);
  m.G = MatrixXd::Zero(1, 1);
  m.C = MatrixXd::Identity(1, 1);
  m.n = 1;
  return m;
}

// End state after integrating a 0.5 p.u. step at the first load bus.
VectorXd integrate(const grid::LinearModel& m, double dt, double horizon) {
  VectorXd x = VectorXd::Zero(m.n);
  VectorXd d = VectorXd::Zero(m.n_load);
  d(0) = 0.5;
  const long steps = std::lround(horizon / dt);
  for (long k = 0; k < steps; ++k) x = step_dynamics(x, d, m, dt);
  return x;
}

}  // namespace

TEST_CASE("scenario files parse and round-trip") {
  const ScenarioSpec s1 = scenario("scenario1.scn");
  CHECK(s1.loading_label == "high");
  CHECK(s1.demand_scale == 1.2);
  CHECK(s1.duration == 300.0);
  CHECK(!s1.theta);
  REQUIRE(s1.load_events.size() == 2);
  CHECK(s1.load_events[0].bus == 3);
  CHECK(s1.load_events[0].delta == 0.5);
  CHECK(s1.steps() == 30000);

  const ScenarioSpec s3 = scenario("scenario3.scn");
  CHECK(s3.attacks.size() == 6);
  CHECK(*s3.theta == 5.0);
  CHECK(s3.outputs == std::vector<std::string>{"P_G"});

  for (const auto* name : {"scenario1.scn", "scenario2.scn", "scenario3.scn", "holdout1.scn"}) {
    const ScenarioSpec s = scenario(name);
    const std::string text = serialize_scenario(s);
    const ScenarioSpec back = parse_scenario_text(text, name);
    CHECK(serialize_scenario(back) == text);
    validate_scenario(back, &rts());
  }

  ScenarioSpec noisy = s1;
  noisy.noise.std = 1e-3;
  noisy.noise.smoothing = true;
  noisy.dispatch = {{100.0, 1.0}};
  const ScenarioSpec back = parse_scenario_text(serialize_scenario(noisy), "noisy");
  CHECK(back.noise.std == 1e-3);
  CHECK(back.noise.smoothing);
  CHECK(back.dispatch.size() == 1);
}

TEST_CASE("invalid scenarios are rejected") {
  const std::string base = "[scenario]\ncase rts24.case\nduration 10\n";
  CHECK_NOTHROW(parse_scenario_text(base, "ok"));
  CHECK_THROWS_AS(parse_scenario_text("[scenario]\nduration 10\n", "nocase"), ParseError);
  CHECK_THROWS_AS(parse_scenario_text(base + "speed 3\n", "key"), ParseError);
  CHECK_THROWS_AS(parse_scenario_text(base + "[attack]\n1 2 P_G1 warp 0.1\n", "kind"), ParseError);
  CHECK_THROWS_AS(parse_scenario_text(base + "[load_event]\n1 3\n", "short"), ParseError);
  CHECK_THROWS_AS(parse_scenario_text(base + "[bogus]\n", "section"), ParseError);
  CHECK_THROWS_AS(parse_scenario("no-such-file.scn"), InputError);

  ScenarioSpec s = parse_scenario_text(base, "ok");
  s.dt = 0.05;
  CHECK_THROWS_AS(validate_scenario(s), ValidationError);
  s.dt = 0.01;
  s.load_events = {{5.0, 3, 0.1}, {2.0, 3, -0.1}};
  CHECK_THROWS_AS(validate_scenario(s), ValidationError);
  s.load_events = {{5.0, 1, 0.1}};
  CHECK_NOTHROW(validate_scenario(s));
  CHECK_THROWS_AS(validate_scenario(s, &rts()), ValidationError);  // bus 1 is a generator
  s.load_events.clear();
  s.attacks = {{8.0, 5.0, "P_G8", AttackKind::Scale, 0.1}};
  CHECK_THROWS_AS(validate_scenario(s), ValidationError);
  s.attacks.clear();
  s.safety = 0.9;
  CHECK_THROWS_AS(validate_scenario(s), ValidationError);
}

TEST_CASE("load profile of the first scenario") {
  const ScenarioSpec s = scenario("scenario1.scn");
  const std::vector<int> buses = {3, 4, 5};
  CHECK(load_profile_eval(s, buses, 10.0).norm() == 0.0);
  const VectorXd mid = load_profile_eval(s, buses, 100.0);
  CHECK(mid(0) == 0.5);
  CHECK(mid.tail(2).norm() == 0.0);
  CHECK(load_profile_eval(s, buses, 250.0).norm() == 0.0);
  CHECK(load_profile_eval(s, buses, 20.0)(0) == 0.5);
}

TEST_CASE("attack injection") {
  const std::vector<Attack> attacks = {{125.0, 5.0, "y1", AttackKind::Scale, 0.1},
                                       {135.0, 5.0, "y0", AttackKind::Bias, 0.2}};
  const std::vector<std::string> labels = {"y0", "y1"};
  const auto targets = resolve_targets(attacks, labels);
  CHECK(targets == std::vector<Eigen::Index>{1, 0});
  VectorXd y(2);
  y << 1.0, 1.0;
  const VectorXd inside = inject_attack(y, attacks, targets, 126.0, VectorXd());
  CHECK(inside(0) == 0.0);
  CHECK(inside(1) == doctest::Approx(0.1));
  CHECK(inject_attack(y, attacks, targets, 131.0, VectorXd()).norm() == 0.0);
  CHECK(inject_attack(y, attacks, targets, 130.0, VectorXd()).norm() == 0.0);
  CHECK(inject_attack(y, attacks, targets, 136.0, VectorXd())(0) == doctest::Approx(0.2));

  VectorXd ref(2);
  ref << 3.0, 4.0;
  CHECK(inject_attack(y, attacks, targets, 125.0, ref)(1) == doctest::Approx(0.5));

  const std::vector<Attack> unknown = {{1.0, 1.0, "P_Q1", AttackKind::Scale, 0.1}};
  CHECK_THROWS_AS(resolve_targets(unknown, labels), UnknownTarget);
}

TEST_CASE("attack windows of the third scenario") {
  const ScenarioSpec s = scenario("scenario3.scn");
  long active = 0;
  double first = 1e9;
  double last = -1.0;
  for (long k = 0; k <= s.steps(); ++k) {
    const double t = static_cast<double>(k) * s.dt;
    bool on = false;
    for (const auto& a : s.attacks) on = on || attack_active(a, t);
    if (on) {
      ++active;
      first = std::min(first, t);
      last = std::max(last, t);
    }
  }
  CHECK(active == 3000);
  CHECK(first == doctest::Approx(125.0));
  CHECK(last + s.dt == doctest::Approx(180.0));
}

TEST_CASE("measurement noise") {
  std::mt19937_64 a(7);
  std::mt19937_64 b(7);
  const VectorXd y = VectorXd::LinSpaced(5, 0.0, 1.0);
  CHECK(add_noise(y, 0.0, a) == y);
  CHECK(add_noise(y, 1e-3, a) == add_noise(y, 1e-3, b));

  std::mt19937_64 rng(11);
  const VectorXd big = add_noise(VectorXd::Zero(100000), 1e-3, rng);
  const double mean = big.mean();
  const double sd = std::sqrt((big.array() - mean).square().sum() / (big.size() - 1));
  CHECK(std::abs(sd - 1e-3) < 0.02e-3);
}

TEST_CASE("RK4 step") {
  const grid::LinearModel m = scalar_model();
  VectorXd x = VectorXd::Ones(1);
  for (int k = 0; k < 100; ++k) x = step_dynamics(x, VectorXd::Zero(1), m, 0.01);
  CHECK(std::abs(x(0) - std::exp(-1.0)) < 1e-8);

  const grid::LinearModel r = grid::build_model(rts(), 1.2);
  const VectorXd z = VectorXd::Zero(r.n);
  CHECK(step_dynamics(z, VectorXd::Zero(r.n_load), r, 0.01).norm() == 0.0);
  CHECK_THROWS_AS(step_dynamics(z, VectorXd::Zero(r.n_load), r, 0.0), ValidationError);
}

TEST_CASE("RK4 converges at fourth order on the grid model") {
  const grid::LinearModel m = grid::build_model(rts(), 1.2);
  const double horizon = 2.0;
  const VectorXd ref = integrate(m, 0.01 / 16.0, horizon);
  const double e1 = (integrate(m, 0.01, horizon) - ref).norm();
  const double e2 = (integrate(m, 0.005, horizon) - ref).norm();
  const double ratio = e1 / e2;
  CHECK(ratio > 8.0);
  CHECK(ratio < 32.0);
}

TEST_CASE("a constant step settles on the null direction") {
  const grid::LinearModel m = grid::build_model(rts(), 1.2);
  const VectorXd x = integrate(m, 0.01, 400.0);
  VectorXd d = VectorXd::Zero(m.n_load);
  d(0) = 0.5;
  const VectorXd rate = m.A * x + m.G * d;
  const MatrixXd P = m.semistability.stable_projector();
  CHECK((P * rate).norm() < 1e-6 * (m.G * d).norm());
}

TEST_CASE("simulation basics") {
  ScenarioSpec s = scenario("scenario1.scn");
  s.duration = 30.0;
  s.load_events.resize(1);
  ScenarioSpec quiet = s;
  quiet.load_events.clear();
  const SimulationTrace zero = simulate_scenario(quiet, rts());
  CHECK(zero.samples() == 3001);
  CHECK(zero.x.norm() == 0.0);
  CHECK(zero.y_tilde.norm() == 0.0);

  const SimulationTrace tr = simulate_scenario(s, rts());
  CHECK(tr.y_tilde == tr.y);
  CHECK(tr.intervals.size() == 1);
  CHECK(tr.state_labels.size() == 68);
  CHECK(tr.x.col(1999).norm() == 0.0);
  CHECK(tr.x.col(2001).norm() > 0.0);
  // frequency deviates after the step and is pulled back by the governors
  double peak = 0.0;
  for (Eigen::Index k = 2000; k < 2500; ++k) peak = std::max(peak, std::abs(tr.x(0, k)));
  CHECK(peak > 0.0);
  CHECK(std::abs(tr.x(0, tr.samples() - 1)) < 0.5 * peak);

  const SimulationTrace again = simulate_scenario(s, rts());
  CHECK(again.x == tr.x);
}

TEST_CASE("superposition of load steps") {
  ScenarioSpec a = scenario("scenario1.scn");
  a.duration = 20.0;
  a.load_events = {{1.0, 3, 0.3}};
  ScenarioSpec b = a;
  b.load_events = {{4.0, 9, -0.2}};
  ScenarioSpec ab = a;
  ab.load_events = {{1.0, 3, 0.3}, {4.0, 9, -0.2}};
  const auto ta = simulate_scenario(a, rts());
  const auto tb = simulate_scenario(b, rts());
  const auto tab = simulate_scenario(ab, rts());
  CHECK((tab.x - ta.x - tb.x).norm() <= 1e-8 * tab.x.norm());
}

TEST_CASE("ED intervals and model switching") {
  ScenarioSpec s = scenario("scenario1.scn");
  s.dispatch = {{100.0, 0.8}, {200.0, 1.0}};
  const auto iv = ed_intervals(s);
  REQUIRE(iv.size() == 3);
  CHECK(iv[0].demand_scale == 1.2);
  CHECK(iv[1].demand_scale == 0.8);
  CHECK(iv[2].demand_scale == 1.0);
  CHECK(iv[2].label == "high/2");
  CHECK(interval_at(iv, 99.99) == 0);
  CHECK(interval_at(iv, 100.0) == 1);

  ModelProvider models(rts(), {"P_G"});
  const auto& m1 = models.model(iv[1]);
  CHECK(m1.outputs() == 10);
  CHECK(&models.model(iv[1]) == &m1);
  CHECK((models.model(iv[0]).A - m1.A).norm() > 0.0);
}

TEST_CASE("trace CSV round-trips") {
  ScenarioSpec s = scenario("scenario3.scn");
  s.duration = 22.0;
  s.attacks.clear();
  s.load_events.resize(1);
  const SimulationTrace tr = simulate_scenario(s, rts());
  const std::string csv = trace_to_csv(tr, 100);
  const TraceTable tab = parse_trace_csv(csv, "trace");
  CHECK(tab.columns.front() == "t");
  CHECK(tab.columns.size() == 1 + 68 + 10 + 10 + 14);
  CHECK(tab.values.rows() == 23);
  CHECK(tab.values(22, 0) == doctest::Approx(22.0));
  CHECK(tab.values(21, 1 + 68 + 7) == tr.y(7, 2100));
  CHECK_THROWS_AS(parse_trace_csv("x,y\n1,2\n", "bad"), ParseError);
  CHECK_THROWS_AS(parse_trace_csv("t,y\n1\n", "short"), ParseError);
}
