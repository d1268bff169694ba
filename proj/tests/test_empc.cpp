#include <cmath>

#include "doctest.h"
#include "rlempc/empc.hpp"

using namespace rlempc;

namespace {

// Independent Euler rollout of the horizon value int u1 x3 x4 dt.
double oracle_value(PlantState x, const KineticParams& th, const std::vector<ControlInput>& plan) {
  const CstrModel m;
  double v = 0.0;
  const double h = 0.01;
  for (const auto& u : plan) {
    for (int s = 0; s < 100; ++s) {
      v += h * u[0] * x[2] * x[3];
      const auto f = m.rhs(x, th, u);
      for (int j = 0; j < 4; ++j) x.x[j] += h * f[j];
      x.x[1] = std::max(0.0, x.x[1]);
      x.x[2] = std::max(0.0, x.x[2]);
    }
  }
  return v;
}

double best_constant_grid(const PlantState& x, const KineticParams& th, int points) {
  double best = -1e300;
  for (int i = 0; i < points; ++i) {
    ControlInput u = ControlInput::steady_state();
    u[2] = 0.6 + 0.8 * i / (points - 1);
    best = std::max(best, oracle_value(x, th, std::vector<ControlInput>(10, u)));
  }
  return best;
}

}  // namespace

TEST_CASE("stage cost variants") {
  const PlantState x = PlantState::reported_steady_state();
  const ControlInput u = ControlInput::steady_state();
  CHECK(stage_cost(x, u, StageCostKind::yield_numerator) == doctest::Approx(0.2 * 0.0292 * 1.002));
  CHECK(stage_cost(x, u, StageCostKind::yield_per_feed) == doctest::Approx(0.0292 * 1.002 / 0.5));
  CHECK_THROWS_AS(stage_cost(x, ControlInput{{0.2, 0.0, 1.0}}, StageCostKind::yield_per_feed), DomainError);
  CHECK(parse_stage_cost(to_string(StageCostKind::yield_per_feed)) == StageCostKind::yield_per_feed);
}

TEST_CASE("horizon validation names the constraint") {
  EmpcConfig cfg;
  cfg.horizon = 0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("N >= 1"), std::invalid_argument);
}

TEST_CASE("evaluate matches the independent rollout") {
  EmpcSolver solver(CstrModel{}, EmpcConfig{});
  const PlantState x = PlantState::reported_steady_state();
  ControlPlan plan = solver.constant_plan(ControlInput{{0.2, 0.5, 1.1}});
  plan.inputs[3][2] = 0.8;
  CHECK(-solver.evaluate(x, {}, plan) == doctest::Approx(oracle_value(x, {}, plan.inputs)).epsilon(1e-12));
}

TEST_CASE("solver beats the 81-point constant grid with a perfect model") {
  EmpcSolver solver(CstrModel{}, EmpcConfig{});
  for (const PlantState& x : {PlantState::reported_steady_state(), PlantState{{0.95, 0.31, 0.045, 1.05}}}) {
    for (int step : {0, 3}) {
      const KineticParams th = kinetic_schedule(step);
      const EmpcSolution sol = solver.solve(x, th);
      const double value = oracle_value(x, th, sol.plan.inputs);
      CHECK(value >= best_constant_grid(x, th, 81) - 1e-3);
      CHECK(-sol.objective == doctest::Approx(value).epsilon(1e-9));
    }
  }
}

TEST_CASE("solution respects bounds and prediction is consistent") {
  EmpcConfig cfg;
  cfg.manipulated = {0, 1, 2};
  EmpcSolver solver(CstrModel{}, cfg);
  const PlantState x = PlantState::reported_steady_state();
  const EmpcSolution sol = solver.solve(x, {});
  REQUIRE(sol.plan.size() == 10);
  REQUIRE(sol.predicted.size() == 11);
  for (const auto& u : sol.plan.inputs) CHECK(cfg.bounds.contains(u, 1e-12));
  CHECK(sol.predicted[0] == x);
  const PlantState p1 = solver.predict_one_period(x, {}, sol.plan.front());
  for (int j = 0; j < 4; ++j) CHECK(p1[j] == doctest::Approx(sol.predicted[1][j]).epsilon(1e-14));
}

TEST_CASE("single-input mode holds the other channels at nominal") {
  EmpcSolver solver(CstrModel{}, EmpcConfig{});
  const EmpcSolution sol = solver.solve(PlantState::reported_steady_state(), {});
  for (const auto& u : sol.plan.inputs) {
    CHECK(u[0] == 0.2);
    CHECK(u[1] == 0.5);
  }
}

TEST_CASE("warm start never makes the result worse") {
  EmpcSolver solver(CstrModel{}, EmpcConfig{});
  const PlantState x = PlantState::reported_steady_state();
  const EmpcSolution a = solver.solve(x, {});
  const ControlPlan warm = solver.shifted(a.plan);
  const EmpcSolution b = solver.solve(x, {}, &warm);
  CHECK(b.objective <= solver.evaluate(x, {}, warm) + 1e-12);
  CHECK(b.objective <= a.objective + 1e-6);
}

TEST_CASE("shifted plan drops the head and repeats the tail") {
  EmpcSolver solver(CstrModel{}, EmpcConfig{});
  ControlPlan p = solver.constant_plan(ControlInput::steady_state());
  for (int i = 0; i < 10; ++i) p.inputs[i][2] = 0.6 + 0.05 * i;
  const ControlPlan s = solver.shifted(p);
  CHECK(s.inputs[0][2] == doctest::Approx(0.65));
  CHECK(s.inputs[8][2] == doctest::Approx(1.05));
  CHECK(s.inputs[9][2] == doctest::Approx(1.05));
}

TEST_CASE("horizon 1 works") {
  EmpcConfig cfg;
  cfg.horizon = 1;
  EmpcSolver solver(CstrModel{}, cfg);
  const EmpcSolution sol = solver.solve(PlantState::reported_steady_state(), {});
  CHECK(sol.plan.size() == 1);
  CHECK(sol.predicted.size() == 2);
}

TEST_CASE("invalid measured state is rejected") {
  EmpcSolver solver(CstrModel{}, EmpcConfig{});
  CHECK_THROWS_AS(solver.solve(PlantState{{-1, 0.4, 0.03, 1}}, {}), DomainError);
}
