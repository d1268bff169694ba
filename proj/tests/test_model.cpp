#include <cmath>
#include <random>

#include "doctest.h"
#include "rlempc/model.hpp"

using namespace rlempc;

namespace {

// Straight-line transcription of the reactor equations with the table
// constants, kept separate from the library code.
std::array<double, 4> reference_rhs(const std::array<double, 4>& x, const std::array<double, 6>& t,
                                    const std::array<double, 3>& u) {
  const double g1 = -8.13, g2 = -7.12, g3 = -11.07;
  const double A1 = 92.80, A2 = 12.66, A3 = 2417.71;
  const double B1 = 7.32, B2 = 10.39, B3 = 2170.57, B4 = 7.02;
  const double x1 = x[0], x2 = x[1], x3 = x[2], x4 = x[3];
  const double r1 = A1 * t[3] * std::exp(g1 * t[0] / x4) * std::pow(x2 * x4, 0.5);
  const double r2 = A2 * t[4] * std::exp(g2 * t[1] / x4) * std::pow(x2 * x4, 0.25);
  const double r3 = A3 * t[5] * std::exp(g3 * t[2] / x4) * std::pow(x3 * x4, 0.5);
  return {u[0] * (1 - x1 * x4), u[0] * (u[1] - x2 * x4) - r1 - r2, -u[0] * x3 * x4 + r1 - r3,
          u[0] / x1 * (1 - x4) + B1 / x1 * std::exp(g1 / x4) * std::pow(x2 * x4, 0.5) +
              B2 / x1 * std::exp(g2 / x4) * std::pow(x2 * x4, 0.25) +
              B3 / x1 * std::exp(g3 / x4) * std::pow(x3 * x4, 0.5) - B4 / x1 * (x4 - u[2])};
}

}  // namespace

TEST_CASE("rhs matches an independent transcription on random points") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> th(0.9, 1.1), s(0.5, 1.5), c(0.0, 0.6), u1(0.071, 0.71), u2(0.25, 2.5),
      u3(0.6, 1.4);
  for (int i = 0; i < 200; ++i) {
    PlantState x{{s(rng), c(rng), 0.1 * c(rng), s(rng)}};
    KineticParams k;
    for (auto& v : k.theta) v = th(rng);
    ControlInput u{{u1(rng), u2(rng), u3(rng)}};
    const auto f = eval_rhs(x, k, u);
    const auto g = reference_rhs(x.x, k.theta, u.u);
    for (int j = 0; j < 4; ++j) CHECK(f[j] == doctest::Approx(g[j]).epsilon(1e-12));
  }
}

TEST_CASE("washout state is an exact equilibrium") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> th(0.9, 1.1), u1(0.071, 0.71);
  for (int i = 0; i < 100; ++i) {
    KineticParams k;
    for (auto& v : k.theta) v = th(rng);
    const auto f = eval_rhs(PlantState{{1, 0, 0, 1}}, k, ControlInput{{u1(rng), 0, 1}});
    for (double v : f) CHECK(v == 0.0);
  }
}

TEST_CASE("domain errors") {
  const KineticParams k;
  const ControlInput u = ControlInput::steady_state();
  CHECK_THROWS_AS(eval_rhs(PlantState{{0.0, 0.4, 0.03, 1.0}}, k, u), DomainError);
  CHECK_THROWS_AS(eval_rhs(PlantState{{1.0, 0.4, 0.03, -1.0}}, k, u), DomainError);
  CHECK_THROWS_AS(eval_rhs(PlantState{{1.0, -0.1, 0.03, 1.0}}, k, u), DomainError);
  CHECK_THROWS_AS(eval_rhs(PlantState{{1.0, 0.4, -0.03, 1.0}}, k, u), DomainError);
  CHECK_NOTHROW(eval_rhs(PlantState{{1.0, 0.0, 0.0, 1.0}}, k, u));
}

TEST_CASE("disturbance enters additively") {
  const PlantState x = PlantState::reported_steady_state();
  Disturbance d;
  d.d = {0.01, -0.02, 0.003, 0.004};
  const auto f0 = eval_rhs(x, {}, ControlInput::steady_state());
  const auto f1 = eval_rhs(x, {}, ControlInput::steady_state(), d);
  for (int j = 0; j < 4; ++j) CHECK(f1[j] - f0[j] == doctest::Approx(d.d[j]).epsilon(1e-12));
}

TEST_CASE("kinetic schedule") {
  CHECK(kinetic_schedule(0) == KineticParams::nominal());
  const KineticParams s5 = kinetic_schedule(5);
  const std::array<double, 6> expect{1.05, 0.95, 0.95, 0.95, 1.05, 1.05};
  for (int i = 0; i < 6; ++i) CHECK(s5[i] == doctest::Approx(expect[i]).epsilon(1e-15));
  for (int s = 0; s <= 5; ++s) CHECK(kinetic_schedule(s).within(ParamBounds{}));
  CHECK_THROWS_AS(kinetic_schedule(6), std::out_of_range);
  CHECK_THROWS_AS(kinetic_schedule(-1), std::out_of_range);
}

TEST_CASE("input box clip and contains") {
  InputBox box;
  const ControlInput c = box.clip(ControlInput{{0.0, 3.0, 1.0}});
  CHECK(c[0] == 0.071);
  CHECK(c[1] == 2.5);
  CHECK(c[2] == 1.0);
  CHECK(box.contains(c));
  CHECK_FALSE(box.contains(ControlInput{{0.0, 1.0, 1.0}}));
  InputBox bad;
  bad.lower[2] = 2.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("state validity") {
  CHECK(PlantState::reported_steady_state().valid());
  CHECK_FALSE(PlantState{{1.0, -1e-9, 0.0, 1.0}}.valid());
  CHECK_FALSE(PlantState{{1.0, 0.1, NAN, 1.0}}.valid());
}
