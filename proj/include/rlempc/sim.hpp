#pragma once

// Fixed-step integration of the CSTR under sample-and-hold inputs, the
// scenario definition shared by training and deployment, and the plant
// simulator that plays the role of the real process.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rlempc/model.hpp"

namespace rlempc {

enum class IntegrationMethod { euler, rk4 };

std::string to_string(IntegrationMethod m);
IntegrationMethod parse_integration_method(const std::string& s);

struct IntegratorConfig {
  IntegrationMethod method = IntegrationMethod::rk4;
  double step_size = 0.01;
  double sampling_period = 1.0;

  /// Number of substeps covering `span`; throws if span is not an integer
  /// multiple of step_size.
  int substeps(double span) const;
  void validate() const;
};

enum class NoiseMode { state_rate, measurement };

std::string to_string(NoiseMode m);
NoiseMode parse_noise_mode(const std::string& s);

struct NoiseConfig {
  bool enabled = false;
  /// 0.5% of the reported steady state, per component.
  std::array<double, kStateDim> std_dev{0.00499, 0.00216, 0.000146, 0.00501};
  std::uint64_t seed = 1;
  NoiseMode mode = NoiseMode::state_rate;

  void validate() const;
};

/// White Gaussian noise source. In state-rate mode every integration substep
/// of length h draws d ~ N(0, diag(sigma^2)) / sqrt(h), so the accumulated
/// perturbation over a unit of time has standard deviation sigma regardless
/// of h.
class GaussianNoise {
 public:
  GaussianNoise(const NoiseConfig& cfg, std::uint64_t seed);

  StateRate rate_sample(double step_size);
  PlantState corrupt(const PlantState& x);

 private:
  std::array<double, kStateDim> sigma_{};
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

struct HoldResult {
  PlantState x;
  int clamp_events = 0;
};

/// Integrates dx/dt = f(x, theta, u, d) over `span` with u held constant.
/// `d` is a constant additive rate; `noise` (optional) adds a fresh Gaussian
/// rate perturbation on each substep. x2 and x3 are clamped at zero after each
/// substep (and on RK4 stage arguments); every clamp is counted.
HoldResult integrate_hold(const CstrModel& model, const PlantState& x0, const KineticParams& theta,
                          const ControlInput& u, const StateRate& d, GaussianNoise* noise,
                          double span, const IntegratorConfig& cfg);

/// Single substep of the configured method (no clamping, no noise).
PlantState integrate_substep(const CstrModel& model, const PlantState& x, const KineticParams& theta,
                             const ControlInput& u, const StateRate& d, double h,
                             IntegrationMethod method);

struct SpikeConfig {
  bool enabled = false;
  double start = 50.0;
  double end = 60.0;
  double factor = 1.3;
};

/// Everything that defines one closed-loop experiment on the plant side.
struct ScenarioState {
  /// Times at which deactivation steps 1..n begin. Empty means fresh catalyst
  /// for the whole run.
  std::vector<double> deactivation_times;
  NoiseConfig noise;
  SpikeConfig spike;
  /// Run length t_f in dimensionless time.
  double final_time = 120.0;
  PlantState initial_state = PlantState::reported_steady_state();
  /// Replaces the deactivation schedule with a fixed plant theta (training
  /// resets, custom studies). May lie outside the agent's bounds.
  std::optional<KineticParams> fixed_plant_theta;
  /// Inputs the plant receives for the channels the controller does not
  /// manipulate.
  ControlInput nominal_input = ControlInput::steady_state();

  int deactivation_step_at(double t) const;
  KineticParams theta_true_at(double t) const;
  ControlInput effective_input(const ControlInput& u, double t) const;
  void validate() const;

  /// Five equally spaced deactivation steps over [0, t_f].
  static std::vector<double> equally_spaced_steps(double final_time, int steps = kDeactivationSteps);
};

/// The "real plant": integrates with the true, possibly time-varying kinetics
/// and any configured noise or feed spike.
class PlantSimulator {
 public:
  PlantSimulator(CstrModel model, IntegratorConfig integrator, ScenarioState scenario,
                 std::uint64_t seed);

  /// Applies u over one sampling period and returns the measured state.
  PlantState step(const ControlInput& u);

  double time() const { return t_; }
  int period() const { return k_; }
  const PlantState& state() const { return x_; }
  PlantState measured() const { return measured_; }
  KineticParams theta_true() const { return scenario_.theta_true_at(t_); }
  int clamp_events() const { return clamp_events_; }
  const ScenarioState& scenario() const { return scenario_; }
  const IntegratorConfig& integrator() const { return integrator_; }

 private:
  CstrModel model_;
  IntegratorConfig integrator_;
  ScenarioState scenario_;
  std::optional<GaussianNoise> noise_;
  PlantState x_;
  PlantState measured_;
  double t_ = 0.0;
  int k_ = 0;
  int clamp_events_ = 0;
};

/// Time-indexed record of one closed-loop run. Entry k holds the values at
/// sampling instant t_k; inputs[k] is the input applied over [t_k, t_k+1).
struct Trajectory {
  std::vector<double> times;
  std::vector<PlantState> measured_states;
  std::vector<PlantState> predicted_states;
  std::vector<ControlInput> inputs;
  std::vector<KineticParams> theta_estimates;
  std::vector<KineticParams> theta_true;
  std::vector<double> rewards;
  std::vector<double> stage_costs;
  std::vector<int> mode_flags;

  std::size_t size() const { return times.size(); }
  bool empty() const { return times.empty(); }
  bool consistent() const;
};

struct CsvProvenance {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string tool_version;
};

/// Column order: time, x1..x4 measured, x1..x4 predicted, u1..u3,
/// theta1..theta6 estimated, theta1..theta6 true, reward, stage_cost, mode.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj, const CsvProvenance& prov);

std::string trajectory_csv_header();

}  // namespace rlempc
