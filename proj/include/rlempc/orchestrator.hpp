#pragma once

// Training loop for the kinetic-parameter agent, closed-loop deployment with a
// pluggable theta policy, and the run metrics derived from trajectories.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rlempc/ddpg.hpp"
#include "rlempc/empc.hpp"
#include "rlempc/sim.hpp"

namespace rlempc {

/// Independent stream seed for a named subsystem of a run.
std::uint64_t derive_seed(std::uint64_t root, const std::string& stream);

struct TrainingConfig {
  int episodes = 200;
  int steps_per_episode = 400;
  /// At every reset the plant theta and the controller's theta(t_0) are drawn
  /// independently and uniformly from this box.
  ParamBounds reset_theta_bounds;
  /// Initial state is x_s * (1 + U(-spread, spread)) componentwise.
  double initial_state_spread = 0.10;
  double max_abort_fraction = 0.10;
  std::uint64_t seed = 1;
  NoiseConfig noise;
  ModelConstants constants;

  void validate() const;
};

struct TrainingResult {
  FrozenActor actor;
  /// Mean per-step reward of each episode (over the steps it completed).
  std::vector<double> episode_rewards;
  std::vector<bool> episode_aborted;
  int aborted_episodes = 0;
  long empc_solves = 0;
  long plant_steps = 0;
  long agent_updates = 0;
};

using TrainingProgress = std::function<void(int episode, double average_reward)>;

/// Throws std::runtime_error when more than max_abort_fraction of the episodes
/// end in a domain error.
TrainingResult train(const TrainingConfig& cfg, const EmpcConfig& empc, const AgentConfig& agent,
                     const IntegratorConfig& plant = {}, const TrainingProgress& progress = {});

/// Source of the controller's theta at each sampling instant.
struct ThetaPolicy {
  std::string name;
  /// theta(t_0).
  std::function<KineticParams(const ScenarioState&)> initial;
  /// theta(t_{k+1}) from (x(t_{k+1}), x~(t_{k+1})) and t_{k+1}.
  std::function<KineticParams(const Observation&, double t, const ScenarioState&)> next;
};

ThetaPolicy actor_policy(FrozenActor actor, KineticParams initial = KineticParams::nominal());
/// The plant's true theta at every instant.
ThetaPolicy oracle_policy();
/// Frozen theta for the whole run: the EMPC-alone baseline.
ThetaPolicy constant_policy(KineticParams theta = KineticParams::nominal());

struct DeployOptions {
  ScenarioState scenario;
  EmpcConfig empc;
  IntegratorConfig plant;
  ModelConstants constants;
  /// Only the reward weights and threshold are used.
  AgentConfig reward;
  std::uint64_t seed = 1;
};

struct RunMetrics {
  double yield = 0.0;
  bool yield_defined = false;
  std::array<double, kStateDim> mean_relative_error{};
  std::array<double, kStateDim> max_relative_error{};
  /// Mean over states of mean_relative_error.
  double mean_relative_error_all = 0.0;
  /// Yield over each deactivation segment [t_s, t_{s+1}); entry 0 is fresh
  /// catalyst. One entry when the schedule is empty.
  std::vector<double> segment_yields;
  std::vector<double> segment_starts;
  double total_reward = 0.0;
  int clamp_events = 0;
  /// Sampling instants with V(x) > rho; -1 without a certificate.
  int region_exits = -1;
  double max_v_over_rho = 0.0;
};

struct DeployResult {
  Trajectory trajectory;
  RunMetrics metrics;
};

/// Closed loop: solve, apply with hold, measure, predict, update theta.
/// Never modifies the policy. Propagates DomainError from the plant.
DeployResult deploy(const ThetaPolicy& policy, const DeployOptions& opt);

/// Trapezoidal ratio of int u1 x3 x4 over int u1 u2 on sampling instants
/// [first, last]. Returns nullopt for fewer than two instants or a zero
/// denominator.
std::optional<double> yield_metric(const Trajectory& traj, std::size_t first = 0,
                                   std::size_t last = static_cast<std::size_t>(-1));

/// Pure function of the trajectory (plus the schedule and optional
/// certificate used to segment and monitor it).
RunMetrics compute_metrics(const Trajectory& traj, const ScenarioState& scenario,
                           const StabilityCertificate* cert = nullptr);

struct ImprovementRow {
  int step = 0;
  double start_time = 0.0;
  double end_time = 0.0;
  double yield_empc = 0.0;
  double yield_rl = 0.0;
  double yield_oracle = 0.0;
  double improvement_pct = 0.0;
  double rl_vs_oracle_pct = 0.0;
  double empc_vs_oracle_pct = 0.0;
};

std::vector<ImprovementRow> improvement_table(const RunMetrics& empc_only, const RunMetrics& empc_rl,
                                              const RunMetrics& oracle, double final_time);

/// Least-squares slope of y against its index.
double least_squares_slope(const std::vector<double>& y);

void write_reward_csv(std::ostream& os, const TrainingResult& result, const CsvProvenance& prov);
void write_improvement_csv(std::ostream& os, const std::vector<ImprovementRow>& rows, const CsvProvenance& prov);

}  // namespace rlempc
