#include "rlempc/orchestrator.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace rlempc {

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void write_provenance(std::ostream& os, const CsvProvenance& prov) {
  os << "# config_hash=" << prov.config_hash << " seed=" << prov.seed << " version=" << prov.tool_version << "\n";
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t root, const std::string& stream) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : stream) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(root) ^ h);
}

void TrainingConfig::validate() const {
  if (episodes < 1) throw std::invalid_argument("training: episodes F must satisfy F >= 1");
  if (steps_per_episode < 1) throw std::invalid_argument("training: steps per episode must be >= 1");
  reset_theta_bounds.validate();
  if (!(initial_state_spread >= 0.0 && initial_state_spread < 1.0)) {
    throw std::invalid_argument("training: initial state spread must lie in [0, 1)");
  }
  if (!(max_abort_fraction >= 0.0 && max_abort_fraction <= 1.0)) {
    throw std::invalid_argument("training: max abort fraction must lie in [0, 1]");
  }
  noise.validate();
  constants.validate();
}

TrainingResult train(const TrainingConfig& cfg, const EmpcConfig& empc_cfg, const AgentConfig& agent_cfg,
                     const IntegratorConfig& plant, const TrainingProgress& progress) {
  cfg.validate();
  empc_cfg.validate();
  plant.validate();
  const CstrModel model(cfg.constants);
  DdpgAgent agent(agent_cfg, derive_seed(cfg.seed, "agent"));
  EmpcSolver solver(model, empc_cfg);
  std::mt19937_64 reset_rng(derive_seed(cfg.seed, "reset"));
  std::uniform_real_distribution<double> theta_dist(cfg.reset_theta_bounds.lower, cfg.reset_theta_bounds.upper);
  std::uniform_real_distribution<double> spread(-cfg.initial_state_spread, cfg.initial_state_spread);
  const PlantState xs = PlantState::reported_steady_state();

  TrainingResult result;
  for (int ep = 0; ep < cfg.episodes; ++ep) {
    ScenarioState sc;
    sc.final_time = cfg.steps_per_episode * plant.sampling_period;
    KineticParams plant_theta, theta;
    for (double& t : plant_theta.theta) t = theta_dist(reset_rng);
    sc.fixed_plant_theta = plant_theta;
    for (std::size_t i = 0; i < kStateDim; ++i) sc.initial_state[i] = xs[i] * (1.0 + spread(reset_rng));
    for (double& t : theta.theta) t = theta_dist(reset_rng);
    sc.noise = cfg.noise;
    sc.nominal_input = empc_cfg.nominal_input;
    PlantSimulator sim(model, plant, sc, derive_seed(cfg.seed, "plant/" + std::to_string(ep)));
    agent.reset_noise();

    Observation obs{sim.measured(), sim.measured()};
    std::optional<ControlPlan> warm;
    double reward_sum = 0.0;
    int steps = 0;
    bool aborted = false;
    try {
      for (int k = 0; k < cfg.steps_per_episode; ++k) {
        const EmpcSolution sol = solver.solve(obs.measured, theta, warm ? &*warm : nullptr);
        ++result.empc_solves;
        const PlantState x_next = sim.step(sol.plan.front());
        ++result.plant_steps;
        const Observation next{x_next, sol.predicted[1]};
        const double r = reward(next.measured, next.predicted, agent_cfg);
        agent.remember(obs, theta, r, next);
        agent.update();
        ++result.agent_updates;
        theta = agent.explore(agent.act(next));
        obs = next;
        warm = solver.shifted(sol.plan);
        reward_sum += r;
        ++steps;
      }
    } catch (const DomainError&) {
      aborted = true;
      ++result.aborted_episodes;
    }
    const double avg = steps > 0 ? reward_sum / steps : 0.0;
    result.episode_rewards.push_back(avg);
    result.episode_aborted.push_back(aborted);
    if (progress) progress(ep, avg);
  }
  if (result.aborted_episodes > cfg.max_abort_fraction * cfg.episodes) {
    throw std::runtime_error("training failed: " + std::to_string(result.aborted_episodes) + " of " +
                             std::to_string(cfg.episodes) + " episodes aborted on domain errors");
  }
  result.actor = agent.freeze();
  return result;
}

ThetaPolicy actor_policy(FrozenActor actor, KineticParams initial) {
  ThetaPolicy p;
  p.name = "empc_rl";
  p.initial = [initial](const ScenarioState&) { return initial; };
  p.next = [a = std::move(actor)](const Observation& obs, double, const ScenarioState&) { return a(obs); };
  return p;
}

ThetaPolicy oracle_policy() {
  ThetaPolicy p;
  p.name = "oracle";
  p.initial = [](const ScenarioState& sc) { return sc.theta_true_at(0.0); };
  p.next = [](const Observation&, double t, const ScenarioState& sc) { return sc.theta_true_at(t); };
  return p;
}

ThetaPolicy constant_policy(KineticParams theta) {
  ThetaPolicy p;
  p.name = "empc_only";
  p.initial = [theta](const ScenarioState&) { return theta; };
  p.next = [theta](const Observation&, double, const ScenarioState&) { return theta; };
  return p;
}

DeployResult deploy(const ThetaPolicy& policy, const DeployOptions& opt) {
  opt.scenario.validate();
  opt.empc.validate();
  opt.plant.validate();
  const CstrModel model(opt.constants);
  EmpcSolver solver(model, opt.empc);
  PlantSimulator sim(model, opt.plant, opt.scenario, opt.seed);
  const double dt = opt.plant.sampling_period;
  const int periods = static_cast<int>(std::floor(opt.scenario.final_time / dt + 1e-9));
  const ScenarioState& sc = opt.scenario;

  Trajectory tr;
  auto push_row = [&](double t, const PlantState& x, const PlantState& xp, const KineticParams& th, double r) {
    tr.times.push_back(t);
    tr.measured_states.push_back(x);
    tr.predicted_states.push_back(xp);
    tr.theta_estimates.push_back(th);
    tr.theta_true.push_back(sc.theta_true_at(t));
    tr.rewards.push_back(r);
  };

  PlantState x = sim.measured();
  PlantState x_pred = x;
  KineticParams theta = policy.initial(sc);
  double r = 0.0;
  std::optional<ControlPlan> warm;
  for (int k = 0; k < periods; ++k) {
    const double t = k * dt;
    push_row(t, x, x_pred, theta, r);
    const EmpcSolution sol = solver.solve(x, theta, warm ? &*warm : nullptr);
    const ControlInput u = sol.plan.front();
    const ControlInput applied = sc.effective_input(u, t);
    tr.inputs.push_back(applied);
    tr.stage_costs.push_back(stage_cost(x, applied, opt.empc.stage_cost));
    tr.mode_flags.push_back(static_cast<int>(sol.mode.mode));
    x = sim.step(u);
    x_pred = sol.predicted[1];
    r = reward(x, x_pred, opt.reward);
    theta = policy.next(Observation{x, x_pred}, (k + 1) * dt, sc);
    warm = solver.shifted(sol.plan);
  }
  push_row(periods * dt, x, x_pred, theta, r);
  const ControlInput last_u = tr.inputs.empty() ? sc.effective_input(opt.empc.nominal_input, 0.0) : tr.inputs.back();
  tr.inputs.push_back(last_u);
  tr.stage_costs.push_back(stage_cost(x, last_u, opt.empc.stage_cost));
  tr.mode_flags.push_back(tr.mode_flags.empty() ? 0 : tr.mode_flags.back());

  DeployResult out;
  out.trajectory = std::move(tr);
  out.metrics = compute_metrics(out.trajectory, sc, opt.empc.lyapunov ? &*opt.empc.lyapunov : nullptr);
  out.metrics.clamp_events = sim.clamp_events();
  return out;
}

std::optional<double> yield_metric(const Trajectory& traj, std::size_t first, std::size_t last) {
  if (traj.empty()) return std::nullopt;
  last = std::min(last, traj.size() - 1);
  if (first >= last) return std::nullopt;
  double num = 0.0, den = 0.0;
  for (std::size_t k = first; k < last; ++k) {
    const double h = traj.times[k + 1] - traj.times[k];
    const auto& a = traj.measured_states[k];
    const auto& b = traj.measured_states[k + 1];
    const auto& ua = traj.inputs[k];
    const auto& ub = traj.inputs[k + 1];
    num += 0.5 * h * (ua[0] * a[2] * a[3] + ub[0] * b[2] * b[3]);
    den += 0.5 * h * (ua[0] * ua[1] + ub[0] * ub[1]);
  }
  if (den == 0.0) return std::nullopt;
  return num / den;
}

RunMetrics compute_metrics(const Trajectory& traj, const ScenarioState& scenario, const StabilityCertificate* cert) {
  RunMetrics m;
  if (const auto y = yield_metric(traj)) {
    m.yield = *y;
    m.yield_defined = true;
  }
  const std::size_t n = traj.size();
  if (n > 1) {
    for (std::size_t k = 1; k < n; ++k) {
      const auto e = relative_errors(traj.measured_states[k], traj.predicted_states[k]);
      for (std::size_t i = 0; i < kStateDim; ++i) {
        m.mean_relative_error[i] += e[i] / static_cast<double>(n - 1);
        m.max_relative_error[i] = std::max(m.max_relative_error[i], e[i]);
      }
    }
  }
  m.mean_relative_error_all =
      std::accumulate(m.mean_relative_error.begin(), m.mean_relative_error.end(), 0.0) / kStateDim;
  m.total_reward = std::accumulate(traj.rewards.begin(), traj.rewards.end(), 0.0);

  std::vector<double> starts{0.0};
  for (double t : scenario.deactivation_times) starts.push_back(t);
  const double tf = traj.empty() ? 0.0 : traj.times.back();
  for (std::size_t s = 0; s < starts.size(); ++s) {
    const double a = starts[s];
    const double b = s + 1 < starts.size() ? starts[s + 1] : tf;
    std::size_t first = n, last = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (traj.times[k] + 1e-9 >= a && traj.times[k] <= b + 1e-9) {
        first = std::min(first, k);
        last = std::max(last, k);
      }
    }
    const auto y = first < n ? yield_metric(traj, first, last) : std::nullopt;
    m.segment_starts.push_back(a);
    m.segment_yields.push_back(y ? *y : std::numeric_limits<double>::quiet_NaN());
  }

  if (cert != nullptr) {
    m.region_exits = 0;
    for (const auto& x : traj.measured_states) {
      const double ratio = cert->V(x) / cert->rho;
      m.max_v_over_rho = std::max(m.max_v_over_rho, ratio);
      if (ratio > 1.0) ++m.region_exits;
    }
  }
  return m;
}

std::vector<ImprovementRow> improvement_table(const RunMetrics& empc_only, const RunMetrics& empc_rl,
                                              const RunMetrics& oracle, double final_time) {
  const std::size_t n = empc_only.segment_yields.size();
  if (empc_rl.segment_yields.size() != n || oracle.segment_yields.size() != n) {
    throw std::invalid_argument("improvement_table: runs have different deactivation schedules");
  }
  std::vector<ImprovementRow> rows;
  for (std::size_t s = 0; s < n; ++s) {
    ImprovementRow r;
    r.step = static_cast<int>(s);
    r.start_time = empc_only.segment_starts[s];
    r.end_time = s + 1 < n ? empc_only.segment_starts[s + 1] : final_time;
    r.yield_empc = empc_only.segment_yields[s];
    r.yield_rl = empc_rl.segment_yields[s];
    r.yield_oracle = oracle.segment_yields[s];
    r.improvement_pct = 100.0 * (r.yield_rl - r.yield_empc) / r.yield_empc;
    r.rl_vs_oracle_pct = 100.0 * r.yield_rl / r.yield_oracle;
    r.empc_vs_oracle_pct = 100.0 * r.yield_empc / r.yield_oracle;
    rows.push_back(r);
  }
  return rows;
}

double least_squares_slope(const std::vector<double>& y) {
  const std::size_t n = y.size();
  if (n < 2) return 0.0;
  const double xbar = 0.5 * static_cast<double>(n - 1);
  const double ybar = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - xbar;
    sxy += dx * (y[i] - ybar);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

void write_reward_csv(std::ostream& os, const TrainingResult& result, const CsvProvenance& prov) {
  write_provenance(os, prov);
  os << "episode,average_reward,aborted\n";
  for (std::size_t i = 0; i < result.episode_rewards.size(); ++i) {
    os << i << "," << fmt(result.episode_rewards[i]) << "," << (result.episode_aborted[i] ? 1 : 0) << "\n";
  }
}

void write_improvement_csv(std::ostream& os, const std::vector<ImprovementRow>& rows, const CsvProvenance& prov) {
  write_provenance(os, prov);
  os << "step,start_time,end_time,yield_empc,yield_rl,yield_oracle,improvement_pct,rl_vs_oracle_pct,"
        "empc_vs_oracle_pct\n";
  for (const auto& r : rows) {
    os << r.step << "," << fmt(r.start_time) << "," << fmt(r.end_time) << "," << fmt(r.yield_empc) << ","
       << fmt(r.yield_rl) << "," << fmt(r.yield_oracle) << "," << fmt(r.improvement_pct) << ","
       << fmt(r.rl_vs_oracle_pct) << "," << fmt(r.empc_vs_oracle_pct) << "\n";
  }
}

}  // namespace rlempc
