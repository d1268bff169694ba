#include "rlempc/sim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>

namespace rlempc {

std::string to_string(IntegrationMethod m) { return m == IntegrationMethod::euler ? "euler" : "rk4"; }

IntegrationMethod parse_integration_method(const std::string& s) {
  if (s == "euler") return IntegrationMethod::euler;
  if (s == "rk4") return IntegrationMethod::rk4;
  throw std::invalid_argument("unknown integration method '" + s + "' (expected euler|rk4)");
}

std::string to_string(NoiseMode m) { return m == NoiseMode::state_rate ? "state_rate" : "measurement"; }

NoiseMode parse_noise_mode(const std::string& s) {
  if (s == "state_rate") return NoiseMode::state_rate;
  if (s == "measurement") return NoiseMode::measurement;
  throw std::invalid_argument("unknown noise mode '" + s + "' (expected state_rate|measurement)");
}

int IntegratorConfig::substeps(double span) const {
  if (!(step_size > 0.0)) throw std::invalid_argument("integrator: step_size must be positive");
  if (span < 0.0) throw std::invalid_argument("integrator: negative span");
  const double ratio = span / step_size;
  const double n = std::round(ratio);
  if (std::abs(ratio - n) > 1e-9 * std::max(1.0, ratio)) {
    throw std::invalid_argument("integrator: span is not an integer multiple of step_size");
  }
  return static_cast<int>(n);
}

void IntegratorConfig::validate() const {
  if (!(step_size > 0.0)) throw std::invalid_argument("integrator: step_size must be positive");
  if (!(sampling_period > 0.0)) {
    throw std::invalid_argument("integrator: sampling_period must be positive");
  }
  substeps(sampling_period);
}

void NoiseConfig::validate() const {
  for (double s : std_dev) {
    if (!(s >= 0.0) || !std::isfinite(s)) {
      throw std::invalid_argument("noise: std_dev must be finite and non-negative");
    }
  }
}

GaussianNoise::GaussianNoise(const NoiseConfig& cfg, std::uint64_t seed)
    : sigma_(cfg.std_dev), rng_(seed) {}

StateRate GaussianNoise::rate_sample(double step_size) {
  const double scale = 1.0 / std::sqrt(step_size);
  StateRate d{};
  for (std::size_t i = 0; i < kStateDim; ++i) d[i] = sigma_[i] * scale * normal_(rng_);
  return d;
}

PlantState GaussianNoise::corrupt(const PlantState& x) {
  PlantState y = x;
  for (std::size_t i = 0; i < kStateDim; ++i) y[i] += sigma_[i] * normal_(rng_);
  return y;
}

namespace {

PlantState axpy(const PlantState& x, double a, const StateRate& k) {
  PlantState y = x;
  for (std::size_t i = 0; i < kStateDim; ++i) y[i] += a * k[i];
  return y;
}

bool clamp_concentrations(PlantState& x) {
  bool clamped = false;
  for (std::size_t i : {std::size_t{1}, std::size_t{2}}) {
    if (x[i] < 0.0) {
      x[i] = 0.0;
      clamped = true;
    }
  }
  return clamped;
}

PlantState rk4_step(const CstrModel& model, const PlantState& x, const KineticParams& th,
                    const ControlInput& u, const StateRate& d, double h, int* clamps) {
  auto stage = [&](PlantState arg) {
    if (clamps != nullptr && clamp_concentrations(arg)) ++*clamps;
    return model.rhs(arg, th, u, d);
  };
  const StateRate k1 = model.rhs(x, th, u, d);
  const StateRate k2 = stage(axpy(x, 0.5 * h, k1));
  const StateRate k3 = stage(axpy(x, 0.5 * h, k2));
  const StateRate k4 = stage(axpy(x, h, k3));
  PlantState y = x;
  for (std::size_t i = 0; i < kStateDim; ++i) {
    y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
  return y;
}

}  // namespace

PlantState integrate_substep(const CstrModel& model, const PlantState& x, const KineticParams& theta,
                             const ControlInput& u, const StateRate& d, double h,
                             IntegrationMethod method) {
  if (method == IntegrationMethod::euler) return axpy(x, h, model.rhs(x, theta, u, d));
  return rk4_step(model, x, theta, u, d, h, nullptr);
}

HoldResult integrate_hold(const CstrModel& model, const PlantState& x0, const KineticParams& theta,
                          const ControlInput& u, const StateRate& d, GaussianNoise* noise,
                          double span, const IntegratorConfig& cfg) {
  const int n = cfg.substeps(span);
  const double h = cfg.step_size;
  HoldResult out{x0, 0};
  for (int s = 0; s < n; ++s) {
    StateRate dd = d;
    if (noise != nullptr) {
      const StateRate w = noise->rate_sample(h);
      for (std::size_t i = 0; i < kStateDim; ++i) dd[i] += w[i];
    }
    if (cfg.method == IntegrationMethod::euler) {
      out.x = axpy(out.x, h, model.rhs(out.x, theta, u, dd));
    } else {
      out.x = rk4_step(model, out.x, theta, u, dd, h, &out.clamp_events);
    }
    if (clamp_concentrations(out.x)) ++out.clamp_events;
    if (!out.x.valid()) throw DomainError("integrate_hold: state left the model domain " + to_string(out.x));
  }
  return out;
}

int ScenarioState::deactivation_step_at(double t) const {
  int step = 0;
  for (double ts : deactivation_times) {
    if (t + 1e-9 >= ts) ++step;
  }
  return std::min(step, kDeactivationSteps);
}

KineticParams ScenarioState::theta_true_at(double t) const {
  if (fixed_plant_theta) return *fixed_plant_theta;
  return kinetic_schedule(deactivation_step_at(t));
}

ControlInput ScenarioState::effective_input(const ControlInput& u, double t) const {
  ControlInput eff = u;
  if (spike.enabled && t + 1e-9 >= spike.start && t + 1e-9 < spike.end) eff[1] *= spike.factor;
  return eff;
}

void ScenarioState::validate() const {
  if (!(final_time >= 0.0)) throw std::invalid_argument("scenario: final_time must be >= 0");
  if (deactivation_times.size() > static_cast<std::size_t>(kDeactivationSteps)) {
    throw std::invalid_argument("scenario: at most five deactivation steps");
  }
  for (std::size_t i = 0; i < deactivation_times.size(); ++i) {
    const double ts = deactivation_times[i];
    if (ts < 0.0 || ts > final_time) {
      throw std::invalid_argument("scenario: deactivation times must lie within [0, t_f]");
    }
    if (i > 0 && !(ts > deactivation_times[i - 1])) {
      throw std::invalid_argument("scenario: deactivation times must be increasing");
    }
  }
  if (spike.enabled && !(spike.end > spike.start)) {
    throw std::invalid_argument("scenario: spike window must be non-empty");
  }
  if (!initial_state.valid()) throw std::invalid_argument("scenario: invalid initial state");
  noise.validate();
}

std::vector<double> ScenarioState::equally_spaced_steps(double final_time, int steps) {
  std::vector<double> times;
  if (!(final_time > 0.0)) return times;
  for (int i = 1; i <= steps; ++i) times.push_back(final_time * i / (steps + 1));
  return times;
}

PlantSimulator::PlantSimulator(CstrModel model, IntegratorConfig integrator, ScenarioState scenario,
                               std::uint64_t seed)
    : model_(std::move(model)),
      integrator_(integrator),
      scenario_(std::move(scenario)),
      x_(scenario_.initial_state),
      measured_(scenario_.initial_state) {
  integrator_.validate();
  scenario_.validate();
  if (scenario_.noise.enabled) noise_.emplace(scenario_.noise, seed);
}

PlantState PlantSimulator::step(const ControlInput& u) {
  const ControlInput eff = scenario_.effective_input(u, t_);
  const KineticParams theta = scenario_.theta_true_at(t_);
  GaussianNoise* rate_noise =
      (noise_ && scenario_.noise.mode == NoiseMode::state_rate) ? &*noise_ : nullptr;
  const HoldResult r = integrate_hold(model_, x_, theta, eff, StateRate{}, rate_noise,
                                      integrator_.sampling_period, integrator_);
  x_ = r.x;
  clamp_events_ += r.clamp_events;
  ++k_;
  t_ = k_ * integrator_.sampling_period;
  measured_ = (noise_ && scenario_.noise.mode == NoiseMode::measurement) ? noise_->corrupt(x_) : x_;
  return measured_;
}

bool Trajectory::consistent() const {
  const std::size_t n = times.size();
  if (measured_states.size() != n || predicted_states.size() != n || inputs.size() != n ||
      theta_estimates.size() != n || theta_true.size() != n || rewards.size() != n ||
      stage_costs.size() != n || mode_flags.size() != n) {
    return false;
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (!(times[i] > times[i - 1])) return false;
  }
  return true;
}

std::string trajectory_csv_header() {
  std::string h = "time";
  for (int i = 1; i <= 4; ++i) h += ",x" + std::to_string(i) + "_meas";
  for (int i = 1; i <= 4; ++i) h += ",x" + std::to_string(i) + "_pred";
  for (int i = 1; i <= 3; ++i) h += ",u" + std::to_string(i);
  for (int i = 1; i <= 6; ++i) h += ",theta" + std::to_string(i) + "_est";
  for (int i = 1; i <= 6; ++i) h += ",theta" + std::to_string(i) + "_true";
  h += ",reward,stage_cost,mode";
  return h;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj, const CsvProvenance& prov) {
  os << "# config_hash=" << prov.config_hash << " seed=" << prov.seed
     << " version=" << prov.tool_version << "\n";
  os << trajectory_csv_header() << "\n";
  char buf[32];
  auto num = [&](double v) { os.write(buf, std::to_chars(buf, buf + sizeof buf, v).ptr - buf); };
  auto put = [&](double v) {
    os << ',';
    num(v);
  };
  for (std::size_t k = 0; k < traj.size(); ++k) {
    num(traj.times[k]);
    for (double v : traj.measured_states[k].x) put(v);
    for (double v : traj.predicted_states[k].x) put(v);
    for (double v : traj.inputs[k].u) put(v);
    for (double v : traj.theta_estimates[k].theta) put(v);
    for (double v : traj.theta_true[k].theta) put(v);
    put(traj.rewards[k]);
    put(traj.stage_costs[k]);
    os << "," << traj.mode_flags[k] << "\n";
  }
}

}  // namespace rlempc
