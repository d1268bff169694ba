#include "rlempc/empc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rlempc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void clamp_concentrations(PlantState& x) {
  x[1] = std::max(x[1], 0.0);
  x[2] = std::max(x[2], 0.0);
}

double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double a : v) m = std::max(m, std::abs(a));
  return m;
}

}  // namespace

std::string to_string(StageCostKind k) {
  return k == StageCostKind::yield_numerator ? "yield_numerator" : "yield_per_feed";
}

StageCostKind parse_stage_cost(const std::string& s) {
  if (s == "yield_numerator") return StageCostKind::yield_numerator;
  if (s == "yield_per_feed") return StageCostKind::yield_per_feed;
  throw std::invalid_argument("unknown stage cost '" + s + "' (expected yield_numerator|yield_per_feed)");
}

double stage_cost(const PlantState& x, const ControlInput& u, StageCostKind kind) {
  if (kind == StageCostKind::yield_numerator) return u[0] * x[2] * x[3];
  if (u[1] == 0.0) throw DomainError("stage_cost: feed concentration u2 is zero");
  return x[2] * x[3] / u[1];
}

InputBox EmpcConfig::effective_bounds() const {
  InputBox box = bounds;
  for (std::size_t i = 0; i < kInputDim; ++i) {
    if (std::find(manipulated.begin(), manipulated.end(), static_cast<int>(i)) == manipulated.end()) {
      box.lower[i] = box.upper[i] = nominal_input[i];
    }
  }
  return box;
}

int EmpcConfig::substeps_per_period() const {
  const double r = sampling_period / model_step;
  const double n = std::round(r);
  if (!(model_step > 0.0) || std::abs(r - n) > 1e-9 * std::max(1.0, r) || n < 1) {
    throw std::invalid_argument("empc: sampling_period must be a positive multiple of model_step");
  }
  return static_cast<int>(n);
}

void EmpcConfig::validate() const {
  if (horizon < 1) throw std::invalid_argument("empc: horizon N must satisfy N >= 1");
  if (!(sampling_period > 0.0)) throw std::invalid_argument("empc: sampling_period must be positive");
  substeps_per_period();
  if (manipulated.empty()) throw std::invalid_argument("empc: manipulated set is empty");
  for (int c : manipulated) {
    if (c < 0 || c >= static_cast<int>(kInputDim)) {
      throw std::invalid_argument("empc: manipulated channel out of range");
    }
  }
  bounds.validate();
  if (max_iterations < 0) throw std::invalid_argument("empc: max_iterations must be >= 0");
  if (!(tolerance > 0.0)) throw std::invalid_argument("empc: tolerance must be positive");
  if (lyapunov) lyapunov->validate();
}

EmpcSolver::EmpcSolver(CstrModel model, EmpcConfig cfg) : model_(std::move(model)), cfg_(std::move(cfg)) {
  cfg_.validate();
  box_ = cfg_.effective_bounds();
  steps_per_period_ = cfg_.substeps_per_period();
}

ControlPlan EmpcSolver::constant_plan(const ControlInput& u) const {
  return ControlPlan{std::vector<ControlInput>(static_cast<std::size_t>(cfg_.horizon), box_.clip(u))};
}

ControlPlan EmpcSolver::shifted(const ControlPlan& plan) const {
  if (plan.inputs.empty()) return constant_plan(cfg_.nominal_input);
  ControlPlan out;
  for (int k = 0; k < cfg_.horizon; ++k) {
    const std::size_t src = std::min(static_cast<std::size_t>(k + 1), plan.inputs.size() - 1);
    out.inputs.push_back(box_.clip(plan.inputs[src]));
  }
  return out;
}

std::vector<double> EmpcSolver::pack(const ControlPlan& plan) const {
  std::vector<double> z;
  z.reserve(plan.inputs.size() * cfg_.manipulated.size());
  for (const auto& u : plan.inputs) {
    for (int c : cfg_.manipulated) z.push_back(u[c]);
  }
  return z;
}

ControlPlan EmpcSolver::unpack(const std::vector<double>& z) const {
  ControlPlan plan;
  const std::size_t m = cfg_.manipulated.size();
  for (int k = 0; k < cfg_.horizon; ++k) {
    ControlInput u = box_.clip(cfg_.nominal_input);
    for (std::size_t j = 0; j < m; ++j) u[cfg_.manipulated[j]] = z[k * m + j];
    plan.inputs.push_back(u);
  }
  return plan;
}

EmpcSolver::Rollout EmpcSolver::rollout_from(int period, PlantState x, const KineticParams& theta,
                                             const ControlPlan& plan, std::vector<PlantState>* starts,
                                             std::vector<double>* cost_prefix,
                                             std::vector<double>* penalty_prefix) const {
  Rollout r;
  const double h = cfg_.model_step;
  const StabilityCertificate* cert = cfg_.lyapunov ? &*cfg_.lyapunov : nullptr;
  try {
    for (int q = period; q < cfg_.horizon; ++q) {
      if (starts != nullptr) {
        (*starts)[q] = x;
        (*cost_prefix)[q] = r.cost;
        (*penalty_prefix)[q] = r.penalty;
      }
      const ControlInput& u = plan.inputs[q];
      if (q == 0 && active_mode_ == LyapunovMode::decrease && cert != nullptr) {
        const double lhs = cert->lie_derivative(model_, mode2_state_, theta, u);
        r.penalty += cfg_.lyapunov_penalty * std::max(0.0, lhs - mode2_reference_);
      }
      double vmax = -kInf;
      for (int s = 0; s < steps_per_period_; ++s) {
        r.cost -= h * stage_cost(x, u, cfg_.stage_cost);
        const StateRate f = model_.rhs(x, theta, u);
        for (std::size_t i = 0; i < kStateDim; ++i) x[i] += h * f[i];
        clamp_concentrations(x);
        if (active_mode_ == LyapunovMode::contract_region && cert != nullptr) vmax = std::max(vmax, cert->V(x));
      }
      if (active_mode_ == LyapunovMode::contract_region && cert != nullptr) {
        r.penalty += cfg_.lyapunov_penalty * std::max(0.0, vmax - cert->rho_e);
      }
      if (!std::isfinite(r.cost)) throw DomainError("empc: non-finite cost");
    }
    if (starts != nullptr) {
      (*starts)[cfg_.horizon] = x;
      (*cost_prefix)[cfg_.horizon] = r.cost;
      (*penalty_prefix)[cfg_.horizon] = r.penalty;
    }
  } catch (const DomainError&) {
    r.ok = false;
    r.cost = kInf;
  }
  return r;
}

double EmpcSolver::penalized(const PlantState& x, const KineticParams& theta, const std::vector<double>& z,
                             std::vector<PlantState>* starts, std::vector<double>* cost_prefix,
                             std::vector<double>* penalty_prefix) const {
  const Rollout r = rollout_from(0, x, theta, unpack(z), starts, cost_prefix, penalty_prefix);
  return r.ok ? r.cost + r.penalty : kInf;
}

std::vector<double> EmpcSolver::gradient(const PlantState& x, const KineticParams& theta,
                                         const std::vector<double>& z, double f0) const {
  const std::size_t n = z.size();
  const std::size_t m = cfg_.manipulated.size();
  std::vector<PlantState> starts(cfg_.horizon + 1);
  std::vector<double> cpre(cfg_.horizon + 1), ppre(cfg_.horizon + 1);
  penalized(x, theta, z, &starts, &cpre, &ppre);

  std::vector<double> g(n, 0.0);
  std::vector<double> zp = z;
  for (std::size_t i = 0; i < n; ++i) {
    const int period = static_cast<int>(i / m);
    const double hstep = cfg_.fd_step * std::max(1.0, std::abs(z[i]));
    zp[i] = z[i] + hstep;
    const Rollout r = rollout_from(period, starts[period], theta, unpack(zp), nullptr, nullptr, nullptr);
    double fp = r.ok ? cpre[period] + ppre[period] + r.cost + r.penalty : kInf;
    if (!std::isfinite(fp)) {
      // Step backwards when the forward point leaves the model domain.
      zp[i] = z[i] - hstep;
      const Rollout rb = rollout_from(period, starts[period], theta, unpack(zp), nullptr, nullptr, nullptr);
      fp = rb.ok ? cpre[period] + ppre[period] + rb.cost + rb.penalty : kInf;
      g[i] = std::isfinite(fp) ? (f0 - fp) / hstep : 0.0;
    } else {
      g[i] = (fp - f0) / hstep;
    }
    zp[i] = z[i];
  }
  return g;
}

std::vector<PlantState> EmpcSolver::predict(const PlantState& x0, const KineticParams& theta,
                                            const ControlPlan& plan) const {
  std::vector<PlantState> out{x0};
  PlantState x = x0;
  const double h = cfg_.model_step;
  for (const auto& u : plan.inputs) {
    for (int s = 0; s < steps_per_period_; ++s) {
      const StateRate f = model_.rhs(x, theta, u);
      for (std::size_t i = 0; i < kStateDim; ++i) x[i] += h * f[i];
      clamp_concentrations(x);
    }
    out.push_back(x);
  }
  return out;
}

PlantState EmpcSolver::predict_one_period(const PlantState& x, const KineticParams& theta,
                                          const ControlInput& u) const {
  return predict(x, theta, ControlPlan{{u}})[1];
}

double EmpcSolver::evaluate(const PlantState& x, const KineticParams& theta, const ControlPlan& plan) const {
  double cost = 0.0;
  PlantState s = x;
  const double h = cfg_.model_step;
  for (const auto& u : plan.inputs) {
    for (int k = 0; k < steps_per_period_; ++k) {
      cost -= h * stage_cost(s, u, cfg_.stage_cost);
      const StateRate f = model_.rhs(s, theta, u);
      for (std::size_t i = 0; i < kStateDim; ++i) s[i] += h * f[i];
      clamp_concentrations(s);
    }
  }
  return cost;
}

ModeResidual EmpcSolver::mode_residual(const PlantState& x_meas, const KineticParams& theta,
                                       const StabilityCertificate& cert, const ControlPlan& plan) const {
  ModeResidual r;
  if (cert.V(x_meas) <= cert.rho_e) {
    r.mode = LyapunovMode::contract_region;
    if (!std::isfinite(cert.rho_e)) {
      r.residual = -kInf;
      return r;
    }
    double vmax = -kInf;
    PlantState x = x_meas;
    const double h = cfg_.model_step;
    for (const auto& u : plan.inputs) {
      for (int s = 0; s < steps_per_period_; ++s) {
        const StateRate f = model_.rhs(x, theta, u);
        for (std::size_t i = 0; i < kStateDim; ++i) x[i] += h * f[i];
        clamp_concentrations(x);
        vmax = std::max(vmax, cert.V(x));
      }
    }
    r.residual = vmax - cert.rho_e;
  } else {
    r.mode = LyapunovMode::decrease;
    r.residual = cert.lie_derivative(model_, x_meas, theta, plan.front()) -
                 cert.lie_derivative(model_, x_meas, theta, cert.h(x_meas));
  }
  return r;
}

ModeResidual apply_mode_constraint(const CstrModel& model, const EmpcConfig& cfg, const PlantState& x_meas,
                                   const KineticParams& theta_hat, const StabilityCertificate& cert,
                                   const ControlPlan& plan) {
  EmpcConfig plain = cfg;
  plain.lyapunov.reset();
  const EmpcSolver solver(model, plain);
  return solver.mode_residual(x_meas, theta_hat, cert, plan);
}

EmpcSolution EmpcSolver::solve(const PlantState& x_meas, const KineticParams& theta_hat,
                               const ControlPlan* warm_start) {
  if (!x_meas.valid()) throw DomainError("solve_empc: invalid measured state " + to_string(x_meas));

  active_mode_ = LyapunovMode::off;
  if (cfg_.lyapunov) {
    const StabilityCertificate& cert = *cfg_.lyapunov;
    if (cert.V(x_meas) <= cert.rho_e) {
      active_mode_ = LyapunovMode::contract_region;
    } else {
      active_mode_ = LyapunovMode::decrease;
      mode2_state_ = x_meas;
      mode2_reference_ = cert.lie_derivative(model_, x_meas, theta_hat, cert.h(x_meas));
    }
  }

  // Seeds: warm start, nominal input, coarse constant grid, and h(x).
  std::vector<ControlPlan> seeds;
  if (warm_start != nullptr && warm_start->size() == static_cast<std::size_t>(cfg_.horizon)) {
    ControlPlan ws = *warm_start;
    for (auto& u : ws.inputs) u = box_.clip(u);
    seeds.push_back(ws);
  }
  seeds.push_back(constant_plan(cfg_.nominal_input));
  const std::size_t m = cfg_.manipulated.size();
  const int per_channel = m == 1 ? 9 : 3;
  std::size_t combos = 1;
  for (std::size_t j = 0; j < m; ++j) combos *= static_cast<std::size_t>(per_channel);
  for (std::size_t c = 0; c < combos; ++c) {
    ControlInput u = box_.clip(cfg_.nominal_input);
    std::size_t rem = c;
    for (std::size_t j = 0; j < m; ++j) {
      const int ch = cfg_.manipulated[j];
      const int idx = static_cast<int>(rem % per_channel);
      rem /= per_channel;
      u[ch] = box_.lower[ch] + (box_.upper[ch] - box_.lower[ch]) * idx / (per_channel - 1);
    }
    seeds.push_back(constant_plan(u));
  }
  if (cfg_.lyapunov) seeds.push_back(constant_plan(cfg_.lyapunov->h(x_meas)));

  std::vector<double> z;
  double fz = kInf;
  for (const auto& s : seeds) {
    const std::vector<double> zs = pack(s);
    const double fs = penalized(x_meas, theta_hat, zs, nullptr, nullptr, nullptr);
    if (fs < fz) {
      fz = fs;
      z = zs;
    }
  }
  if (!std::isfinite(fz)) throw DomainError("solve_empc: every seed plan leaves the model domain");

  const std::size_t n = z.size();
  std::vector<double> lo(n), hi(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int ch = cfg_.manipulated[i % m];
    lo[i] = box_.lower[ch];
    hi[i] = box_.upper[ch];
  }
  auto project = [&](std::vector<double>& v) {
    for (std::size_t i = 0; i < n; ++i) v[i] = std::clamp(v[i], lo[i], hi[i]);
  };
  auto projected_gradient = [&](const std::vector<double>& v, const std::vector<double>& g) {
    std::vector<double> pg(n);
    for (std::size_t i = 0; i < n; ++i) pg[i] = std::clamp(v[i] - g[i], lo[i], hi[i]) - v[i];
    return pg;
  };

  EmpcSolution sol;
  std::vector<double> g = gradient(x_meas, theta_hat, z, fz);
  // Inverse Hessian approximation (dense, n <= 30).
  std::vector<double> H(n * n, 0.0);
  bool identity_H = true;
  auto reset_H = [&](double scale) {
    std::fill(H.begin(), H.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) H[i * n + i] = scale;
    identity_H = true;
  };
  auto initial_scale = [&](const std::vector<double>& grad) {
    const double gn = inf_norm(grad);
    double width = 0.0;
    for (std::size_t i = 0; i < n; ++i) width = std::max(width, hi[i] - lo[i]);
    return gn > 0.0 ? 0.1 * std::max(width, 1e-3) / gn : 1.0;
  };
  reset_H(initial_scale(g));

  int it = 0;
  for (; it < cfg_.max_iterations; ++it) {
    const std::vector<double> pg = projected_gradient(z, g);
    sol.projected_gradient_norm = inf_norm(pg);
    if (sol.projected_gradient_norm < cfg_.tolerance) {
      sol.converged = true;
      break;
    }
    std::vector<bool> active(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      const double eps = 1e-12 * std::max(1.0, hi[i] - lo[i]);
      active[i] = (z[i] <= lo[i] + eps && g[i] > 0.0) || (z[i] >= hi[i] - eps && g[i] < 0.0);
    }
    std::vector<double> d(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (active[i]) continue;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (!active[j]) s -= H[i * n + j] * g[j];
      }
      d[i] = s;
    }
    double slope = 0.0;
    for (std::size_t i = 0; i < n; ++i) slope += d[i] * g[i];
    if (!(slope < 0.0)) {
      reset_H(initial_scale(g));
      for (std::size_t i = 0; i < n; ++i) d[i] = active[i] ? 0.0 : -H[i * n + i] * g[i];
    }

    double t = 1.0;
    bool accepted = false;
    std::vector<double> zn(n);
    double fn = kInf;
    for (int ls = 0; ls < 40; ++ls) {
      for (std::size_t i = 0; i < n; ++i) zn[i] = z[i] + t * d[i];
      project(zn);
      double decrease = 0.0;
      for (std::size_t i = 0; i < n; ++i) decrease += g[i] * (zn[i] - z[i]);
      fn = penalized(x_meas, theta_hat, zn, nullptr, nullptr, nullptr);
      if (std::isfinite(fn) && fn <= fz + 1e-4 * decrease && fn <= fz) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      if (!identity_H) {
        reset_H(initial_scale(g));
        continue;
      }
      break;
    }

    const std::vector<double> gn = gradient(x_meas, theta_hat, zn, fn);
    std::vector<double> s(n), y(n);
    double sy = 0.0, yy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = zn[i] - z[i];
      y[i] = gn[i] - g[i];
      sy += s[i] * y[i];
      yy += y[i] * y[i];
    }
    const double step_size = inf_norm(s);
    z = zn;
    const double fprev = fz;
    fz = fn;
    g = gn;
    if (sy > 1e-12 * std::sqrt(yy) * step_size && yy > 0.0) {
      if (identity_H) reset_H(sy / yy);
      // BFGS inverse update: H <- (I - r s y') H (I - r y s') + r s s'.
      const double rho = 1.0 / sy;
      std::vector<double> Hy(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) Hy[i] += H[i * n + j] * y[j];
      }
      double yHy = 0.0;
      for (std::size_t i = 0; i < n; ++i) yHy += y[i] * Hy[i];
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          H[i * n + j] += -rho * (Hy[i] * s[j] + s[i] * Hy[j]) + (rho * rho * yHy + rho) * s[i] * s[j];
        }
      }
      identity_H = false;
    }
    if (step_size < 1e-14 && std::abs(fprev - fz) < 1e-16) break;
  }
  if (it < cfg_.max_iterations && !sol.converged) {
    // Line search stalled: accept as stationary only if the projected
    // gradient is within tolerance, otherwise report non-convergence.
    sol.projected_gradient_norm = inf_norm(projected_gradient(z, g));
    sol.converged = sol.projected_gradient_norm < cfg_.tolerance;
  }
  sol.iterations = it;

  sol.plan = unpack(z);
  sol.penalized_objective = fz;
  sol.objective = evaluate(x_meas, theta_hat, sol.plan);
  sol.predicted = predict(x_meas, theta_hat, sol.plan);
  if (cfg_.lyapunov) sol.mode = mode_residual(x_meas, theta_hat, *cfg_.lyapunov, sol.plan);
  active_mode_ = LyapunovMode::off;
  return sol;
}

}  // namespace rlempc
