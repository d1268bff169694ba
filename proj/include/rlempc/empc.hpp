#pragma once

// Receding-horizon economic MPC by direct single shooting over held inputs.
//
// The decision vector holds the manipulated channels of N piecewise-constant
// inputs. The prediction model is the CSTR with the estimated kinetics and no
// disturbance, discretized with explicit Euler. Optional Lyapunov two-mode
// constraints enter as exact penalties and are re-checked on the result.

#include <optional>
#include <string>
#include <vector>

#include "rlempc/model.hpp"
#include "rlempc/stability.hpp"

namespace rlempc {

enum class StageCostKind { yield_numerator, yield_per_feed };

std::string to_string(StageCostKind k);
StageCostKind parse_stage_cost(const std::string& s);

/// Economic value rate (to be maximized): u1 x3 x4 or x3 x4 / u2.
double stage_cost(const PlantState& x, const ControlInput& u, StageCostKind kind);

struct EmpcConfig {
  int horizon = 10;
  double sampling_period = 1.0;
  double model_step = 0.01;
  std::vector<int> manipulated{2};
  InputBox bounds;
  /// Values used for channels that are not manipulated.
  ControlInput nominal_input = ControlInput::steady_state();
  StageCostKind stage_cost = StageCostKind::yield_numerator;
  int max_iterations = 200;
  double tolerance = 1e-6;
  double fd_step = 1e-7;
  double lyapunov_penalty = 1e4;
  std::optional<StabilityCertificate> lyapunov;

  /// Box actually seen by the optimizer: non-manipulated channels collapse to
  /// their nominal value.
  InputBox effective_bounds() const;
  int substeps_per_period() const;
  void validate() const;
};

struct ControlPlan {
  std::vector<ControlInput> inputs;

  std::size_t size() const { return inputs.size(); }
  const ControlInput& front() const { return inputs.front(); }
};

enum class LyapunovMode { off = 0, contract_region = 1, decrease = 2 };

struct ModeResidual {
  LyapunovMode mode = LyapunovMode::off;
  /// <= 0 means the constraint holds.
  double residual = 0.0;
};

struct EmpcSolution {
  ControlPlan plan;
  /// Predicted states at t_k, ..., t_{k+N}; element 1 is the one-period
  /// prediction under the first input.
  std::vector<PlantState> predicted;
  /// Horizon integral of -stage_cost (no penalty terms).
  double objective = 0.0;
  double penalized_objective = 0.0;
  int iterations = 0;
  bool converged = false;
  double projected_gradient_norm = 0.0;
  ModeResidual mode;
};

class EmpcSolver {
 public:
  EmpcSolver(CstrModel model, EmpcConfig cfg);

  /// Solves the horizon problem from the measured state. The returned
  /// objective is never worse than the best seed (warm start, coarse constant
  /// grid, nominal input, and h(x) when the Lyapunov layer is on).
  /// Throws std::invalid_argument for an infeasible configuration.
  EmpcSolution solve(const PlantState& x_meas, const KineticParams& theta_hat,
                     const ControlPlan* warm_start = nullptr);

  /// Horizon objective of a given plan (no penalty).
  double evaluate(const PlantState& x, const KineticParams& theta, const ControlPlan& plan) const;
  std::vector<PlantState> predict(const PlantState& x, const KineticParams& theta,
                                  const ControlPlan& plan) const;
  PlantState predict_one_period(const PlantState& x, const KineticParams& theta,
                                const ControlInput& u) const;

  ModeResidual mode_residual(const PlantState& x_meas, const KineticParams& theta,
                             const StabilityCertificate& cert, const ControlPlan& plan) const;

  ControlPlan constant_plan(const ControlInput& u) const;
  /// Drops the first element and repeats the last.
  ControlPlan shifted(const ControlPlan& plan) const;

  const EmpcConfig& config() const { return cfg_; }
  const CstrModel& model() const { return model_; }

 private:
  struct Rollout {
    double cost = 0.0;
    double penalty = 0.0;
    bool ok = true;
  };

  ControlPlan unpack(const std::vector<double>& z) const;
  std::vector<double> pack(const ControlPlan& plan) const;
  Rollout rollout_from(int period, PlantState x, const KineticParams& theta, const ControlPlan& plan,
                       std::vector<PlantState>* starts, std::vector<double>* cost_prefix,
                       std::vector<double>* penalty_prefix) const;
  double penalized(const PlantState& x, const KineticParams& theta, const std::vector<double>& z,
                   std::vector<PlantState>* starts, std::vector<double>* cost_prefix,
                   std::vector<double>* penalty_prefix) const;
  std::vector<double> gradient(const PlantState& x, const KineticParams& theta,
                               const std::vector<double>& z, double f0) const;

  CstrModel model_;
  EmpcConfig cfg_;
  InputBox box_;
  int steps_per_period_;
  // Mode fixed for the duration of one solve.
  LyapunovMode active_mode_ = LyapunovMode::off;
  double mode2_reference_ = 0.0;
  PlantState mode2_state_{};
};

/// Residual of the active Lyapunov mode for `plan` from `x_meas`:
/// mode 1 (V(x_meas) <= rho_e): max over the predicted horizon of V - rho_e;
/// mode 2: dV/dx f(x, theta, u_0) - dV/dx f(x, theta, h(x)).
ModeResidual apply_mode_constraint(const CstrModel& model, const EmpcConfig& cfg,
                                   const PlantState& x_meas, const KineticParams& theta_hat,
                                   const StabilityCertificate& cert, const ControlPlan& plan);

}  // namespace rlempc
