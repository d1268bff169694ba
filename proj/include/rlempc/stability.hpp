#pragma once

// Lyapunov certificate for the CSTR and numeric monitors for the bounds used
// in the closed-loop stability argument. Everything here is sampled: a
// monitor can refute a bound on the samples it sees, it never proves one.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "rlempc/model.hpp"

namespace rlempc {

/// Quadratic Lyapunov function V(x) = (x - x_c)' P (x - x_c), saturated linear
/// feedback h(x) = clip(u_c + K (x - x_c)) and the nested level sets
/// Omega_rho_s within Omega_rho_e within Omega_rho.
struct StabilityCertificate {
  PlantState center;
  ControlInput center_input;
  Eigen::Matrix4d P = Eigen::Matrix4d::Identity();
  Eigen::Matrix<double, 3, 4> K = Eigen::Matrix<double, 3, 4>::Zero();
  InputBox bounds;
  double rho = 1.0;
  double rho_e = 0.5;
  double rho_s = 0.01;
  /// alpha3(r) = alpha3_coeff * r^2, the sampled minimum decrease rate under h.
  double alpha3_coeff = 0.0;

  double V(const PlantState& x) const;
  StateRate gradient(const PlantState& x) const;
  ControlInput h(const PlantState& x) const;
  bool inside(const PlantState& x, double level) const { return V(x) <= level; }

  double lambda_min() const;
  double lambda_max() const;

  double alpha1(double r) const { return lambda_min() * r * r; }
  double alpha2(double r) const { return lambda_max() * r * r; }
  double alpha3(double r) const { return alpha3_coeff * r * r; }
  double alpha4(double r) const { return 2.0 * lambda_max() * r; }
  double alpha1_inv(double s) const;
  double alpha2_inv(double s) const;

  /// Lie derivative dV/dx * f(x, theta, u, 0).
  double lie_derivative(const CstrModel& model, const PlantState& x, const KineticParams& theta,
                        const ControlInput& u) const;

  /// Throws std::invalid_argument unless P is symmetric positive definite and
  /// rho > rho_e > rho_s > 0.
  void validate() const;
};

/// Uniform sample from the ellipsoid {V(x) <= level}.
PlantState sample_in_level_set(const StabilityCertificate& cert, double level, std::mt19937_64& rng);

/// Newton solve of f(x, theta, u, 0) = 0 started from `guess`.
PlantState find_equilibrium(const CstrModel& model, const KineticParams& theta, const ControlInput& u,
                            const PlantState& guess);

struct CertificateOptions {
  KineticParams theta = KineticParams::nominal();
  ControlInput center_input = ControlInput::steady_state();
  InputBox bounds;
  /// Channels h acts on (0-based). Default: coolant temperature only.
  std::vector<int> manipulated{2};
  double sampling_period = 1.0;
  /// Initial level is `initial_rho_scale` times V(reported steady state), so
  /// the reported initial condition starts inside the candidate region.
  double initial_rho_scale = 4.0;
  double shrink_factor = 0.8;
  int max_shrinks = 60;
  int samples = 4000;
  double rho_s_fraction = 0.02;
  double rho_e_fraction = 0.5;
  std::uint64_t seed = 7;
};

/// Builds P and K from the linearization at the nominal equilibrium (discrete
/// LQR gain, continuous Lyapunov equation for the closed loop) and shrinks rho
/// until the sampled decrease condition holds on Omega_rho.
StabilityCertificate build_certificate(const CstrModel& model, const CertificateOptions& opt = {});

/// Number of sampled states in Omega_rho \ {center} where the closed loop under
/// h fails to decrease V.
int count_decrease_violations(const StabilityCertificate& cert, const CstrModel& model,
                              const KineticParams& theta, int samples, std::uint64_t seed);

using VectorField = std::function<StateRate(const PlantState&, const KineticParams&,
                                            const ControlInput&, const StateRate&)>;

VectorField model_field(const CstrModel& model);

struct LipschitzEstimates {
  double M = 0.0;
  double L_x = 0.0;
  double L_theta = 0.0;
  double L_d = 0.0;
  double Ls_x = 0.0;
  double Ls_theta = 0.0;
  double Ls_d = 0.0;
  double delta = 0.0;
  double beta = 0.0;
  double nu = 0.0;
  double eps_s = 0.0;
  double inflation = 1.5;
  /// Sampled maxima before inflation.
  double raw_M = 0.0, raw_L_x = 0.0, raw_L_theta = 0.0, raw_L_d = 0.0;
  double raw_Ls_x = 0.0, raw_Ls_theta = 0.0, raw_Ls_d = 0.0;
};

struct EstimationOptions {
  int samples = 2000;
  std::uint64_t seed = 11;
  double delta = 0.01;
  ParamBounds theta_bounds;
  double inflation = 1.5;
  /// Estimation-error bound beta. Negative: estimate it as the largest
  /// one-period gap between the RK4 plant and the Euler(0.01) model with
  /// identical kinetics, sampled over Omega_rho.
  double beta = -1.0;
  double sampling_period = 1.0;
  /// Decrease margin eps_s. Negative: half of alpha3(alpha2^-1(rho_s)).
  double eps_s = -1.0;
};

/// Monte-Carlo estimates of the bounding constants over Omega_rho, the
/// kinetic box and the input box. Deterministic under the seed; the first n
/// samples do not depend on the total sample count.
LipschitzEstimates estimate_constants(const StabilityCertificate& cert, const VectorField& f,
                                      const EstimationOptions& opt = {});

enum class Prop1Variant { as_printed, lx_only };

/// f_d(tau) = L_d delta / (L_x L_theta) (exp(L_x L_theta tau) - 1); the
/// lx_only variant drops L_theta from both places.
double prop1_bound(double tau, const LipschitzEstimates& est,
                   Prop1Variant variant = Prop1Variant::as_printed);

struct Prop2Result {
  /// beta exp(L_x t) - |x - x~|
  double growth_residual = 0.0;
  /// V(x~) + alpha4(alpha1^-1(rho)) |x - x~| + nu |x - x~|^2 - V(x)
  double lyapunov_residual = 0.0;
  bool growth_ok() const { return growth_residual >= 0.0; }
  bool lyapunov_ok() const { return lyapunov_residual >= 0.0; }
};

Prop2Result prop2_checks(const PlantState& x, const PlantState& x_tilde, double t,
                         const StabilityCertificate& cert, const LipschitzEstimates& est);

struct Prop3Result {
  double lhs = 0.0;
  double eps_s = 0.0;
  bool satisfied = false;
};

/// lhs = -alpha3(alpha2^-1(rho_s)) + Ls_x (beta + M Delta); satisfied when
/// lhs <= -eps_s, which is what yields dV/dt <= -eps_s.
Prop3Result prop3_margin(const StabilityCertificate& cert, const LipschitzEstimates& est, double delta_t);

/// rho - alpha4(alpha1^-1(rho)) beta e^{L_x Delta} - nu (beta e^{L_x Delta})^2.
/// Throws std::domain_error when the result does not exceed rho_s.
double theorem1_rho_e(const StabilityCertificate& cert, const LipschitzEstimates& est, double delta_t);

struct PairCheckOptions {
  /// Pairs to check; draws continue until this many contributed a point.
  int pairs = 100;
  /// Give up after max_attempts_factor * pairs draws.
  int max_attempts_factor = 50;
  std::uint64_t seed = 23;
  double horizon = 1.0;
  double step_size = 0.01;
  ParamBounds theta_bounds;
  /// Hold h(x0) over the pair; otherwise a uniform draw from the input box.
  bool feedback_input = true;
};

/// Outcome of replaying seeded trajectory pairs against a bound. A pair is
/// followed only while both states stay in Omega_rho and the model domain,
/// since the bounds assume that; draws that leave before the first step are
/// counted as skipped.
struct PairCheckSummary {
  int pairs = 0;
  int skipped = 0;
  int points = 0;
  int violations = 0;
  /// Smallest (bound - observed) over all checked points.
  double worst_margin = 0.0;
};

/// Nominal vs constantly disturbed (|d| = delta) RK4 trajectories from the same
/// state, kinetics and held input: |x_n(t) - x_d(t)| <= f_d(t) at every step.
PairCheckSummary check_prop1_pairs(const StabilityCertificate& cert, const CstrModel& model,
                                   const LipschitzEstimates& est, Prop1Variant variant,
                                   const PairCheckOptions& opt = {});

/// Two RK4 trajectories starting beta apart: both the gap-growth and the
/// Lyapunov upper-bound inequalities at every step.
PairCheckSummary check_prop2_pairs(const StabilityCertificate& cert, const CstrModel& model,
                                   const LipschitzEstimates& est, const PairCheckOptions& opt = {});

}  // namespace rlempc
