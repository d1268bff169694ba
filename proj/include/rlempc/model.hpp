#pragma once

// Dimensionless ethylene-oxide CSTR (Ozgulsen et al. form).
//
// States  x = [x1 x2 x3 x4]: gas density, ethylene concentration,
//         ethylene-oxide concentration and temperature, each scaled by a
//         feed/reference value.
// Inputs  u = [u1 u2 u3]: feed rate, feed ethylene concentration and
//         coolant temperature.
// Kinetic multipliers theta = [theta1..theta6]: theta1..theta3 scale the
// activation-energy groups gamma_i inside the Arrhenius exponentials and
// theta4..theta6 scale the pre-exponential groups A_i.
//
//   dx1/dt = u1 (1 - x1 x4)
//   dx2/dt = u1 (u2 - x2 x4) - r1 - r2
//   dx3/dt = -u1 x3 x4 + r1 - r3
//   dx4/dt = u1/x1 (1 - x4) + [B1 e1 (x2 x4)^0.5 + B2 e2 (x2 x4)^0.25
//            + B3 e3 (x3 x4)^0.5 - B4 (x4 - u3)] / x1
//
// with r1 = A1 theta4 exp(gamma1 theta1 / x4) (x2 x4)^0.5,
//      r2 = A2 theta5 exp(gamma2 theta2 / x4) (x2 x4)^0.25,
//      r3 = A3 theta6 exp(gamma3 theta3 / x4) (x3 x4)^0.5,
//      ei = exp(gamma_i / x4).
//
// The heat-release terms use the nominal kinetics. The coolant term carries
// a minus sign (heat flows from reactor to jacket when x4 > u3).
//
// Because gamma_i < 0, raising an activation energy E_i by 5% corresponds to
// theta_i = 1.05 (a more negative exponent).

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace rlempc {

inline constexpr std::size_t kStateDim = 4;
inline constexpr std::size_t kParamDim = 6;
inline constexpr std::size_t kInputDim = 3;

using StateRate = std::array<double, kStateDim>;

/// Raised when the model is evaluated outside its domain (negative
/// concentrations under a fractional power, non-positive density or
/// temperature, non-finite values).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct PlantState {
  std::array<double, kStateDim> x{};

  double& operator[](std::size_t i) { return x[i]; }
  double operator[](std::size_t i) const { return x[i]; }
  bool operator==(const PlantState&) const = default;

  /// Reported operating point [0.998, 0.432, 0.0292, 1.002].
  static PlantState reported_steady_state() { return {{0.998, 0.432, 0.0292, 1.002}}; }

  bool valid() const;
};

struct ControlInput {
  std::array<double, kInputDim> u{};

  double& operator[](std::size_t i) { return u[i]; }
  double operator[](std::size_t i) const { return u[i]; }
  bool operator==(const ControlInput&) const = default;

  /// u_s = [0.2, 0.5, 1.0].
  static ControlInput steady_state() { return {{0.2, 0.5, 1.0}}; }
};

/// Per-channel input box U = [lower, upper].
struct InputBox {
  ControlInput lower{{0.071, 0.25, 0.6}};
  ControlInput upper{{0.71, 2.5, 1.4}};

  ControlInput clip(const ControlInput& u) const;
  bool contains(const ControlInput& u, double tol = 0.0) const;
  void validate() const;
};

struct ParamBounds {
  double lower = 0.9;
  double upper = 1.1;

  double midpoint() const { return 0.5 * (lower + upper); }
  double half_width() const { return 0.5 * (upper - lower); }
  void validate() const;
};

struct KineticParams {
  std::array<double, kParamDim> theta{1.0, 1.0, 1.0, 1.0, 1.0, 1.0};

  double& operator[](std::size_t i) { return theta[i]; }
  double operator[](std::size_t i) const { return theta[i]; }
  bool operator==(const KineticParams&) const = default;

  static KineticParams nominal() { return {}; }
  bool within(const ParamBounds& b) const;
};

/// Additive state-rate perturbation d with its admissible bound delta.
struct Disturbance {
  StateRate d{};
  double delta_bound = 0.0;

  double norm() const;
  bool admissible() const { return norm() <= delta_bound; }
};

struct ModelConstants {
  std::array<double, 3> gamma{-8.13, -7.12, -11.07};
  std::array<double, 3> A{92.80, 12.66, 2417.71};
  std::array<double, 4> B{7.32, 10.39, 2170.57, 7.02};

  void validate() const;
};

/// Right-hand side of the dimensionless CSTR. Pure and re-entrant.
class CstrModel {
 public:
  CstrModel() = default;
  explicit CstrModel(ModelConstants c);

  const ModelConstants& constants() const { return c_; }

  StateRate rhs(const PlantState& x, const KineticParams& theta, const ControlInput& u,
                const StateRate& d = {}) const;

 private:
  ModelConstants c_{};
};

/// Convenience wrapper using the tabulated constants.
StateRate eval_rhs(const PlantState& x, const KineticParams& theta, const ControlInput& u,
                   const Disturbance& d = {});

/// Plant-side kinetics after `step` catalyst-deactivation steps (0..5). Each
/// step moves E1, k2, k3 up and k1, E2, E3 down by 1%.
KineticParams kinetic_schedule(int step);

inline constexpr int kDeactivationSteps = 5;

std::string to_string(const PlantState& x);

}  // namespace rlempc
