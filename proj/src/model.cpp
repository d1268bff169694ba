#include "rlempc/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rlempc {

bool PlantState::valid() const {
  for (double v : x) {
    if (!std::isfinite(v)) return false;
  }
  return x[0] > 0.0 && x[3] > 0.0 && x[1] >= 0.0 && x[2] >= 0.0;
}

void ParamBounds::validate() const {
  if (!(std::isfinite(lower) && std::isfinite(upper) && lower > 0.0 && lower < upper)) {
    throw std::invalid_argument("parameter bounds must satisfy 0 < lower < upper");
  }
}

bool KineticParams::within(const ParamBounds& b) const {
  for (double t : theta) {
    if (!(t >= b.lower && t <= b.upper)) return false;
  }
  return true;
}

ControlInput InputBox::clip(const ControlInput& u) const {
  ControlInput c = u;
  for (std::size_t i = 0; i < kInputDim; ++i) c[i] = std::clamp(u[i], lower[i], upper[i]);
  return c;
}

bool InputBox::contains(const ControlInput& u, double tol) const {
  for (std::size_t i = 0; i < kInputDim; ++i) {
    if (u[i] < lower[i] - tol || u[i] > upper[i] + tol) return false;
  }
  return true;
}

void InputBox::validate() const {
  for (std::size_t i = 0; i < kInputDim; ++i) {
    if (!(lower[i] <= upper[i])) {
      throw std::invalid_argument("input box: empty interval for u" + std::to_string(i + 1));
    }
  }
}

double Disturbance::norm() const {
  double s = 0.0;
  for (double v : d) s += v * v;
  return std::sqrt(s);
}

void ModelConstants::validate() const {
  for (double g : gamma) {
    if (!(g < 0.0)) throw std::invalid_argument("model constants: gamma_i must be negative");
  }
  for (double a : A) {
    if (!std::isfinite(a)) throw std::invalid_argument("model constants: A_i must be finite");
  }
  for (double b : B) {
    if (!std::isfinite(b)) throw std::invalid_argument("model constants: B_i must be finite");
  }
}

CstrModel::CstrModel(ModelConstants c) : c_(c) { c_.validate(); }

StateRate CstrModel::rhs(const PlantState& s, const KineticParams& th, const ControlInput& in,
                         const StateRate& d) const {
  const double x1 = s[0], x2 = s[1], x3 = s[2], x4 = s[3];
  const double u1 = in[0], u2 = in[1], u3 = in[2];

  if (!(x1 > 0.0) || !(x4 > 0.0)) {
    throw DomainError("eval_rhs: density and temperature must be positive (" + to_string(s) + ")");
  }
  const double ex = x2 * x4;
  const double eox = x3 * x4;
  if (ex < 0.0 || eox < 0.0 || !std::isfinite(ex) || !std::isfinite(eox)) {
    throw DomainError("eval_rhs: negative concentration under fractional power (" + to_string(s) +
                      ")");
  }

  const auto& g = c_.gamma;
  const auto& A = c_.A;
  const auto& B = c_.B;

  const double sq_e = std::sqrt(ex);
  const double qr_e = std::sqrt(sq_e);
  const double sq_eo = std::sqrt(eox);
  const double inv_x4 = 1.0 / x4;

  const double r1 = A[0] * th[3] * std::exp(g[0] * th[0] * inv_x4) * sq_e;
  const double r2 = A[1] * th[4] * std::exp(g[1] * th[1] * inv_x4) * qr_e;
  const double r3 = A[2] * th[5] * std::exp(g[2] * th[2] * inv_x4) * sq_eo;

  const double heat = B[0] * std::exp(g[0] * inv_x4) * sq_e + B[1] * std::exp(g[1] * inv_x4) * qr_e +
                      B[2] * std::exp(g[2] * inv_x4) * sq_eo - B[3] * (x4 - u3);

  StateRate f;
  f[0] = u1 * (1.0 - x1 * x4);
  f[1] = u1 * (u2 - ex) - r1 - r2;
  f[2] = -u1 * eox + r1 - r3;
  f[3] = (u1 * (1.0 - x4) + heat) / x1;
  for (std::size_t i = 0; i < kStateDim; ++i) f[i] += d[i];
  return f;
}

StateRate eval_rhs(const PlantState& x, const KineticParams& theta, const ControlInput& u,
                   const Disturbance& d) {
  static const CstrModel model{};
  return model.rhs(x, theta, u, d.d);
}

KineticParams kinetic_schedule(int step) {
  if (step < 0 || step > kDeactivationSteps) {
    throw std::out_of_range("kinetic_schedule: step must be in 0..5, got " + std::to_string(step));
  }
  // E1 up, E2 down, E3 down, k1 down, k2 up, k3 up.
  static constexpr std::array<double, kParamDim> direction{+1, -1, -1, -1, +1, +1};
  KineticParams p;
  for (std::size_t i = 0; i < kParamDim; ++i) p[i] = 1.0 + direction[i] * 0.01 * step;
  return p;
}

std::string to_string(const PlantState& x) {
  std::ostringstream os;
  os << "[" << x[0] << ", " << x[1] << ", " << x[2] << ", " << x[3] << "]";
  return os.str();
}

}  // namespace rlempc
