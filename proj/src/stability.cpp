#include "rlempc/stability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unsupported/Eigen/MatrixFunctions>

namespace rlempc {

namespace {

Eigen::Vector4d to_vec(const PlantState& x) { return {x[0], x[1], x[2], x[3]}; }

PlantState to_state(const Eigen::Vector4d& v) { return {{v(0), v(1), v(2), v(3)}}; }

Eigen::Vector4d to_vec(const StateRate& r) { return {r[0], r[1], r[2], r[3]}; }

double norm(const StateRate& r) { return to_vec(r).norm(); }

double distance(const KineticParams& a, const KineticParams& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < kParamDim; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

StateRate difference(const StateRate& a, const StateRate& b) {
  StateRate d{};
  for (std::size_t i = 0; i < kStateDim; ++i) d[i] = a[i] - b[i];
  return d;
}

double dot(const StateRate& a, const StateRate& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < kStateDim; ++i) s += a[i] * b[i];
  return s;
}

Eigen::Matrix4d jacobian_x(const CstrModel& model, const PlantState& x, const KineticParams& th,
                           const ControlInput& u) {
  Eigen::Matrix4d J;
  for (std::size_t j = 0; j < kStateDim; ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[j]));
    PlantState xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    const Eigen::Vector4d fp = to_vec(model.rhs(xp, th, u));
    const Eigen::Vector4d fm = to_vec(model.rhs(xm, th, u));
    J.col(static_cast<Eigen::Index>(j)) = (fp - fm) / (2.0 * h);
  }
  return J;
}

Eigen::Vector4d jacobian_u(const CstrModel& model, const PlantState& x, const KineticParams& th,
                           const ControlInput& u, int channel) {
  const double h = 1e-6;
  ControlInput up = u, um = u;
  up[channel] += h;
  um[channel] -= h;
  return (to_vec(model.rhs(x, th, up)) - to_vec(model.rhs(x, th, um))) / (2.0 * h);
}

/// Solves A' P + P A = -Q for symmetric P.
Eigen::Matrix4d solve_continuous_lyapunov(const Eigen::Matrix4d& A, const Eigen::Matrix4d& Q) {
  Eigen::Matrix<double, 16, 16> L = Eigen::Matrix<double, 16, 16>::Zero();
  // vec(A'P + PA) with column-major vec: (I kron A' + A' kron I) vec(P).
  const Eigen::Matrix4d At = A.transpose();
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      for (int k = 0; k < 4; ++k) {
        L(4 * j + i, 4 * j + k) += At(i, k);  // (A' P)_{ij} = sum_k A'_{ik} P_{kj}
        L(4 * j + i, 4 * k + i) += A(k, j);   // (P A)_{ij} = sum_k P_{ik} A_{kj}
      }
    }
  }
  Eigen::Matrix<double, 16, 1> rhs;
  for (int j = 0; j < 4; ++j) {
    for (int i = 0; i < 4; ++i) rhs(4 * j + i) = -Q(i, j);
  }
  const Eigen::Matrix<double, 16, 1> p = L.fullPivLu().solve(rhs);
  Eigen::Matrix4d P;
  for (int j = 0; j < 4; ++j) {
    for (int i = 0; i < 4; ++i) P(i, j) = p(4 * j + i);
  }
  return 0.5 * (P + P.transpose());
}

PlantState random_in_box_around(const PlantState& c, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  PlantState y = c;
  for (std::size_t i = 0; i < kStateDim; ++i) y[i] += scale * n(rng);
  return y;
}

KineticParams random_theta(const ParamBounds& b, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(b.lower, b.upper);
  KineticParams t;
  for (auto& v : t.theta) v = uni(rng);
  return t;
}

ControlInput random_input(const InputBox& box, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  ControlInput u;
  for (std::size_t i = 0; i < kInputDim; ++i) {
    u[i] = box.lower[i] + uni(rng) * (box.upper[i] - box.lower[i]);
  }
  return u;
}

}  // namespace

double StabilityCertificate::V(const PlantState& x) const {
  const Eigen::Vector4d e = to_vec(x) - to_vec(center);
  return e.dot(P * e);
}

StateRate StabilityCertificate::gradient(const PlantState& x) const {
  const Eigen::Vector4d g = 2.0 * P * (to_vec(x) - to_vec(center));
  return {g(0), g(1), g(2), g(3)};
}

ControlInput StabilityCertificate::h(const PlantState& x) const {
  const Eigen::Vector3d du = K * (to_vec(x) - to_vec(center));
  ControlInput u = center_input;
  for (std::size_t i = 0; i < kInputDim; ++i) u[i] += du(static_cast<Eigen::Index>(i));
  return bounds.clip(u);
}

double StabilityCertificate::lambda_min() const {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(P, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

double StabilityCertificate::lambda_max() const {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(P, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(3);
}

double StabilityCertificate::alpha1_inv(double s) const { return std::sqrt(std::max(0.0, s) / lambda_min()); }

double StabilityCertificate::alpha2_inv(double s) const { return std::sqrt(std::max(0.0, s) / lambda_max()); }

double StabilityCertificate::lie_derivative(const CstrModel& model, const PlantState& x,
                                            const KineticParams& theta, const ControlInput& u) const {
  return dot(gradient(x), model.rhs(x, theta, u));
}

void StabilityCertificate::validate() const {
  if (!P.isApprox(P.transpose(), 1e-9)) throw std::invalid_argument("certificate: P is not symmetric");
  if (!(lambda_min() > 0.0)) throw std::invalid_argument("certificate: P is not positive definite");
  if (!(rho > rho_e && rho_e > rho_s && rho_s > 0.0)) {
    throw std::invalid_argument("certificate: level sets must satisfy rho > rho_e > rho_s > 0");
  }
  bounds.validate();
}

PlantState sample_in_level_set(const StabilityCertificate& cert, double level, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Eigen::Vector4d z(n(rng), n(rng), n(rng), n(rng));
  const double r = std::pow(uni(rng), 0.25) * std::sqrt(level);
  z *= r / z.norm();
  // V = e' P e = |L' e|^2 with P = L L'.
  const Eigen::LLT<Eigen::Matrix4d> llt(cert.P);
  const Eigen::Vector4d e = llt.matrixU().solve(z);
  return to_state(to_vec(cert.center) + e);
}

PlantState find_equilibrium(const CstrModel& model, const KineticParams& theta, const ControlInput& u,
                            const PlantState& guess) {
  PlantState x = guess;
  for (int it = 0; it < 100; ++it) {
    const Eigen::Vector4d f = to_vec(model.rhs(x, theta, u));
    if (f.norm() < 1e-13) break;
    const Eigen::Matrix4d J = jacobian_x(model, x, theta, u);
    Eigen::Vector4d step = J.fullPivLu().solve(-f);
    double t = 1.0;
    for (int ls = 0; ls < 30; ++ls) {
      const PlantState trial = to_state(to_vec(x) + t * step);
      if (trial.valid() && to_vec(model.rhs(trial, theta, u)).norm() < f.norm()) {
        x = trial;
        break;
      }
      t *= 0.5;
      if (ls == 29) throw DomainError("find_equilibrium: line search failed");
    }
  }
  return x;
}

int count_decrease_violations(const StabilityCertificate& cert, const CstrModel& model,
                              const KineticParams& theta, int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  int bad = 0;
  for (int i = 0; i < samples; ++i) {
    const PlantState x = sample_in_level_set(cert, cert.rho, rng);
    if (!x.valid() || x[1] <= 0.0 || x[2] <= 0.0) {
      ++bad;
      continue;
    }
    if (cert.V(x) <= 1e-14) continue;
    if (!(cert.lie_derivative(model, x, theta, cert.h(x)) < 0.0)) ++bad;
  }
  return bad;
}

StabilityCertificate build_certificate(const CstrModel& model, const CertificateOptions& opt) {
  StabilityCertificate cert;
  cert.center_input = opt.center_input;
  cert.center = find_equilibrium(model, opt.theta, opt.center_input, PlantState::reported_steady_state());

  // Input box: channels h does not manipulate stay at the center input.
  cert.bounds = opt.bounds;
  for (std::size_t i = 0; i < kInputDim; ++i) {
    if (std::find(opt.manipulated.begin(), opt.manipulated.end(), static_cast<int>(i)) ==
        opt.manipulated.end()) {
      cert.bounds.lower[i] = cert.bounds.upper[i] = opt.center_input[i];
    }
  }

  const Eigen::Matrix4d A = jacobian_x(model, cert.center, opt.theta, opt.center_input);
  const int m = static_cast<int>(opt.manipulated.size());
  Eigen::MatrixXd B(4, m);
  for (int j = 0; j < m; ++j) {
    B.col(j) = jacobian_u(model, cert.center, opt.theta, opt.center_input, opt.manipulated[j]);
  }

  // Zero-order-hold discretization via the augmented exponential.
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(4 + m, 4 + m);
  aug.topLeftCorner(4, 4) = A * opt.sampling_period;
  aug.topRightCorner(4, m) = B * opt.sampling_period;
  const Eigen::MatrixXd expm = aug.exp();
  const Eigen::Matrix4d Ad = expm.topLeftCorner(4, 4);
  const Eigen::MatrixXd Bd = expm.topRightCorner(4, m);

  // Weights on relative deviations.
  Eigen::Matrix4d Q = Eigen::Matrix4d::Zero();
  for (int i = 0; i < 4; ++i) Q(i, i) = 1.0 / (cert.center[i] * cert.center[i]);
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(m, m);
  for (int j = 0; j < m; ++j) {
    const double s = opt.center_input[opt.manipulated[j]];
    R(j, j) = 1.0 / (s * s);
  }

  Eigen::Matrix4d S = Q;
  Eigen::MatrixXd Klqr = Eigen::MatrixXd::Zero(m, 4);
  for (int it = 0; it < 20000; ++it) {
    const Eigen::MatrixXd G = R + Bd.transpose() * S * Bd;
    Klqr = G.ldlt().solve(Bd.transpose() * S * Ad);
    const Eigen::Matrix4d next = Q + Ad.transpose() * S * Ad - Ad.transpose() * S * Bd * Klqr;
    const double change = (next - S).norm();
    S = 0.5 * (next + next.transpose());
    if (change < 1e-12 * std::max(1.0, S.norm())) break;
  }
  cert.K.setZero();
  for (int j = 0; j < m; ++j) cert.K.row(opt.manipulated[j]) = -Klqr.row(j);

  const Eigen::Matrix4d Acl = A + B * (-Klqr);
  cert.P = solve_continuous_lyapunov(Acl, Q);

  double rho = opt.initial_rho_scale * cert.V(PlantState::reported_steady_state());
  std::mt19937_64 rng(opt.seed);
  bool ok = false;
  for (int shrink = 0; shrink <= opt.max_shrinks && !ok; ++shrink) {
    cert.rho = rho;
    ok = true;
    double alpha3 = std::numeric_limits<double>::infinity();
    std::mt19937_64 local(rng());
    for (int i = 0; i < opt.samples; ++i) {
      // Half the samples on the outer shell, where violations appear first.
      PlantState x = sample_in_level_set(cert, rho, local);
      if (i % 2 == 1) {
        const double v = cert.V(x);
        const double target = rho * (0.98 + 0.02 * (i % 7) / 7.0);
        if (v > 0.0) x = to_state(to_vec(cert.center) + std::sqrt(target / v) * (to_vec(x) - to_vec(cert.center)));
      }
      if (!x.valid() || x[1] <= 0.0 || x[2] <= 0.0) {
        ok = false;
        break;
      }
      const Eigen::Vector4d e = to_vec(x) - to_vec(cert.center);
      if (e.squaredNorm() < 1e-16) continue;
      const double vdot = cert.lie_derivative(model, x, opt.theta, cert.h(x));
      if (!(vdot < 0.0)) {
        ok = false;
        break;
      }
      alpha3 = std::min(alpha3, -vdot / e.squaredNorm());
    }
    if (ok) {
      cert.alpha3_coeff = alpha3;
    } else {
      rho *= opt.shrink_factor;
    }
  }
  if (!ok) throw std::runtime_error("build_certificate: no level set passed the sampled decrease check");

  cert.rho_s = opt.rho_s_fraction * cert.rho;
  cert.rho_e = opt.rho_e_fraction * cert.rho;
  cert.validate();
  return cert;
}

VectorField model_field(const CstrModel& model) {
  return [model](const PlantState& x, const KineticParams& th, const ControlInput& u, const StateRate& d) {
    return model.rhs(x, th, u, d);
  };
}

LipschitzEstimates estimate_constants(const StabilityCertificate& cert, const VectorField& f,
                                      const EstimationOptions& opt) {
  LipschitzEstimates est;
  est.delta = opt.delta;
  est.inflation = opt.inflation;
  est.nu = cert.lambda_max();

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double radius = std::sqrt(cert.rho / cert.lambda_min());
  const StateRate zero{};

  for (int i = 0; i < opt.samples; ++i) {
    // Draw every random quantity up front so the stream does not depend on
    // which evaluations succeed.
    const PlantState x = sample_in_level_set(cert, cert.rho, rng);
    PlantState xp = (i % 2 == 0) ? random_in_box_around(x, 1e-3 * radius, rng)
                                 : sample_in_level_set(cert, cert.rho, rng);
    const KineticParams th = random_theta(opt.theta_bounds, rng);
    const KineticParams thp = random_theta(opt.theta_bounds, rng);
    const ControlInput u = random_input(cert.bounds, rng);
    StateRate d{};
    {
      double dn = 0.0;
      for (auto& v : d) {
        v = n(rng);
        dn += v * v;
      }
      const double scale = opt.delta * uni(rng) / std::max(std::sqrt(dn), 1e-300);
      for (auto& v : d) v *= scale;
    }

    try {
      const StateRate fx = f(x, th, u, zero);
      const StateRate fxd = f(x, th, u, d);
      const StateRate gradx = cert.gradient(x);
      est.raw_M = std::max(est.raw_M, norm(fxd));

      const double dd = norm(d);
      if (dd > 0.0) {
        est.raw_L_d = std::max(est.raw_L_d, norm(difference(fxd, fx)) / dd);
        est.raw_Ls_d = std::max(est.raw_Ls_d, std::abs(dot(gradx, fxd) - dot(gradx, fx)) / dd);
      }

      const double dth = distance(th, thp);
      if (dth > 0.0) {
        const StateRate fth = f(x, thp, u, zero);
        est.raw_L_theta = std::max(est.raw_L_theta, norm(difference(fx, fth)) / dth);
        est.raw_Ls_theta = std::max(est.raw_Ls_theta, std::abs(dot(gradx, fx) - dot(gradx, fth)) / dth);
      }

      const double dx = (to_vec(x) - to_vec(xp)).norm();
      if (dx > 0.0 && xp.valid()) {
        const StateRate fxp = f(xp, th, u, zero);
        est.raw_L_x = std::max(est.raw_L_x, norm(difference(fx, fxp)) / dx);
        est.raw_Ls_x = std::max(est.raw_Ls_x, std::abs(dot(gradx, fx) - dot(cert.gradient(xp), fxp)) / dx);
      }
    } catch (const DomainError&) {
      // Perturbed point outside the model domain; skip it.
    }
  }

  if (opt.beta >= 0.0) {
    est.beta = opt.beta;
  } else {
    // Euler(0.01) prediction vs RK4(0.01) plant over one period, same kinetics.
    std::mt19937_64 brng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
    const int steps = static_cast<int>(std::lround(opt.sampling_period / 0.01));
    const int trials = std::min(opt.samples, 200);
    for (int i = 0; i < trials; ++i) {
      const PlantState x0 = sample_in_level_set(cert, cert.rho, brng);
      const KineticParams th = random_theta(opt.theta_bounds, brng);
      const ControlInput u = random_input(cert.bounds, brng);
      try {
        PlantState xe = x0, xr = x0;
        const double h = opt.sampling_period / steps;
        for (int s = 0; s < steps; ++s) {
          const StateRate fe = f(xe, th, u, zero);
          for (std::size_t j = 0; j < kStateDim; ++j) xe[j] += h * fe[j];
          auto at = [&](const PlantState& base, double a, const StateRate& k) {
            PlantState y = base;
            for (std::size_t j = 0; j < kStateDim; ++j) y[j] += a * k[j];
            return y;
          };
          const StateRate k1 = f(xr, th, u, zero);
          const StateRate k2 = f(at(xr, 0.5 * h, k1), th, u, zero);
          const StateRate k3 = f(at(xr, 0.5 * h, k2), th, u, zero);
          const StateRate k4 = f(at(xr, h, k3), th, u, zero);
          for (std::size_t j = 0; j < kStateDim; ++j) {
            xr[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
          }
        }
        est.beta = std::max(est.beta, (to_vec(xe) - to_vec(xr)).norm());
      } catch (const DomainError&) {
      }
    }
  }

  est.M = est.inflation * est.raw_M;
  est.L_x = est.inflation * est.raw_L_x;
  est.L_theta = est.inflation * est.raw_L_theta;
  est.L_d = est.inflation * est.raw_L_d;
  est.Ls_x = est.inflation * est.raw_Ls_x;
  est.Ls_theta = est.inflation * est.raw_Ls_theta;
  est.Ls_d = est.inflation * est.raw_Ls_d;
  est.eps_s = opt.eps_s >= 0.0 ? opt.eps_s : 0.5 * cert.alpha3(cert.alpha2_inv(cert.rho_s));
  return est;
}

double prop1_bound(double tau, const LipschitzEstimates& est, Prop1Variant variant) {
  if (tau < 0.0) throw std::invalid_argument("prop1_bound: negative elapsed time");
  const double rate = variant == Prop1Variant::as_printed ? est.L_x * est.L_theta : est.L_x;
  const double scale = est.L_d * est.delta;
  if (scale == 0.0) return 0.0;
  if (rate == 0.0) return scale * tau;
  return scale / rate * std::expm1(rate * tau);
}

Prop2Result prop2_checks(const PlantState& x, const PlantState& x_tilde, double t,
                         const StabilityCertificate& cert, const LipschitzEstimates& est) {
  const double gap = (to_vec(x) - to_vec(x_tilde)).norm();
  Prop2Result r;
  r.growth_residual = est.beta * std::exp(est.L_x * t) - gap;
  r.lyapunov_residual = cert.V(x_tilde) + cert.alpha4(cert.alpha1_inv(cert.rho)) * gap + est.nu * gap * gap -
                        cert.V(x);
  return r;
}

Prop3Result prop3_margin(const StabilityCertificate& cert, const LipschitzEstimates& est, double delta_t) {
  Prop3Result r;
  r.lhs = -cert.alpha3(cert.alpha2_inv(cert.rho_s)) + est.Ls_x * (est.beta + est.M * delta_t);
  r.eps_s = est.eps_s;
  r.satisfied = r.lhs <= -r.eps_s;
  return r;
}

double theorem1_rho_e(const StabilityCertificate& cert, const LipschitzEstimates& est, double delta_t) {
  const double grown = est.beta * std::exp(est.L_x * delta_t);
  const double value = cert.rho - cert.alpha4(cert.alpha1_inv(cert.rho)) * grown - est.nu * grown * grown;
  if (!(value > cert.rho_s)) {
    throw std::domain_error("theorem1_rho_e: no valid rho_e (bound " + std::to_string(value) +
                            " does not exceed rho_s " + std::to_string(cert.rho_s) + ")");
  }
  return value;
}

namespace {

PlantState rk4_step(const CstrModel& model, const PlantState& x, const KineticParams& th, const ControlInput& u,
                    const StateRate& d, double h) {
  auto at = [](const PlantState& base, double a, const StateRate& k) {
    PlantState y = base;
    for (std::size_t j = 0; j < kStateDim; ++j) y[j] += a * k[j];
    return y;
  };
  const StateRate k1 = model.rhs(x, th, u, d);
  const StateRate k2 = model.rhs(at(x, 0.5 * h, k1), th, u, d);
  const StateRate k3 = model.rhs(at(x, 0.5 * h, k2), th, u, d);
  const StateRate k4 = model.rhs(at(x, h, k3), th, u, d);
  PlantState y = x;
  for (std::size_t j = 0; j < kStateDim; ++j) y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
  return y;
}

StateRate random_direction(double length, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  StateRate v{};
  for (auto& c : v) c = n(rng);
  const double s = length / std::max(norm(v), 1e-300);
  for (auto& c : v) c *= s;
  return v;
}

// Runs one pair until either trajectory leaves Omega_rho or the model domain;
// `check` returns the margin at time t (negative = violation). Returns the
// number of points checked.
template <class Check>
int run_pair(const StabilityCertificate& cert, const CstrModel& model, PlantState a, PlantState b,
             const KineticParams& th, const ControlInput& u, const StateRate& da, const StateRate& db,
             const PairCheckOptions& opt, Check check, PairCheckSummary& out) {
  const int steps = static_cast<int>(std::lround(opt.horizon / opt.step_size));
  int kept = 0;
  for (int s = 1; s <= steps; ++s) {
    try {
      a = rk4_step(model, a, th, u, da, opt.step_size);
      b = rk4_step(model, b, th, u, db, opt.step_size);
    } catch (const DomainError&) {
      break;
    }
    if (!a.valid() || !b.valid() || cert.V(a) > cert.rho || cert.V(b) > cert.rho) break;
    const double m = check(a, b, s * opt.step_size);
    ++out.points;
    ++kept;
    if (m < 0.0) ++out.violations;
    out.worst_margin = out.points == 1 ? m : std::min(out.worst_margin, m);
  }
  return kept;
}

ControlInput pair_input(const StabilityCertificate& cert, const PlantState& x0, const PairCheckOptions& opt,
                        std::mt19937_64& rng) {
  const ControlInput r = random_input(cert.bounds, rng);
  return opt.feedback_input ? cert.h(x0) : r;
}

}  // namespace

PairCheckSummary check_prop1_pairs(const StabilityCertificate& cert, const CstrModel& model,
                                   const LipschitzEstimates& est, Prop1Variant variant,
                                   const PairCheckOptions& opt) {
  PairCheckSummary out;
  std::mt19937_64 rng(opt.seed);
  auto check = [&](const PlantState& xn, const PlantState& xd, double t) {
    return prop1_bound(t, est, variant) - (to_vec(xn) - to_vec(xd)).norm();
  };
  for (int attempt = 0; out.pairs < opt.pairs && attempt < opt.max_attempts_factor * opt.pairs; ++attempt) {
    const PlantState x0 = sample_in_level_set(cert, cert.rho, rng);
    const KineticParams th = random_theta(opt.theta_bounds, rng);
    const ControlInput u = pair_input(cert, x0, opt, rng);
    const StateRate d = random_direction(est.delta, rng);
    if (x0.valid() && run_pair(cert, model, x0, x0, th, u, StateRate{}, d, opt, check, out) > 0) {
      ++out.pairs;
    } else {
      ++out.skipped;
    }
  }
  return out;
}

PairCheckSummary check_prop2_pairs(const StabilityCertificate& cert, const CstrModel& model,
                                   const LipschitzEstimates& est, const PairCheckOptions& opt) {
  PairCheckSummary out;
  std::mt19937_64 rng(opt.seed);
  auto check = [&](const PlantState& x, const PlantState& xt, double t) {
    const Prop2Result r = prop2_checks(x, xt, t, cert, est);
    return std::min(r.growth_residual, r.lyapunov_residual);
  };
  for (int attempt = 0; out.pairs < opt.pairs && attempt < opt.max_attempts_factor * opt.pairs; ++attempt) {
    const PlantState x0 = sample_in_level_set(cert, cert.rho, rng);
    const StateRate offset = random_direction(est.beta, rng);
    const KineticParams th = random_theta(opt.theta_bounds, rng);
    const ControlInput u = pair_input(cert, x0, opt, rng);
    PlantState x1 = x0;
    for (std::size_t j = 0; j < kStateDim; ++j) x1[j] += offset[j];
    const bool start_ok = x0.valid() && x1.valid() && cert.V(x1) <= cert.rho;
    if (start_ok && run_pair(cert, model, x0, x1, th, u, StateRate{}, StateRate{}, opt, check, out) > 0) {
      ++out.pairs;
    } else {
      ++out.skipped;
    }
  }
  return out;
}

}  // namespace rlempc
