#pragma once

// Deep deterministic policy gradient estimator of the kinetic multipliers.
//
// The actor maps an observation (measured state, model-predicted state) to a
// bounded theta; the critic scores (observation, action) pairs. Actions are
// handled internally in the tanh range [-1, 1]^6 and mapped affinely onto
// [theta_L, theta_U].

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rlempc/mlp.hpp"
#include "rlempc/model.hpp"

namespace rlempc {

inline constexpr int kObservationDim = 2 * static_cast<int>(kStateDim);
inline constexpr int kActionDim = static_cast<int>(kParamDim);

using Features = std::array<double, kObservationDim>;
using Action = std::array<double, kActionDim>;

struct Observation {
  PlantState measured;
  PlantState predicted;
};

/// Feature map applied before either network sees an observation:
/// state_gain * (x / x_ref - 1) for the measured half and
/// residual_gain * (x - x_pred) / x_ref for the predicted half.
struct ObservationScaler {
  PlantState reference = PlantState::reported_steady_state();
  double state_gain = 10.0;
  double residual_gain = 100.0;

  Features transform(const Observation& obs) const;
};

struct AgentConfig {
  double gamma = 0.99;
  double tau = 0.001;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  double critic_weight_decay = 1e-2;
  int batch_size = 64;
  int buffer_capacity = 1000000;
  std::vector<int> hidden{64, 64};
  double ou_theta = 0.15;
  double ou_sigma = 0.2;
  double w1 = 1.0;
  double w2 = 1.0;
  double epsilon = 0.03;
  ParamBounds theta_bounds;
  ObservationScaler scaler;

  void validate() const;
};

/// Sum over states of +w1 (e_i < eps) and -w2 (e_i > eps), where e_i is the
/// relative prediction error |x_i - x~_i| / |x_i| (absolute error when
/// |x_i| < 1e-8). e_i == eps contributes nothing.
double reward(const PlantState& x, const PlantState& x_pred, const AgentConfig& cfg);

/// Elementwise relative prediction error with the same zero guard as reward().
std::array<double, kStateDim> relative_errors(const PlantState& x, const PlantState& x_pred);

Action to_action(const KineticParams& theta, const ParamBounds& bounds);
KineticParams to_theta(const Action& a, const ParamBounds& bounds);

/// theta = midpoint + half_width * tanh(...). Always inside the bounds.
KineticParams actor_forward(const Observation& obs, const MlpNet& net, const ObservationScaler& scaler,
                            const ParamBounds& bounds);

double critic_forward(const Observation& obs, const KineticParams& action, const MlpNet& net,
                      const ObservationScaler& scaler, const ParamBounds& bounds);

struct Transition {
  Features obs{};
  Action action{};
  double reward = 0.0;
  Features next_obs{};
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void add(const Transition& t);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t insertions() const { return inserted_; }
  const Transition& at(std::size_t i) const { return data_[i]; }

  /// Distinct indices, uniformly chosen (Floyd's algorithm).
  std::vector<std::size_t> sample_indices(std::size_t n, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::vector<Transition> data_;
  std::size_t next_ = 0;
  std::uint64_t inserted_ = 0;
};

/// Ornstein-Uhlenbeck process in action space.
class OuNoise {
 public:
  OuNoise(double theta, double sigma, std::uint64_t seed);
  Action sample();
  void reset();

 private:
  double theta_, sigma_;
  Action state_{};
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Adds the next noise sample (scaled to the parameter box) and clips into
/// the bounds.
KineticParams explore(const KineticParams& theta, OuNoise& noise, const ParamBounds& bounds);

struct UpdateStats {
  double critic_loss = 0.0;
  double actor_objective = 0.0;  // mean Q(s, mu(s)) before the step
  double mean_target = 0.0;
};

/// Immutable trained policy, safe for concurrent evaluation.
struct FrozenActor {
  MlpNet net;
  ObservationScaler scaler;
  ParamBounds bounds;
  std::string config_hash;

  KineticParams operator()(const Observation& obs) const { return actor_forward(obs, net, scaler, bounds); }
};

/// Weight file: one line of JSON metadata, then the parameter vector as
/// little-endian IEEE-754 doubles. See README for the field list.
void save_actor(std::ostream& os, const FrozenActor& actor);
FrozenActor load_actor(std::istream& is);
void save_actor_file(const std::string& path, const FrozenActor& actor);
FrozenActor load_actor_file(const std::string& path);

class DdpgAgent {
 public:
  DdpgAgent(AgentConfig cfg, std::uint64_t seed);

  KineticParams act(const Observation& obs) const;
  KineticParams explore(const KineticParams& theta);
  void reset_noise() { noise_.reset(); }

  void remember(const Observation& obs, const KineticParams& theta, double r, const Observation& next);
  bool ready() const { return buffer_.size() > 0; }

  /// One critic step, one actor step and the soft target update on a fresh
  /// minibatch of min(batch_size, buffer size) distinct transitions. Throws std::runtime_error (leaving every network untouched)
  /// when a loss or gradient is not finite.
  UpdateStats update();
  /// Same update on an explicit set of transitions.
  UpdateStats update_on(const std::vector<Transition>& batch);

  const AgentConfig& config() const { return cfg_; }
  const MlpNet& actor() const { return actor_; }
  const MlpNet& critic() const { return critic_; }
  const MlpNet& target_actor() const { return target_actor_; }
  const MlpNet& target_critic() const { return target_critic_; }
  MlpNet& mutable_actor() { return actor_; }
  MlpNet& mutable_critic() { return critic_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  long updates() const { return updates_; }

  FrozenActor freeze(std::string config_hash = {}) const;

 private:
  AgentConfig cfg_;
  MlpNet actor_, critic_, target_actor_, target_critic_;
  AdamOptimizer actor_opt_, critic_opt_;
  ReplayBuffer buffer_;
  OuNoise noise_;
  std::mt19937_64 rng_;
  long updates_ = 0;
};

}  // namespace rlempc
