#include "rlempc/ddpg.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"

namespace rlempc {

namespace {

constexpr const char* kWeightFormat = "rlempc-actor";
constexpr int kWeightVersion = 1;

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double d) { return std::isfinite(d); });
}

std::vector<double> critic_input(const Features& f, const Action& a) {
  std::vector<double> in(f.begin(), f.end());
  in.insert(in.end(), a.begin(), a.end());
  return in;
}

Action actor_action(const MlpNet& net, const Features& f) {
  const std::vector<double> out = net.forward(f);
  Action a{};
  std::copy(out.begin(), out.end(), a.begin());
  return a;
}

}  // namespace

Features ObservationScaler::transform(const Observation& obs) const {
  Features f{};
  for (std::size_t i = 0; i < kStateDim; ++i) {
    const double ref = reference[i];
    f[i] = state_gain * (obs.measured[i] / ref - 1.0);
    f[kStateDim + i] = residual_gain * (obs.measured[i] - obs.predicted[i]) / ref;
  }
  return f;
}

void AgentConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("agent config: ") + what);
  };
  require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  require(tau > 0.0 && tau <= 1.0, "tau must lie in (0, 1]");
  require(actor_lr > 0.0 && critic_lr > 0.0, "learning rates must be positive");
  require(critic_weight_decay >= 0.0, "critic weight decay must be non-negative");
  require(batch_size >= 1, "batch size must be positive");
  require(buffer_capacity >= batch_size, "replay capacity must be at least the batch size");
  require(!hidden.empty(), "at least one hidden layer is required");
  for (int h : hidden) require(h >= 1, "hidden layer widths must be positive");
  require(ou_theta >= 0.0 && ou_sigma >= 0.0, "OU parameters must be non-negative");
  require(w1 >= 0.0 && w2 >= 0.0, "reward weights must be non-negative");
  require(epsilon > 0.0, "reward threshold must be positive");
  theta_bounds.validate();
  for (std::size_t i = 0; i < kStateDim; ++i) {
    require(scaler.reference[i] != 0.0, "scaler reference must be non-zero");
  }
}

std::array<double, kStateDim> relative_errors(const PlantState& x, const PlantState& x_pred) {
  std::array<double, kStateDim> e{};
  for (std::size_t i = 0; i < kStateDim; ++i) {
    const double diff = std::abs(x[i] - x_pred[i]);
    e[i] = std::abs(x[i]) < 1e-8 ? diff : diff / std::abs(x[i]);
  }
  return e;
}

double reward(const PlantState& x, const PlantState& x_pred, const AgentConfig& cfg) {
  double r = 0.0;
  for (double e : relative_errors(x, x_pred)) {
    if (e < cfg.epsilon) {
      r += cfg.w1;
    } else if (e > cfg.epsilon) {
      r -= cfg.w2;
    }
  }
  return r;
}

Action to_action(const KineticParams& theta, const ParamBounds& bounds) {
  Action a{};
  const double mid = bounds.midpoint(), hw = bounds.half_width();
  for (std::size_t i = 0; i < kParamDim; ++i) a[i] = std::clamp((theta.theta[i] - mid) / hw, -1.0, 1.0);
  return a;
}

KineticParams to_theta(const Action& a, const ParamBounds& bounds) {
  KineticParams t;
  const double mid = bounds.midpoint(), hw = bounds.half_width();
  for (std::size_t i = 0; i < kParamDim; ++i) {
    t.theta[i] = std::clamp(mid + hw * a[i], bounds.lower, bounds.upper);
  }
  return t;
}

KineticParams actor_forward(const Observation& obs, const MlpNet& net, const ObservationScaler& scaler,
                            const ParamBounds& bounds) {
  return to_theta(actor_action(net, scaler.transform(obs)), bounds);
}

double critic_forward(const Observation& obs, const KineticParams& action, const MlpNet& net,
                      const ObservationScaler& scaler, const ParamBounds& bounds) {
  return net.forward(critic_input(scaler.transform(obs), to_action(action, bounds)))[0];
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::add(const Transition& t) {
  if (data_.size() < capacity_) {
    data_.push_back(t);
  } else {
    data_[next_] = t;
  }
  next_ = (next_ + 1) % capacity_;
  ++inserted_;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n, std::mt19937_64& rng) const {
  const std::size_t m = data_.size();
  if (n > m) throw std::invalid_argument("ReplayBuffer: not enough transitions to sample");
  std::vector<std::size_t> out;
  out.reserve(n);
  std::unordered_set<std::size_t> seen;
  for (std::size_t j = m - n; j < m; ++j) {
    std::uniform_int_distribution<std::size_t> pick(0, j);
    const std::size_t t = pick(rng);
    const std::size_t chosen = seen.count(t) ? j : t;
    seen.insert(chosen);
    out.push_back(chosen);
  }
  return out;
}

OuNoise::OuNoise(double theta, double sigma, std::uint64_t seed) : theta_(theta), sigma_(sigma), rng_(seed) {}

Action OuNoise::sample() {
  for (double& s : state_) s += -theta_ * s + sigma_ * normal_(rng_);
  return state_;
}

void OuNoise::reset() { state_.fill(0.0); }

KineticParams explore(const KineticParams& theta, OuNoise& noise, const ParamBounds& bounds) {
  const Action n = noise.sample();
  Action a = to_action(theta, bounds);
  for (std::size_t i = 0; i < kParamDim; ++i) a[i] += n[i];
  return to_theta(a, bounds);
}

void save_actor(std::ostream& os, const FrozenActor& actor) {
  nlohmann::json h;
  h["format"] = kWeightFormat;
  h["version"] = kWeightVersion;
  h["layers"] = actor.net.layer_sizes();
  h["output"] = to_string(actor.net.output_activation());
  h["param_count"] = actor.net.parameter_count();
  h["dtype"] = "float64-le";
  h["config_hash"] = actor.config_hash;
  h["theta_bounds"] = {actor.bounds.lower, actor.bounds.upper};
  h["scaler"] = {{"reference", actor.scaler.reference.x},
                 {"state_gain", actor.scaler.state_gain},
                 {"residual_gain", actor.scaler.residual_gain}};
  os << h.dump() << '\n';
  for (double v : actor.net.parameters()) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    char buf[8];
    std::memcpy(buf, &bits, 8);
    os.write(buf, 8);
  }
  if (!os) throw std::runtime_error("save_actor: write failed");
}

FrozenActor load_actor(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("load_actor: missing header line");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("load_actor: malformed header: ") + e.what());
  }
  if (h.value("format", std::string{}) != kWeightFormat) throw std::runtime_error("load_actor: not an actor weight file");
  if (h.value("version", 0) != kWeightVersion) {
    throw std::runtime_error("load_actor: unsupported version " + h.value("version", nlohmann::json()).dump());
  }
  FrozenActor a;
  try {
    a.net = MlpNet(h.at("layers").get<std::vector<int>>(), parse_output_activation(h.at("output").get<std::string>()));
    a.config_hash = h.value("config_hash", std::string{});
    const auto b = h.at("theta_bounds").get<std::vector<double>>();
    if (b.size() != 2) throw std::runtime_error("load_actor: theta_bounds must have two entries");
    a.bounds.lower = b[0];
    a.bounds.upper = b[1];
    a.bounds.validate();
    const auto& s = h.at("scaler");
    a.scaler.reference.x = s.at("reference").get<std::array<double, kStateDim>>();
    a.scaler.state_gain = s.at("state_gain").get<double>();
    a.scaler.residual_gain = s.at("residual_gain").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("load_actor: bad header field: ") + e.what());
  }
  if (a.net.input_size() != kObservationDim || a.net.output_size() != kActionDim) {
    throw std::runtime_error("load_actor: network shape does not match the observation/action sizes");
  }
  const std::size_t n = h.at("param_count").get<std::size_t>();
  if (n != a.net.parameter_count()) throw std::runtime_error("load_actor: param_count does not match layers");
  std::span<double> p = a.net.parameters();
  for (std::size_t i = 0; i < n; ++i) {
    char buf[8];
    if (!is.read(buf, 8)) throw std::runtime_error("load_actor: truncated parameter block");
    std::uint64_t bits;
    std::memcpy(&bits, buf, 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    p[i] = std::bit_cast<double>(bits);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error("load_actor: trailing bytes after parameters");
  if (!all_finite(p)) throw std::runtime_error("load_actor: non-finite parameter");
  return a;
}

void save_actor_file(const std::string& path, const FrozenActor& actor) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  save_actor(os, actor);
}

FrozenActor load_actor_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open weights file '" + path + "'");
  return load_actor(is);
}

DdpgAgent::DdpgAgent(AgentConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), buffer_(1), noise_(0.0, 0.0, 0), rng_(seed) {
  cfg_.validate();
  std::vector<int> a_sizes{kObservationDim};
  a_sizes.insert(a_sizes.end(), cfg_.hidden.begin(), cfg_.hidden.end());
  a_sizes.push_back(kActionDim);
  std::vector<int> c_sizes{kObservationDim + kActionDim};
  c_sizes.insert(c_sizes.end(), cfg_.hidden.begin(), cfg_.hidden.end());
  c_sizes.push_back(1);
  actor_ = MlpNet(a_sizes, OutputActivation::tanh);
  critic_ = MlpNet(c_sizes, OutputActivation::identity);
  actor_.initialize(rng_);
  critic_.initialize(rng_);
  target_actor_ = actor_;
  target_critic_ = critic_;
  actor_opt_ = AdamOptimizer(actor_.parameter_count(), cfg_.actor_lr);
  critic_opt_ = AdamOptimizer(critic_.parameter_count(), cfg_.critic_lr, cfg_.critic_weight_decay);
  buffer_ = ReplayBuffer(static_cast<std::size_t>(cfg_.buffer_capacity));
  noise_ = OuNoise(cfg_.ou_theta, cfg_.ou_sigma, rng_());
}

KineticParams DdpgAgent::act(const Observation& obs) const {
  return actor_forward(obs, actor_, cfg_.scaler, cfg_.theta_bounds);
}

KineticParams DdpgAgent::explore(const KineticParams& theta) {
  return rlempc::explore(theta, noise_, cfg_.theta_bounds);
}

void DdpgAgent::remember(const Observation& obs, const KineticParams& theta, double r, const Observation& next) {
  Transition t;
  t.obs = cfg_.scaler.transform(obs);
  t.action = to_action(theta, cfg_.theta_bounds);
  t.reward = r;
  t.next_obs = cfg_.scaler.transform(next);
  buffer_.add(t);
}

UpdateStats DdpgAgent::update() {
  if (!ready()) throw std::logic_error("DdpgAgent::update: replay buffer is empty");
  const std::size_t n = std::min(buffer_.size(), static_cast<std::size_t>(cfg_.batch_size));
  const auto idx = buffer_.sample_indices(n, rng_);
  std::vector<Transition> batch;
  batch.reserve(idx.size());
  for (std::size_t i : idx) batch.push_back(buffer_.at(i));
  return update_on(batch);
}

UpdateStats DdpgAgent::update_on(const std::vector<Transition>& batch) {
  if (batch.empty()) throw std::invalid_argument("DdpgAgent::update_on: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  UpdateStats stats;

  std::vector<double> critic_grad(critic_.parameter_count(), 0.0);
  MlpNet::Cache cache;
  for (const Transition& t : batch) {
    const Action next_a = actor_action(target_actor_, t.next_obs);
    const double q_next = target_critic_.forward(critic_input(t.next_obs, next_a))[0];
    const double y = t.reward + cfg_.gamma * q_next;
    const double q = critic_.forward(critic_input(t.obs, t.action), cache)[0];
    const double err = q - y;
    stats.critic_loss += err * err * inv_b;
    stats.mean_target += y * inv_b;
    const double up = 2.0 * err * inv_b;
    critic_.backward(cache, std::span<const double>(&up, 1), critic_grad);
  }

  // Policy gradient through the current critic: ascend Q(s, mu(s)).
  std::vector<double> actor_grad(actor_.parameter_count(), 0.0);
  std::vector<double> scratch(critic_.parameter_count(), 0.0);
  MlpNet::Cache a_cache, c_cache;
  for (const Transition& t : batch) {
    const std::vector<double> a = actor_.forward(t.obs, a_cache);
    std::vector<double> in(t.obs.begin(), t.obs.end());
    in.insert(in.end(), a.begin(), a.end());
    const double q = critic_.forward(in, c_cache)[0];
    stats.actor_objective += q * inv_b;
    const double up = -inv_b;
    const std::vector<double> d_in = critic_.backward(c_cache, std::span<const double>(&up, 1), scratch);
    actor_.backward(a_cache, std::span<const double>(d_in.data() + kObservationDim, kActionDim), actor_grad);
  }

  if (!std::isfinite(stats.critic_loss) || !std::isfinite(stats.actor_objective) || !all_finite(critic_grad) ||
      !all_finite(actor_grad)) {
    throw std::runtime_error("ddpg update: non-finite loss or gradient (critic loss " +
                             std::to_string(stats.critic_loss) + ")");
  }
  critic_opt_.step(critic_.parameters(), critic_grad);
  actor_opt_.step(actor_.parameters(), actor_grad);
  actor_.soft_update_into(target_actor_, cfg_.tau);
  critic_.soft_update_into(target_critic_, cfg_.tau);
  ++updates_;
  return stats;
}

FrozenActor DdpgAgent::freeze(std::string config_hash) const {
  return FrozenActor{actor_, cfg_.scaler, cfg_.theta_bounds, std::move(config_hash)};
}

}  // namespace rlempc
