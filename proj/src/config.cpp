#include "rlempc/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <vector>

namespace rlempc {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::train: return "train";
    case RunMode::deploy: return "deploy";
    case RunMode::compare: return "compare";
    case RunMode::stability_audit: return "stability-audit";
  }
  return "deploy";
}

RunMode parse_run_mode(const std::string& s) {
  if (s == "train") return RunMode::train;
  if (s == "deploy") return RunMode::deploy;
  if (s == "compare") return RunMode::compare;
  if (s == "stability-audit") return RunMode::stability_audit;
  throw std::invalid_argument("unknown mode '" + s + "' (train, deploy, compare, stability-audit)");
}

std::string to_string(PolicyKind p) {
  switch (p) {
    case PolicyKind::actor: return "actor";
    case PolicyKind::oracle: return "oracle";
    case PolicyKind::constant: return "constant";
  }
  return "actor";
}

PolicyKind parse_policy_kind(const std::string& s) {
  if (s == "actor") return PolicyKind::actor;
  if (s == "oracle") return PolicyKind::oracle;
  if (s == "constant") return PolicyKind::constant;
  throw std::invalid_argument("unknown policy '" + s + "' (actor, oracle, constant)");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || !std::isfinite(out)) {
    throw std::invalid_argument("expected a finite number, got '" + v + "'");
  }
  return out;
}

long long parse_integer(const std::string& v) {
  long long out = 0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw std::invalid_argument("expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_unsigned(const std::string& v) {
  std::uint64_t out = 0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw std::invalid_argument("expected a non-negative integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Acc>
Field real(const char* s, const char* k, Acc acc) {
  return {s, k, [acc](RunConfig& c, const std::string& v) { acc(c) = parse_double(v); },
          [acc](const RunConfig& c) { return fmt_double(acc(const_cast<RunConfig&>(c))); }};
}

template <class Acc>
Field integer(const char* s, const char* k, Acc acc) {
  return {s, k,
          [acc](RunConfig& c, const std::string& v) {
            const long long x = parse_integer(v);
            if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
              throw std::invalid_argument("integer out of range: " + v);
            }
            acc(c) = static_cast<int>(x);
          },
          [acc](const RunConfig& c) { return std::to_string(acc(const_cast<RunConfig&>(c))); }};
}

template <class Acc>
Field boolean(const char* s, const char* k, Acc acc) {
  return {s, k, [acc](RunConfig& c, const std::string& v) { acc(c) = parse_bool(v); },
          [acc](const RunConfig& c) { return std::string(acc(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <class Acc>
Field text(const char* s, const char* k, Acc acc) {
  return {s, k, [acc](RunConfig& c, const std::string& v) { acc(c) = v; },
          [acc](const RunConfig& c) { return acc(const_cast<RunConfig&>(c)); }};
}

const char* const kChannelNames[] = {"u1", "u2", "u3"};

const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    v.push_back({"run", "mode", [](RunConfig& c, const std::string& s) { c.mode = parse_run_mode(s); },
                 [](const RunConfig& c) { return to_string(c.mode); }});
    v.push_back({"run", "seed", [](RunConfig& c, const std::string& s) { c.seed = parse_unsigned(s); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    v.push_back(text("run", "output_dir", [](RunConfig& c) -> std::string& { return c.output_dir; }));
    v.push_back(text("run", "weights", [](RunConfig& c) -> std::string& { return c.weights; }));
    v.push_back({"run", "policy", [](RunConfig& c, const std::string& s) { c.policy = parse_policy_kind(s); },
                 [](const RunConfig& c) { return to_string(c.policy); }});

    static const char* gnames[] = {"gamma1", "gamma2", "gamma3"};
    static const char* anames[] = {"a1", "a2", "a3"};
    static const char* bnames[] = {"b1", "b2", "b3", "b4"};
    for (int i = 0; i < 3; ++i) {
      v.push_back(real("model", gnames[i], [i](RunConfig& c) -> double& { return c.model.gamma[i]; }));
    }
    for (int i = 0; i < 3; ++i) v.push_back(real("model", anames[i], [i](RunConfig& c) -> double& { return c.model.A[i]; }));
    for (int i = 0; i < 4; ++i) v.push_back(real("model", bnames[i], [i](RunConfig& c) -> double& { return c.model.B[i]; }));

    v.push_back({"integrator", "method",
                 [](RunConfig& c, const std::string& s) { c.integrator.method = parse_integration_method(s); },
                 [](const RunConfig& c) { return to_string(c.integrator.method); }});
    v.push_back(real("integrator", "step_size", [](RunConfig& c) -> double& { return c.integrator.step_size; }));
    v.push_back(real("integrator", "sampling_period",
                     [](RunConfig& c) -> double& { return c.integrator.sampling_period; }));

    v.push_back(integer("empc", "horizon", [](RunConfig& c) -> int& { return c.empc.horizon; }));
    v.push_back(real("empc", "model_step", [](RunConfig& c) -> double& { return c.empc.model_step; }));
    v.push_back({"empc", "manipulated",
                 [](RunConfig& c, const std::string& s) {
                   std::vector<int> ch;
                   for (const auto& item : split_list(s)) {
                     int idx = -1;
                     for (int j = 0; j < 3; ++j) {
                       if (item == kChannelNames[j]) idx = j;
                     }
                     if (idx < 0) throw std::invalid_argument("unknown input channel '" + item + "' (u1, u2, u3)");
                     for (int e : ch) {
                       if (e == idx) throw std::invalid_argument("input channel '" + item + "' listed twice");
                     }
                     ch.push_back(idx);
                   }
                   c.empc.manipulated = ch;
                 },
                 [](const RunConfig& c) {
                   std::vector<std::string> names;
                   for (int j : c.empc.manipulated) names.push_back(kChannelNames[j]);
                   return join(names);
                 }});
    v.push_back({"empc", "stage_cost",
                 [](RunConfig& c, const std::string& s) { c.empc.stage_cost = parse_stage_cost(s); },
                 [](const RunConfig& c) { return to_string(c.empc.stage_cost); }});
    v.push_back(integer("empc", "max_iterations", [](RunConfig& c) -> int& { return c.empc.max_iterations; }));
    v.push_back(real("empc", "tolerance", [](RunConfig& c) -> double& { return c.empc.tolerance; }));
    v.push_back(real("empc", "fd_step", [](RunConfig& c) -> double& { return c.empc.fd_step; }));
    v.push_back(boolean("empc", "lyapunov_mode", [](RunConfig& c) -> bool& { return c.lyapunov_mode; }));
    v.push_back(real("empc", "lyapunov_penalty", [](RunConfig& c) -> double& { return c.empc.lyapunov_penalty; }));
    static const char* lo[] = {"u1_min", "u2_min", "u3_min"};
    static const char* hi[] = {"u1_max", "u2_max", "u3_max"};
    static const char* nom[] = {"nominal_u1", "nominal_u2", "nominal_u3"};
    for (int j = 0; j < 3; ++j) {
      v.push_back(real("empc", lo[j], [j](RunConfig& c) -> double& { return c.empc.bounds.lower[j]; }));
      v.push_back(real("empc", hi[j], [j](RunConfig& c) -> double& { return c.empc.bounds.upper[j]; }));
      v.push_back(real("empc", nom[j], [j](RunConfig& c) -> double& { return c.empc.nominal_input[j]; }));
    }

    v.push_back(real("agent", "gamma", [](RunConfig& c) -> double& { return c.agent.gamma; }));
    v.push_back(real("agent", "tau", [](RunConfig& c) -> double& { return c.agent.tau; }));
    v.push_back(real("agent", "actor_lr", [](RunConfig& c) -> double& { return c.agent.actor_lr; }));
    v.push_back(real("agent", "critic_lr", [](RunConfig& c) -> double& { return c.agent.critic_lr; }));
    v.push_back(real("agent", "critic_weight_decay",
                     [](RunConfig& c) -> double& { return c.agent.critic_weight_decay; }));
    v.push_back(integer("agent", "batch_size", [](RunConfig& c) -> int& { return c.agent.batch_size; }));
    v.push_back(integer("agent", "buffer_capacity", [](RunConfig& c) -> int& { return c.agent.buffer_capacity; }));
    v.push_back({"agent", "hidden",
                 [](RunConfig& c, const std::string& s) {
                   std::vector<int> h;
                   for (const auto& item : split_list(s)) h.push_back(static_cast<int>(parse_integer(item)));
                   c.agent.hidden = h;
                 },
                 [](const RunConfig& c) {
                   std::vector<std::string> items;
                   for (int h : c.agent.hidden) items.push_back(std::to_string(h));
                   return join(items);
                 }});
    v.push_back(real("agent", "ou_theta", [](RunConfig& c) -> double& { return c.agent.ou_theta; }));
    v.push_back(real("agent", "ou_sigma", [](RunConfig& c) -> double& { return c.agent.ou_sigma; }));
    v.push_back(real("agent", "w1", [](RunConfig& c) -> double& { return c.agent.w1; }));
    v.push_back(real("agent", "w2", [](RunConfig& c) -> double& { return c.agent.w2; }));
    v.push_back(real("agent", "epsilon", [](RunConfig& c) -> double& { return c.agent.epsilon; }));
    v.push_back(real("agent", "theta_min", [](RunConfig& c) -> double& { return c.agent.theta_bounds.lower; }));
    v.push_back(real("agent", "theta_max", [](RunConfig& c) -> double& { return c.agent.theta_bounds.upper; }));
    v.push_back(real("agent", "state_gain", [](RunConfig& c) -> double& { return c.agent.scaler.state_gain; }));
    v.push_back(real("agent", "residual_gain", [](RunConfig& c) -> double& { return c.agent.scaler.residual_gain; }));

    v.push_back(integer("training", "episodes", [](RunConfig& c) -> int& { return c.training.episodes; }));
    v.push_back(integer("training", "steps_per_episode",
                        [](RunConfig& c) -> int& { return c.training.steps_per_episode; }));
    v.push_back(real("training", "initial_state_spread",
                     [](RunConfig& c) -> double& { return c.training.initial_state_spread; }));
    v.push_back(real("training", "theta_min", [](RunConfig& c) -> double& { return c.training.reset_theta_bounds.lower; }));
    v.push_back(real("training", "theta_max", [](RunConfig& c) -> double& { return c.training.reset_theta_bounds.upper; }));
    v.push_back(real("training", "max_abort_fraction",
                     [](RunConfig& c) -> double& { return c.training.max_abort_fraction; }));
    v.push_back(boolean("training", "noise", [](RunConfig& c) -> bool& { return c.training.noise.enabled; }));

    v.push_back(real("scenario", "final_time", [](RunConfig& c) -> double& { return c.scenario.final_time; }));
    v.push_back(integer("scenario", "deactivation_steps",
                        [](RunConfig& c) -> int& { return c.scenario.deactivation_steps; }));
    v.push_back(boolean("scenario", "noise", [](RunConfig& c) -> bool& { return c.scenario.noise; }));
    v.push_back(real("scenario", "noise_fraction", [](RunConfig& c) -> double& { return c.scenario.noise_fraction; }));
    v.push_back({"scenario", "noise_mode",
                 [](RunConfig& c, const std::string& s) { c.scenario.noise_mode = parse_noise_mode(s); },
                 [](const RunConfig& c) { return to_string(c.scenario.noise_mode); }});
    v.push_back(boolean("scenario", "spike", [](RunConfig& c) -> bool& { return c.scenario.spike.enabled; }));
    v.push_back(real("scenario", "spike_start", [](RunConfig& c) -> double& { return c.scenario.spike.start; }));
    v.push_back(real("scenario", "spike_end", [](RunConfig& c) -> double& { return c.scenario.spike.end; }));
    v.push_back(real("scenario", "spike_factor", [](RunConfig& c) -> double& { return c.scenario.spike.factor; }));
    static const char* xn[] = {"initial_x1", "initial_x2", "initial_x3", "initial_x4"};
    for (int i = 0; i < 4; ++i) {
      v.push_back(real("scenario", xn[i], [i](RunConfig& c) -> double& { return c.scenario.initial_state.x[i]; }));
    }

    v.push_back(real("stability", "initial_rho_scale",
                     [](RunConfig& c) -> double& { return c.stability.initial_rho_scale; }));
    v.push_back(real("stability", "shrink_factor", [](RunConfig& c) -> double& { return c.stability.shrink_factor; }));
    v.push_back(integer("stability", "certificate_samples",
                        [](RunConfig& c) -> int& { return c.stability.certificate_samples; }));
    v.push_back(real("stability", "rho_s_fraction", [](RunConfig& c) -> double& { return c.stability.rho_s_fraction; }));
    v.push_back(integer("stability", "estimation_samples",
                        [](RunConfig& c) -> int& { return c.stability.estimation_samples; }));
    v.push_back(real("stability", "delta", [](RunConfig& c) -> double& { return c.stability.delta; }));
    v.push_back(real("stability", "inflation", [](RunConfig& c) -> double& { return c.stability.inflation; }));
    v.push_back({"stability", "prop1_variant",
                 [](RunConfig& c, const std::string& s) {
                   if (s == "as_printed") {
                     c.stability.prop1 = Prop1Variant::as_printed;
                   } else if (s == "lx_only") {
                     c.stability.prop1 = Prop1Variant::lx_only;
                   } else {
                     throw std::invalid_argument("unknown prop1_variant '" + s + "' (as_printed, lx_only)");
                   }
                 },
                 [](const RunConfig& c) {
                   return std::string(c.stability.prop1 == Prop1Variant::as_printed ? "as_printed" : "lx_only");
                 }});
    v.push_back(boolean("stability", "rho_e_from_theorem",
                        [](RunConfig& c) -> bool& { return c.stability.rho_e_from_theorem; }));
    v.push_back(real("stability", "rho_e_fraction", [](RunConfig& c) -> double& { return c.stability.rho_e_fraction; }));
    v.push_back(integer("stability", "pairs", [](RunConfig& c) -> int& { return c.stability.pairs; }));
    v.push_back(integer("stability", "audit_periods", [](RunConfig& c) -> int& { return c.stability.audit_periods; }));
    return v;
  }();
  return f;
}

EmpcConfig synced_empc(const RunConfig& cfg) {
  EmpcConfig e = cfg.empc;
  e.sampling_period = cfg.integrator.sampling_period;
  return e;
}

}  // namespace

ScenarioState ScenarioSpec::build(const ControlInput& nominal_input, std::uint64_t noise_seed) const {
  ScenarioState s;
  s.final_time = final_time;
  if (deactivation_steps > 0) s.deactivation_times = ScenarioState::equally_spaced_steps(final_time, deactivation_steps);
  s.noise.enabled = noise;
  s.noise.mode = noise_mode;
  s.noise.seed = noise_seed;
  const PlantState xs = PlantState::reported_steady_state();
  for (std::size_t i = 0; i < kStateDim; ++i) s.noise.std_dev[i] = noise_fraction * xs[i];
  s.spike = spike;
  s.initial_state = initial_state;
  s.nominal_input = nominal_input;
  return s;
}

void ScenarioSpec::validate() const {
  if (!(final_time >= 0.0)) throw std::invalid_argument("final_time must be >= 0");
  if (deactivation_steps < 0 || deactivation_steps > kDeactivationSteps) {
    throw std::invalid_argument("deactivation_steps must lie in [0, 5]");
  }
  if (!(noise_fraction >= 0.0)) throw std::invalid_argument("noise_fraction must be >= 0");
  if (spike.enabled && !(spike.end > spike.start)) throw std::invalid_argument("spike_end must exceed spike_start");
  if (!(spike.factor > 0.0)) throw std::invalid_argument("spike_factor must be positive");
  if (!initial_state.valid()) throw std::invalid_argument("initial state is outside the model domain");
}

void StabilitySpec::validate() const {
  if (!(initial_rho_scale > 0.0)) throw std::invalid_argument("initial_rho_scale must be positive");
  if (!(shrink_factor > 0.0 && shrink_factor < 1.0)) throw std::invalid_argument("shrink_factor must lie in (0, 1)");
  if (certificate_samples < 1 || estimation_samples < 1) throw std::invalid_argument("sample counts must be >= 1");
  if (!(rho_s_fraction > 0.0 && rho_s_fraction < 0.5)) throw std::invalid_argument("rho_s_fraction must lie in (0, 0.5)");
  if (!(delta >= 0.0)) throw std::invalid_argument("delta must be >= 0");
  if (!(inflation >= 1.0)) throw std::invalid_argument("inflation must be >= 1");
  if (pairs < 1) throw std::invalid_argument("pairs must be >= 1");
  if (audit_periods < 1) throw std::invalid_argument("audit_periods must be >= 1");
  if (!(rho_e_fraction > rho_s_fraction && rho_e_fraction < 1.0)) {
    throw std::invalid_argument("rho_e_fraction must lie in (rho_s_fraction, 1)");
  }
}

void RunConfig::validate() const {
  if (version != kConfigVersion) throw std::invalid_argument("unsupported config version " + std::to_string(version));
  model.validate();
  integrator.validate();
  synced_empc(*this).validate();
  agent.validate();
  training.validate();
  scenario.validate();
  stability.validate();
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::map<std::string, int> section_line;
  std::set<std::string> seen;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  auto fail = [&](const std::string& msg) -> ConfigError {
    return ConfigError("config line " + std::to_string(line_no) + (section.empty() ? "" : " [" + section + "]") +
                       ": " + msg);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    const auto c = line.find_first_of("#;");
    if (c != std::string::npos) line.erase(c);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw fail("malformed section header '" + line + "'");
      const std::string name = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& f : fields()) known = known || f.section == name;
      section = name;
      if (!known) throw fail("unknown section [" + name + "]");
      section_line.emplace(name, line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw fail("expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw fail("missing key before '='");
    const std::string qualified = section + "." + key;
    if (!seen.insert(qualified).second) throw fail("duplicate key '" + key + "'");
    if (section.empty()) {
      if (key != "version") throw fail("unknown top-level key '" + key + "' (only 'version' precedes sections)");
      try {
        cfg.version = static_cast<int>(parse_integer(value));
      } catch (const std::exception& e) {
        throw fail(std::string("version: ") + e.what());
      }
      if (cfg.version != kConfigVersion) {
        throw fail("unsupported config version " + value + " (expected " + std::to_string(kConfigVersion) + ")");
      }
      continue;
    }
    const Field* field = nullptr;
    for (const auto& f : fields()) {
      if (f.section == section && f.key == key) field = &f;
    }
    if (field == nullptr) throw fail("unknown key '" + key + "'");
    try {
      field->set(cfg, value);
    } catch (const std::exception& e) {
      throw fail(key + ": " + e.what());
    }
  }

  auto where = [&](const std::string& s) {
    const auto it = section_line.find(s);
    return "[" + s + "]" + (it == section_line.end() ? " (defaults)" : " (line " + std::to_string(it->second) + ")");
  };
  auto check = [&](const std::string& s, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      throw ConfigError("config " + where(s) + ": " + e.what());
    }
  };
  check("model", [&] { cfg.model.validate(); });
  check("integrator", [&] { cfg.integrator.validate(); });
  check("empc", [&] { synced_empc(cfg).validate(); });
  check("agent", [&] { cfg.agent.validate(); });
  check("training", [&] { cfg.training.validate(); });
  check("scenario", [&] { cfg.scenario.validate(); });
  check("stability", [&] { cfg.stability.validate(); });
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out = "version = " + std::to_string(cfg.version) + "\n";
  std::string current;
  for (const auto& f : fields()) {
    if (f.section != current) {
      out += "\n[" + f.section + "]\n";
      current = f.section;
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

std::string config_hash(const RunConfig& cfg) {
  // Where artifacts are read from or written to does not change the run.
  RunConfig content = cfg;
  content.output_dir.clear();
  content.weights.clear();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize_config(content)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string resolve_output_dir(const std::string& from_config, const char* env_value,
                               const std::optional<std::string>& from_cli) {
  if (from_cli && !from_cli->empty()) return *from_cli;
  if (env_value != nullptr && *env_value != '\0') return env_value;
  return from_config;
}

TrainingConfig training_config(const RunConfig& cfg) {
  TrainingConfig t = cfg.training;
  t.seed = derive_seed(cfg.seed, "training");
  t.constants = cfg.model;
  const PlantState xs = PlantState::reported_steady_state();
  for (std::size_t i = 0; i < kStateDim; ++i) t.noise.std_dev[i] = cfg.scenario.noise_fraction * xs[i];
  t.noise.mode = cfg.scenario.noise_mode;
  return t;
}

CertificateOptions certificate_options(const RunConfig& cfg) {
  CertificateOptions o;
  o.center_input = cfg.empc.nominal_input;
  o.bounds = cfg.empc.bounds;
  o.manipulated = cfg.empc.manipulated;
  o.sampling_period = cfg.integrator.sampling_period;
  o.initial_rho_scale = cfg.stability.initial_rho_scale;
  o.shrink_factor = cfg.stability.shrink_factor;
  o.samples = cfg.stability.certificate_samples;
  o.rho_s_fraction = cfg.stability.rho_s_fraction;
  o.rho_e_fraction = cfg.stability.rho_e_fraction;
  o.seed = derive_seed(cfg.seed, "certificate");
  return o;
}

EstimationOptions estimation_options(const RunConfig& cfg) {
  EstimationOptions o;
  o.samples = cfg.stability.estimation_samples;
  o.seed = derive_seed(cfg.seed, "estimation");
  o.delta = cfg.stability.delta;
  o.theta_bounds = cfg.agent.theta_bounds;
  o.inflation = cfg.stability.inflation;
  o.sampling_period = cfg.integrator.sampling_period;
  return o;
}

namespace {

StabilityCertificate lyapunov_certificate(const RunConfig& cfg) {
  const CstrModel model(cfg.model);
  StabilityCertificate cert = build_certificate(model, certificate_options(cfg));
  if (!cfg.stability.rho_e_from_theorem) return cert;
  const LipschitzEstimates est = estimate_constants(cert, model_field(model), estimation_options(cfg));
  try {
    cert.rho_e = theorem1_rho_e(cert, est, cfg.integrator.sampling_period);
  } catch (const std::domain_error& e) {
    throw std::runtime_error(std::string(e.what()) +
                             "; set [stability] rho_e_from_theorem = false to use rho_e_fraction instead");
  }
  return cert;
}

}  // namespace

DeployOptions deploy_options(const RunConfig& cfg) {
  DeployOptions o;
  o.empc = synced_empc(cfg);
  o.scenario = cfg.scenario.build(o.empc.nominal_input, derive_seed(cfg.seed, "noise"));
  o.plant = cfg.integrator;
  o.constants = cfg.model;
  o.reward = cfg.agent;
  o.seed = derive_seed(cfg.seed, "noise");
  if (cfg.lyapunov_mode) o.empc.lyapunov = lyapunov_certificate(cfg);
  return o;
}

CompareResult run_compare(const RunConfig& cfg, const FrozenActor& actor) {
  const DeployOptions opt = deploy_options(cfg);
  CompareResult r;
  r.empc_only = deploy(constant_policy(), opt);
  r.empc_rl = deploy(actor_policy(actor), opt);
  r.oracle = deploy(oracle_policy(), opt);
  r.table = improvement_table(r.empc_only.metrics, r.empc_rl.metrics, r.oracle.metrics, opt.scenario.final_time);
  return r;
}

StabilityAudit run_stability_audit(const RunConfig& cfg) {
  const CstrModel model(cfg.model);
  StabilityAudit a;
  a.certificate = build_certificate(model, certificate_options(cfg));
  a.decrease_violations = count_decrease_violations(a.certificate, model, KineticParams::nominal(),
                                                    cfg.stability.certificate_samples,
                                                    derive_seed(cfg.seed, "decrease"));
  a.constants = estimate_constants(a.certificate, model_field(model), estimation_options(cfg));
  const double dt = cfg.integrator.sampling_period;
  a.prop3 = prop3_margin(a.certificate, a.constants, dt);
  PairCheckOptions pc;
  pc.pairs = cfg.stability.pairs;
  pc.horizon = dt;
  pc.step_size = cfg.integrator.step_size;
  pc.theta_bounds = cfg.agent.theta_bounds;
  pc.seed = derive_seed(cfg.seed, "prop1");
  a.prop1 = check_prop1_pairs(a.certificate, model, a.constants, cfg.stability.prop1, pc);
  pc.seed = derive_seed(cfg.seed, "prop2");
  a.prop2 = check_prop2_pairs(a.certificate, model, a.constants, pc);
  try {
    a.theorem1_rho_e = theorem1_rho_e(a.certificate, a.constants, dt);
  } catch (const std::domain_error& e) {
    a.theorem1_error = e.what();
  }
  {
    // Without a valid theorem level the run still goes ahead on the
    // certificate's default rho_e, labelled as such.
    if (a.theorem1_rho_e) a.certificate.rho_e = *a.theorem1_rho_e;
    a.monitored_rho_e_source = a.theorem1_rho_e ? "theorem1" : "certificate_default";
    DeployOptions opt;
    opt.empc = synced_empc(cfg);
    opt.empc.lyapunov = a.certificate;
    ScenarioSpec spec = cfg.scenario;
    spec.deactivation_steps = 0;
    spec.final_time = cfg.stability.audit_periods * dt;
    if (a.certificate.V(spec.initial_state) > a.certificate.rho) spec.initial_state = a.certificate.center;
    opt.scenario = spec.build(opt.empc.nominal_input, derive_seed(cfg.seed, "noise"));
    opt.plant = cfg.integrator;
    opt.constants = cfg.model;
    opt.reward = cfg.agent;
    opt.seed = derive_seed(cfg.seed, "noise");
    a.monitored_run = deploy(constant_policy(), opt);
  }
  return a;
}

json to_json(const StabilityCertificate& c) {
  json P = json::array(), K = json::array();
  for (int i = 0; i < 4; ++i) {
    P.push_back({c.P(i, 0), c.P(i, 1), c.P(i, 2), c.P(i, 3)});
  }
  for (int i = 0; i < 3; ++i) {
    K.push_back({c.K(i, 0), c.K(i, 1), c.K(i, 2), c.K(i, 3)});
  }
  return {{"center", c.center.x},
          {"center_input", c.center_input.u},
          {"P", P},
          {"K", K},
          {"rho", c.rho},
          {"rho_e", c.rho_e},
          {"rho_s", c.rho_s},
          {"alpha3_coeff", c.alpha3_coeff},
          {"lambda_min", c.lambda_min()},
          {"lambda_max", c.lambda_max()},
          {"input_lower", c.bounds.lower.u},
          {"input_upper", c.bounds.upper.u}};
}

json to_json(const LipschitzEstimates& e) {
  return {{"M", e.M},
          {"L_x", e.L_x},
          {"L_theta", e.L_theta},
          {"L_d", e.L_d},
          {"Ls_x", e.Ls_x},
          {"Ls_theta", e.Ls_theta},
          {"Ls_d", e.Ls_d},
          {"delta", e.delta},
          {"beta", e.beta},
          {"nu", e.nu},
          {"eps_s", e.eps_s},
          {"inflation", e.inflation},
          {"note", "empirical lower bounds inflated by the safety factor"},
          {"raw",
           {{"M", e.raw_M},
            {"L_x", e.raw_L_x},
            {"L_theta", e.raw_L_theta},
            {"L_d", e.raw_L_d},
            {"Ls_x", e.raw_Ls_x},
            {"Ls_theta", e.raw_Ls_theta},
            {"Ls_d", e.raw_Ls_d}}}};
}

json to_json(const RunMetrics& m) {
  json seg = json::array();
  for (std::size_t i = 0; i < m.segment_yields.size(); ++i) {
    seg.push_back({{"step", i},
                   {"start", m.segment_starts[i]},
                   {"yield", std::isfinite(m.segment_yields[i]) ? json(m.segment_yields[i]) : json(nullptr)}});
  }
  return {{"yield", m.yield_defined ? json(m.yield) : json(nullptr)},
          {"yield_defined", m.yield_defined},
          {"mean_relative_error", m.mean_relative_error},
          {"max_relative_error", m.max_relative_error},
          {"mean_relative_error_all", m.mean_relative_error_all},
          {"segments", seg},
          {"total_reward", m.total_reward},
          {"clamp_events", m.clamp_events},
          {"region_exits", m.region_exits},
          {"max_v_over_rho", m.max_v_over_rho}};
}

namespace {

json to_json(const PairCheckSummary& s) {
  return {{"pairs", s.pairs},
          {"skipped", s.skipped},
          {"points", s.points},
          {"violations", s.violations},
          {"worst_margin", s.worst_margin}};
}

}  // namespace

json to_json(const StabilityAudit& a) {
  json j;
  j["certificate"] = to_json(a.certificate);
  j["constants"] = to_json(a.constants);
  j["decrease_violations"] = a.decrease_violations;
  j["prop3"] = {{"lhs", a.prop3.lhs}, {"eps_s", a.prop3.eps_s}, {"satisfied", a.prop3.satisfied}};
  j["theorem1_rho_e"] = a.theorem1_rho_e ? json(*a.theorem1_rho_e) : json(nullptr);
  if (!a.theorem1_error.empty()) j["theorem1_error"] = a.theorem1_error;
  j["prop1_pairs"] = to_json(a.prop1);
  j["prop2_pairs"] = to_json(a.prop2);
  j["monitored_run"] = a.monitored_run ? to_json(a.monitored_run->metrics) : json(nullptr);
  j["monitored_rho_e_source"] = a.monitored_rho_e_source;
  return j;
}

namespace {

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
  os << s;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

template <class Writer>
void write_csv(const fs::path& p, Writer w) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
  w(os);
}

json header_json(const RunConfig& cfg, const std::string& hash) {
  return {{"config_hash", hash}, {"seed", cfg.seed}, {"version", kToolVersion}, {"mode", to_string(cfg.mode)}};
}

FrozenActor require_weights(const RunConfig& cfg) {
  if (cfg.weights.empty() || !fs::exists(cfg.weights)) {
    throw std::runtime_error("weights not found: '" + cfg.weights + "'");
  }
  return load_actor_file(cfg.weights);
}

double mean_of(const std::vector<double>& v, std::size_t first, std::size_t count) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = first; i < std::min(v.size(), first + count); ++i, ++n) s += v[i];
  return n ? s / n : 0.0;
}

void run_mode(const RunConfig& cfg, const fs::path& out, const std::string& hash) {
  const CsvProvenance prov{hash, cfg.seed, kToolVersion};
  switch (cfg.mode) {
    case RunMode::train: {
      const TrainingResult r = train(training_config(cfg), synced_empc(cfg), cfg.agent, cfg.integrator,
                                     [](int ep, double avg) {
                                       std::fprintf(stderr, "episode %d average reward %.4f\n", ep + 1, avg);
                                     });
      FrozenActor actor = r.actor;
      actor.config_hash = hash;
      save_actor_file((out / "weights.bin").string(), actor);
      write_csv(out / "reward_curve.csv", [&](std::ostream& os) { write_reward_csv(os, r, prov); });
      const std::size_t n = r.episode_rewards.size();
      const std::size_t w = std::min<std::size_t>(50, n);
      json j = header_json(cfg, hash);
      j["episodes"] = n;
      j["aborted_episodes"] = r.aborted_episodes;
      j["empc_solves"] = r.empc_solves;
      j["agent_updates"] = r.agent_updates;
      j["reward_slope"] = least_squares_slope(r.episode_rewards);
      j["first_window_mean"] = mean_of(r.episode_rewards, 0, w);
      j["last_window_mean"] = mean_of(r.episode_rewards, n - w, w);
      write_json(out / "training.json", j);
      break;
    }
    case RunMode::deploy: {
      const DeployOptions opt = deploy_options(cfg);
      ThetaPolicy policy = constant_policy();
      if (cfg.policy == PolicyKind::actor) policy = actor_policy(require_weights(cfg));
      if (cfg.policy == PolicyKind::oracle) policy = oracle_policy();
      const DeployResult r = deploy(policy, opt);
      write_csv(out / "trajectory.csv", [&](std::ostream& os) { write_trajectory_csv(os, r.trajectory, prov); });
      json j = header_json(cfg, hash);
      j["policy"] = policy.name;
      j["metrics"] = to_json(r.metrics);
      if (opt.empc.lyapunov) j["certificate"] = to_json(*opt.empc.lyapunov);
      write_json(out / "metrics.json", j);
      break;
    }
    case RunMode::compare: {
      const CompareResult r = run_compare(cfg, require_weights(cfg));
      write_csv(out / "improvement.csv", [&](std::ostream& os) { write_improvement_csv(os, r.table, prov); });
      json j = header_json(cfg, hash);
      for (const auto* run : {&r.empc_only, &r.empc_rl, &r.oracle}) {
        const std::string name = run == &r.empc_only ? "empc_only" : run == &r.empc_rl ? "empc_rl" : "oracle";
        write_csv(out / ("trajectory_" + name + ".csv"),
                  [&](std::ostream& os) { write_trajectory_csv(os, run->trajectory, prov); });
        j["runs"][name] = to_json(run->metrics);
      }
      write_json(out / "metrics.json", j);
      break;
    }
    case RunMode::stability_audit: {
      const StabilityAudit a = run_stability_audit(cfg);
      json j = header_json(cfg, hash);
      j["audit"] = to_json(a);
      write_json(out / "stability_audit.json", j);
      json c = header_json(cfg, hash);
      c["certificate"] = to_json(a.certificate);
      c["constants"] = to_json(a.constants);
      write_json(out / "certificate.json", c);
      if (a.monitored_run) {
        write_csv(out / "trajectory_lyapunov.csv",
                  [&](std::ostream& os) { write_trajectory_csv(os, a.monitored_run->trajectory, prov); });
      }
      break;
    }
  }
}

}  // namespace

int run(const RunConfig& cfg) {
  const fs::path out(cfg.output_dir);
  const std::string hash = config_hash(cfg);
  try {
    cfg.validate();
    fs::create_directories(out);
    write_text(out / "config.effective.ini", serialize_config(cfg));
    run_mode(cfg, out, hash);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    try {
      fs::create_directories(out);
      json j = header_json(cfg, hash);
      j["status"] = "error";
      j["error"] = e.what();
      write_json(out / "error.json", j);
    } catch (const std::exception&) {
      // Nothing more can be reported if the output directory is unusable.
    }
    return 1;
  }
}

}  // namespace rlempc
