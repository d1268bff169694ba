#pragma once

// Run configuration: a sectioned key/value text format, its canonical
// serialization and hash, and the mode dispatcher that writes artifacts.
//
//   version = 1
//   [run]
//   mode = compare
//   seed = 7
//   [empc]
//   horizon = 10
//
// '#' and ';' start comments. Unknown sections or keys are errors.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "rlempc/ddpg.hpp"
#include "rlempc/empc.hpp"
#include "rlempc/orchestrator.hpp"
#include "rlempc/sim.hpp"
#include "rlempc/stability.hpp"

namespace rlempc {

inline constexpr const char* kToolVersion = "rlempc-1.0.0";
inline constexpr int kConfigVersion = 1;
inline constexpr const char* kOutDirEnv = "RLEMPC_OUT_DIR";

enum class RunMode { train, deploy, compare, stability_audit };
enum class PolicyKind { actor, oracle, constant };

std::string to_string(RunMode m);
RunMode parse_run_mode(const std::string& s);
std::string to_string(PolicyKind p);
PolicyKind parse_policy_kind(const std::string& s);

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScenarioSpec {
  double final_time = 120.0;
  /// Deactivation steps spread evenly over the run (0 = fresh catalyst).
  int deactivation_steps = 0;
  bool noise = false;
  /// Noise standard deviation as a fraction of the reported steady state.
  double noise_fraction = 0.005;
  NoiseMode noise_mode = NoiseMode::state_rate;
  SpikeConfig spike;
  PlantState initial_state = PlantState::reported_steady_state();

  ScenarioState build(const ControlInput& nominal_input, std::uint64_t noise_seed) const;
  void validate() const;
};

struct StabilitySpec {
  double initial_rho_scale = 4.0;
  double shrink_factor = 0.8;
  int certificate_samples = 4000;
  double rho_s_fraction = 0.02;
  int estimation_samples = 2000;
  double delta = 0.01;
  double inflation = 1.5;
  Prop1Variant prop1 = Prop1Variant::as_printed;
  int pairs = 100;
  int audit_periods = 100;
  /// Lyapunov mode's rho_e: the constants-derived bound (an error when it has
  /// no valid value) or rho_e_fraction * rho.
  bool rho_e_from_theorem = true;
  double rho_e_fraction = 0.5;

  void validate() const;
};

struct RunConfig {
  int version = kConfigVersion;
  RunMode mode = RunMode::deploy;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  std::string weights;
  PolicyKind policy = PolicyKind::actor;
  ModelConstants model;
  IntegratorConfig integrator;
  EmpcConfig empc;
  bool lyapunov_mode = false;
  AgentConfig agent;
  TrainingConfig training;
  ScenarioSpec scenario;
  StabilitySpec stability;

  void validate() const;
};

/// Throws ConfigError with line and section context.
RunConfig parse_config(const std::string& text);
RunConfig load_config_file(const std::string& path);

/// Canonical text: every key, fixed order, 17 significant digits.
std::string serialize_config(const RunConfig& cfg);
/// FNV-1a 64 of the canonical text with output_dir and weights blanked, as
/// 16 hex digits.
std::string config_hash(const RunConfig& cfg);

/// --out beats the environment variable, which beats the config file.
std::string resolve_output_dir(const std::string& from_config, const char* env_value,
                               const std::optional<std::string>& from_cli);

/// Subsystem configs with every seed derived from the root seed.
TrainingConfig training_config(const RunConfig& cfg);
DeployOptions deploy_options(const RunConfig& cfg);
CertificateOptions certificate_options(const RunConfig& cfg);
EstimationOptions estimation_options(const RunConfig& cfg);

struct CompareResult {
  DeployResult empc_only, empc_rl, oracle;
  std::vector<ImprovementRow> table;
};

CompareResult run_compare(const RunConfig& cfg, const FrozenActor& actor);

struct StabilityAudit {
  StabilityCertificate certificate;
  LipschitzEstimates constants;
  int decrease_violations = 0;
  Prop3Result prop3;
  std::optional<double> theorem1_rho_e;
  std::string theorem1_error;
  PairCheckSummary prop1;
  PairCheckSummary prop2;
  /// Lyapunov-constrained closed loop on the nominal plant.
  std::optional<DeployResult> monitored_run;
  /// "theorem1" when the run used the theorem's rho_e, otherwise
  /// "certificate_default".
  std::string monitored_rho_e_source;
};

StabilityAudit run_stability_audit(const RunConfig& cfg);

nlohmann::json to_json(const StabilityCertificate& c);
nlohmann::json to_json(const LipschitzEstimates& e);
nlohmann::json to_json(const RunMetrics& m);
nlohmann::json to_json(const StabilityAudit& a);

/// Executes the configured mode and writes its artifacts into
/// cfg.output_dir. Returns the process exit status; on failure an
/// error.json report is written and the message goes to stderr.
int run(const RunConfig& cfg);

}  // namespace rlempc
