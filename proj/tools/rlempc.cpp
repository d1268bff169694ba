// Command-line entry point: rlempc --mode <m> [--config file] [--seed n]
// [--out dir] [--weights path]

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "rlempc/config.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Economic MPC with a learned kinetic-parameter estimator"};
  std::string config_path;
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> weights;
  bool print_config = false;
  app.add_option("--config", config_path, "Run configuration file (sectioned key = value)");
  app.add_option("--mode", mode, "train | deploy | compare | stability-audit")
      ->check(CLI::IsMember({"train", "deploy", "compare", "stability-audit"}));
  app.add_option("--seed", seed, "Root seed for every random stream");
  app.add_option("--out", out, "Output directory (overrides RLEMPC_OUT_DIR and the config)");
  app.add_option("--weights", weights, "Actor weights file");
  app.add_flag("--print-config", print_config, "Print the effective configuration and exit");
  CLI11_PARSE(app, argc, argv);

  rlempc::RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = rlempc::load_config_file(config_path);
    if (mode) cfg.mode = rlempc::parse_run_mode(*mode);
    if (seed) cfg.seed = *seed;
    if (weights) cfg.weights = *weights;
    cfg.output_dir = rlempc::resolve_output_dir(cfg.output_dir, std::getenv(rlempc::kOutDirEnv), out);
    cfg.validate();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  if (print_config) {
    std::cout << rlempc::serialize_config(cfg);
    return 0;
  }
  return rlempc::run(cfg);
}
