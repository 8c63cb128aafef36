#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "ecpr/model.hpp"
#include "ecpr/sim.hpp"

namespace ecpr {

// Raised for malformed config files, unknown keys and bad CLI parameter
// combinations; the CLI maps it to exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct ExperimentConfig {
  uint64_t seed = 1;
  CascadeConfig sim;
  std::string model = "ecm";
  std::string training_domain = "entire_chain";  // or exposure_only
  int towers = 3;
  double lambda_l0 = 1e-5;
  double hc_beta = 0.7;
  double hc_gamma = -0.1;
  double hc_zeta = 1.1;
  std::string gate_placement = "routing_and_towers";  // or routing_only
  double learning_rate = 1e-3;
  int batch_size = 256;
  int epochs = 5;
  int64_t max_steps = 0;  // 0: epoch-driven; >0: fixed gradient-step budget
  std::vector<int> eval_ks = {1, 10, 50};
  std::string feature_subset = "all";  // or half

  void validate() const;  // throws ConfigError
};

// Flat "key = value" text with '#' comments; unknown keys are hard errors.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);
std::string serialize_config(const ExperimentConfig& config);

// Model spec for this config against a training split (vocabulary sizes come
// from the data; the feature subset picks the active fields).
ModelSpec build_model_spec(const ExperimentConfig& config, const Dataset& train);

std::vector<int> active_fields_for(const std::string& feature_subset, int fields);

}  // namespace ecpr
