#pragma once

#include <map>
#include <memory>
#include <string>

#include "ecpr/config.hpp"
#include "ecpr/model.hpp"
#include "ecpr/tensor.hpp"

namespace ecpr {

// Text checkpoint, 17 significant digits per value so doubles round-trip
// exactly and save -> load -> save is byte-identical.
void save_checkpoint(const std::string& path, const Model& model,
                     const ExperimentConfig& config);

struct LoadedCheckpoint {
  std::string model_kind;
  ExperimentConfig config;
  std::map<std::string, Tensor2D> tensors;
};

LoadedCheckpoint read_checkpoint(const std::string& path);

// Rebuilds the model from the config echo and the stored tensors; predictions
// after loading are bitwise identical to the saved model's.
std::unique_ptr<Model> model_from_checkpoint(const std::string& path,
                                             ExperimentConfig* config_out = nullptr);

}  // namespace ecpr
