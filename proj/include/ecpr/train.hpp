#pragma once

#include <iosfwd>
#include <vector>

#include "ecpr/config.hpp"
#include "ecpr/model.hpp"
#include "ecpr/sim.hpp"

namespace ecpr {

// Drops everything below the exposure stage for exposure_only training;
// entire_chain keeps the full split.
Dataset filter_training_domain(const Dataset& data, const std::string& training_domain);

// Gradient steps an epoch-driven run over n samples would take.
int64_t budget_steps(int64_t n_samples, int batch_size, int epochs);

struct TrainResult {
  int64_t steps = 0;
  std::vector<double> epoch_mean_loss;
  std::vector<double> epoch_seconds;
  bool aborted = false;  // non-finite loss; params restored to last epoch start
};

// Minibatch Adam over seeded shuffles. With config.max_steps > 0 the loop
// runs exactly that many steps (cycling epochs), otherwise config.epochs
// passes. On a non-finite loss the parameters are rolled back to the last
// epoch boundary and the result is marked aborted.
TrainResult train_loop(Model& model, const Dataset& train, const ExperimentConfig& config,
                       std::ostream* log);

}  // namespace ecpr
