#pragma once

#include <string>
#include <vector>

#include "ecpr/model.hpp"
#include "ecpr/nn.hpp"

namespace ecpr {

// Finite-difference check of a model's full loss gradient on one simulated
// minibatch of 16 with frozen gate noise. Uses a scaled-down architecture so
// every coordinate can be swept.
GradCheckResult gradcheck_model(ModelKind kind, uint64_t seed);

struct NamedGradCheck {
  std::string model;
  GradCheckResult result;
};

std::vector<NamedGradCheck> gradcheck_all(uint64_t seed);

}  // namespace ecpr
