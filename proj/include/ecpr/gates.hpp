#pragma once

#include <vector>

#include "ecpr/tensor.hpp"

namespace ecpr {

// Stretched-and-clipped binary concrete gate. The stretched interval
// (gamma, zeta) must strictly contain [0, 1] so the clipped variable keeps
// point masses at both 0 and 1.
struct HardConcreteGate {
  double log_alpha = 0.0;
  double beta = 0.7;
  double gamma = -0.1;
  double zeta = 1.1;

  void validate() const;  // throws std::invalid_argument on a bad hyper range
};

struct GateSample {
  double m = 0.0;      // uniform noise in (0,1)
  double s = 0.0;      // concrete sample
  double s_bar = 0.0;  // stretched sample
  double z = 0.0;      // clipped gate in [0,1]
};

// s = sigmoid((log m - log(1-m) + log_alpha)/beta), s_bar = s(zeta-gamma)+gamma,
// z = min(1, max(s_bar, 0)). Throws std::domain_error unless m is in (0,1).
GateSample hc_sample(const HardConcreteGate& gate, double m);

// dz/dlog_alpha at a frozen draw m; zero in the clipped regions.
double hc_sample_grad_log_alpha(const HardConcreteGate& gate, const GateSample& sample);

// P(z != 0) = sigmoid(log_alpha - beta*log(-gamma/zeta)), the expected-L0 mass
// of one gate.
double hc_expected_l0(const HardConcreteGate& gate);
double hc_expected_l0_grad_log_alpha(const HardConcreteGate& gate);

// Noise-free inference gate: min(1, max(0, sigmoid(log_alpha)*(zeta-gamma)+gamma)).
double hc_test_gate(const HardConcreteGate& gate);

// Input feature gate E' = E (.) sigmoid(Wg^T E) for a single vector.
std::vector<double> feature_gate(const std::vector<double>& e, const Tensor2D& wg);

}  // namespace ecpr
