#include "ecpr/gates.hpp"

#include <cmath>
#include <stdexcept>

#include "ecpr/nn.hpp"

namespace ecpr {

void HardConcreteGate::validate() const {
  if (!(gamma < 0.0 && zeta > 1.0))
    throw std::invalid_argument("HardConcreteGate: need gamma < 0 < 1 < zeta");
  if (!(beta > 0.0 && beta <= 1.0))
    throw std::invalid_argument("HardConcreteGate: need beta in (0,1]");
}

GateSample hc_sample(const HardConcreteGate& gate, double m) {
  if (!(m > 0.0 && m < 1.0))
    throw std::domain_error("hc_sample: noise draw must lie strictly in (0,1)");
  GateSample out;
  out.m = m;
  out.s = sigmoid((std::log(m) - std::log1p(-m) + gate.log_alpha) / gate.beta);
  out.s_bar = out.s * (gate.zeta - gate.gamma) + gate.gamma;
  out.z = std::min(1.0, std::max(out.s_bar, 0.0));
  return out;
}

double hc_sample_grad_log_alpha(const HardConcreteGate& gate, const GateSample& sample) {
  if (sample.s_bar <= 0.0 || sample.s_bar >= 1.0) return 0.0;
  return sample.s * (1.0 - sample.s) / gate.beta * (gate.zeta - gate.gamma);
}

double hc_expected_l0(const HardConcreteGate& gate) {
  return sigmoid(gate.log_alpha - gate.beta * std::log(-gate.gamma / gate.zeta));
}

double hc_expected_l0_grad_log_alpha(const HardConcreteGate& gate) {
  const double p = hc_expected_l0(gate);
  return p * (1.0 - p);
}

double hc_test_gate(const HardConcreteGate& gate) {
  const double stretched = sigmoid(gate.log_alpha) * (gate.zeta - gate.gamma) + gate.gamma;
  return std::min(1.0, std::max(0.0, stretched));
}

std::vector<double> feature_gate(const std::vector<double>& e, const Tensor2D& wg) {
  const int d = static_cast<int>(e.size());
  if (wg.rows != d || wg.cols != d)
    throw std::invalid_argument("feature_gate: mapping matrix " + wg.shape_str() +
                                " must be square of dim " + std::to_string(d));
  std::vector<double> out(e.size());
  for (int j = 0; j < d; ++j) {
    double u = 0.0;
    for (int i = 0; i < d; ++i) u += e[i] * wg(i, j);
    out[j] = e[j] * sigmoid(u);
  }
  return out;
}

}  // namespace ecpr
