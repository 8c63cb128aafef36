#pragma once

#include "ecpr/model.hpp"

namespace ecpr {

// Feature gate, shared layer, two routed sub-network layers (8 then 4) and
// one sigmoid tower per target. Every routing connection carries a learnable
// scalar times a hard-concrete gate; weights are normalized per destination
// so the mix stays an average.
class EcmmModel : public Model {
 public:
  EcmmModel(ModelSpec spec, uint64_t seed);

  std::vector<HeadsRow> forward(const Dataset& data, std::span<const int64_t> idx,
                                const GateNoise* noise) const override;
  double loss(const Dataset& data, std::span<const int64_t> idx, const GateNoise* noise,
              bool want_grad) override;
  double expected_active_gates() const override;

  void set_routing_override(RoutingOverride o) { override_ = o; }
  const RoutingOverride& routing_override() const { return override_; }

 private:
  struct RoutePlan {
    Tensor2D z;                 // gate value per connection
    Tensor2D s;                 // concrete sample (stochastic plans)
    Tensor2D s_bar;             // stretched sample
    Tensor2D n;                 // r * z
    std::vector<double> denom;  // per destination column
    Tensor2D w;                 // normalized mixing weight
    bool stochastic = false;
    bool gated = false;
  };

  struct Cache {
    Tensor2D x, u, g, xg;
    std::vector<Tensor2D> shared_cache;
    std::vector<std::vector<Tensor2D>> sub1_cache, sub2_cache, tower_cache;
    std::vector<Tensor2D> o1, in2, o2, tower_in;
    std::vector<Tensor2D> logits;  // per tower, b x 1
    RoutePlan plan1, plan2;
  };

  HardConcreteGate gate_at(const Tensor2D& la, int i, int j) const;
  RoutePlan make_plan(const std::string& r_name, const std::string& la_name, bool gated,
                      const Tensor2D* noise_m) const;
  void plan_backward(const RoutePlan& plan, const Tensor2D& d_w, const std::string& r_name,
                     const std::string& la_name);
  std::vector<HeadsRow> run_forward(const Dataset& data, std::span<const int64_t> idx,
                                    const GateNoise* noise, Cache* cache) const;
  HeadsRow heads_from(const std::vector<double>& probs) const;

  MlpStack shared_;
  std::vector<MlpStack> sub1_, sub2_, towers_;
  RoutingOverride override_;
};

}  // namespace ecpr
