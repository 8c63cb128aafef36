#include "ecpr/ecmm.hpp"

#include <cmath>
#include <stdexcept>

namespace ecpr {

namespace {

constexpr double kRouteEps = 1e-8;

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Weighted sum of equally shaped sources reduced as a pairwise tree, so a
// power-of-two count of identical scaled inputs sums without rounding.
Tensor2D mix_sources(const std::vector<Tensor2D>& src, const Tensor2D& w, int col) {
  std::vector<Tensor2D> terms;
  terms.reserve(src.size());
  for (size_t i = 0; i < src.size(); ++i) {
    Tensor2D t = src[i];
    const double wi = w(static_cast<int>(i), col);
    for (double& v : t.data) v *= wi;
    terms.push_back(std::move(t));
  }
  while (terms.size() > 1) {
    std::vector<Tensor2D> next;
    next.reserve((terms.size() + 1) / 2);
    for (size_t p = 0; p + 1 < terms.size(); p += 2) {
      for (size_t q = 0; q < terms[p].data.size(); ++q) terms[p].data[q] += terms[p + 1].data[q];
      next.push_back(std::move(terms[p]));
    }
    if (terms.size() % 2 == 1) next.push_back(std::move(terms.back()));
    terms.swap(next);
  }
  return std::move(terms.front());
}

double frobenius_dot(const Tensor2D& a, const Tensor2D& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) acc += a.data[i] * b.data[i];
  return acc;
}

}  // namespace

EcmmModel::EcmmModel(ModelSpec spec, uint64_t seed) : Model(std::move(spec)) {
  if (spec_.kind != ModelKind::kEcmm)
    throw std::invalid_argument("EcmmModel: spec kind must be ecmm");
  if (spec_.towers != 3 && spec_.towers != 4)
    throw std::invalid_argument("EcmmModel: tower count must be 3 or 4");
  HardConcreteGate{0.0, spec_.hc_beta, spec_.hc_gamma, spec_.hc_zeta}.validate();

  add_embedding_params(seed);
  const int d = spec_.input_dim();
  params_.add("fgate.Wg", glorot_uniform(d, d, seed, "fgate.Wg"));

  shared_ = {"shared", {d, spec_.sizes.shared_width}, /*relu_last=*/true};
  shared_.add_params(params_, seed);

  for (int i = 0; i < spec_.sizes.sub1_count; ++i) {
    sub1_.push_back({"sub1." + std::to_string(i),
                     {spec_.sizes.shared_width, spec_.sizes.sub_width, spec_.sizes.sub_width},
                     /*relu_last=*/true});
    sub1_.back().add_params(params_, seed);
  }
  for (int j = 0; j < spec_.sizes.sub2_count; ++j) {
    sub2_.push_back({"sub2." + std::to_string(j),
                     {spec_.sizes.sub_width, spec_.sizes.sub_width, spec_.sizes.sub_width},
                     /*relu_last=*/true});
    sub2_.back().add_params(params_, seed);
  }
  for (int t = 0; t < spec_.towers; ++t) {
    MlpStack tower{"tower." + std::to_string(t), {spec_.sizes.sub_width}, false};
    for (int h : spec_.sizes.tower_hidden) tower.dims.push_back(h);
    tower.dims.push_back(1);
    towers_.push_back(tower);
    towers_.back().add_params(params_, seed);
  }

  Tensor2D r1(spec_.sizes.sub1_count, spec_.sizes.sub2_count);
  r1.fill(1.0);
  params_.add("route1.r", std::move(r1));
  Tensor2D la1(spec_.sizes.sub1_count, spec_.sizes.sub2_count);
  la1.fill(2.0);  // start with gates mostly open so gradients flow
  params_.add("route1.la", std::move(la1));

  Tensor2D r2(spec_.sizes.sub2_count, spec_.towers);
  r2.fill(1.0);
  params_.add("route2.r", std::move(r2));
  if (spec_.gates_on_towers) {
    Tensor2D la2(spec_.sizes.sub2_count, spec_.towers);
    la2.fill(2.0);
    params_.add("route2.la", std::move(la2));
  }
}

HardConcreteGate EcmmModel::gate_at(const Tensor2D& la, int i, int j) const {
  return HardConcreteGate{la(i, j), spec_.hc_beta, spec_.hc_gamma, spec_.hc_zeta};
}

EcmmModel::RoutePlan EcmmModel::make_plan(const std::string& r_name, const std::string& la_name,
                                          bool gated, const Tensor2D* noise_m) const {
  const Tensor2D& r = params_.value(r_name);
  RoutePlan plan;
  plan.z = Tensor2D(r.rows, r.cols);
  plan.s = Tensor2D(r.rows, r.cols);
  plan.s_bar = Tensor2D(r.rows, r.cols);
  plan.gated = gated && !override_.force_open_gates;
  if (plan.gated) {
    const Tensor2D& la = params_.value(la_name);
    plan.stochastic = noise_m != nullptr;
    for (int i = 0; i < r.rows; ++i) {
      for (int j = 0; j < r.cols; ++j) {
        const HardConcreteGate g = gate_at(la, i, j);
        if (noise_m) {
          const GateSample gs = hc_sample(g, (*noise_m)(i, j));
          plan.z(i, j) = gs.z;
          plan.s(i, j) = gs.s;
          plan.s_bar(i, j) = gs.s_bar;
        } else {
          plan.z(i, j) = hc_test_gate(g);
          plan.s(i, j) = sigmoid(g.log_alpha);
          plan.s_bar(i, j) = plan.s(i, j) * (g.zeta - g.gamma) + g.gamma;
        }
      }
    }
  } else {
    plan.z.fill(1.0);
  }

  plan.n = Tensor2D(r.rows, r.cols);
  plan.denom.assign(r.cols, kRouteEps);
  plan.w = Tensor2D(r.rows, r.cols);
  for (int i = 0; i < r.rows; ++i)
    for (int j = 0; j < r.cols; ++j) {
      plan.n(i, j) = r(i, j) * plan.z(i, j);
      plan.denom[j] += std::abs(plan.n(i, j));
    }
  if (override_.uniform_routing) {
    plan.w.fill(1.0 / static_cast<double>(r.rows));
  } else {
    for (int i = 0; i < r.rows; ++i)
      for (int j = 0; j < r.cols; ++j) plan.w(i, j) = plan.n(i, j) / plan.denom[j];
  }
  return plan;
}

void EcmmModel::plan_backward(const RoutePlan& plan, const Tensor2D& d_w,
                              const std::string& r_name, const std::string& la_name) {
  if (override_.uniform_routing) return;
  const Tensor2D& r = params_.value(r_name);
  Tensor2D& gr = params_.grad(r_name);
  Tensor2D* gla = plan.gated ? &params_.grad(la_name) : nullptr;
  for (int j = 0; j < r.cols; ++j) {
    double coupled = 0.0;
    for (int k = 0; k < r.rows; ++k) coupled += d_w(k, j) * plan.n(k, j);
    const double d2 = plan.denom[j] * plan.denom[j];
    for (int i = 0; i < r.rows; ++i) {
      const double dn = d_w(i, j) / plan.denom[j] - sign_of(plan.n(i, j)) * coupled / d2;
      gr(i, j) += dn * plan.z(i, j);
      if (gla) {
        double dz_dla = 0.0;
        if (plan.s_bar(i, j) > 0.0 && plan.s_bar(i, j) < 1.0) {
          const double s = plan.s(i, j);
          double slope = s * (1.0 - s) * (spec_.hc_zeta - spec_.hc_gamma);
          if (plan.stochastic) slope /= spec_.hc_beta;
          dz_dla = slope;
        }
        (*gla)(i, j) += dn * r(i, j) * dz_dla;
      }
    }
  }
}

std::vector<HeadsRow> EcmmModel::run_forward(const Dataset& data, std::span<const int64_t> idx,
                                             const GateNoise* noise, Cache* cache) const {
  Cache local;
  Cache& c = cache ? *cache : local;
  const int b = static_cast<int>(idx.size());
  const int d = spec_.input_dim();

  c.x = embed(data, idx);
  c.u = Tensor2D(b, d);
  matmul(c.x, params_.value("fgate.Wg"), c.u, /*accumulate=*/false);
  c.g = Tensor2D(b, d);
  c.xg = Tensor2D(b, d);
  for (size_t i = 0; i < c.u.data.size(); ++i) {
    c.g.data[i] = sigmoid(c.u.data[i]);
    c.xg.data[i] = c.x.data[i] * c.g.data[i];
  }

  const Tensor2D h = shared_.forward(params_, c.xg, &c.shared_cache);

  c.o1.clear();
  c.sub1_cache.assign(sub1_.size(), {});
  for (size_t i = 0; i < sub1_.size(); ++i)
    c.o1.push_back(sub1_[i].forward(params_, h, &c.sub1_cache[i]));

  c.plan1 = make_plan("route1.r", "route1.la", /*gated=*/true,
                      noise ? &noise->route1_m : nullptr);
  c.in2.clear();
  for (size_t j = 0; j < sub2_.size(); ++j)
    c.in2.push_back(mix_sources(c.o1, c.plan1.w, static_cast<int>(j)));

  c.o2.clear();
  c.sub2_cache.assign(sub2_.size(), {});
  for (size_t j = 0; j < sub2_.size(); ++j)
    c.o2.push_back(sub2_[j].forward(params_, c.in2[j], &c.sub2_cache[j]));

  c.plan2 = make_plan("route2.r", "route2.la", spec_.gates_on_towers,
                      noise ? &noise->route2_m : nullptr);
  c.tower_in.clear();
  c.logits.clear();
  c.tower_cache.assign(towers_.size(), {});
  for (size_t t = 0; t < towers_.size(); ++t) {
    c.tower_in.push_back(mix_sources(c.o2, c.plan2.w, static_cast<int>(t)));
    c.logits.push_back(towers_[t].forward(params_, c.tower_in[t], &c.tower_cache[t]));
  }

  std::vector<HeadsRow> out(idx.size());
  std::vector<double> probs(towers_.size());
  for (size_t k = 0; k < idx.size(); ++k) {
    for (size_t t = 0; t < towers_.size(); ++t) probs[t] = sigmoid(c.logits[t].data[k]);
    out[k] = heads_from(probs);
  }
  return out;
}

HeadsRow EcmmModel::heads_from(const std::vector<double>& probs) const {
  HeadsRow h;
  h.t1 = probs[0];
  h.t2 = probs[1];
  h.t3 = probs[2];
  h.t4 = probs.size() > 3 ? probs[3] : 0.0;
  h.petctr = h.t1;
  h.petr = clamp_prob(h.t1 + h.t2);
  h.pctr = h.t1 / h.petr;
  h.pitr = probs.size() > 3 ? h.t3 + h.t4 : h.t3;
  h.has_t2 = true;
  h.has_petr = true;
  return h;
}

std::vector<HeadsRow> EcmmModel::forward(const Dataset& data, std::span<const int64_t> idx,
                                         const GateNoise* noise) const {
  return run_forward(data, idx, noise, nullptr);
}

double EcmmModel::loss(const Dataset& data, std::span<const int64_t> idx, const GateNoise* noise,
                       bool want_grad) {
  Cache c;
  run_forward(data, idx, noise, &c);
  const int b = static_cast<int>(idx.size());
  const double inv_b = 1.0 / static_cast<double>(b);
  const int tower_count = static_cast<int>(towers_.size());

  double total = 0.0;
  std::vector<Tensor2D> d_prob(tower_count, Tensor2D(b, 1));
  for (int k = 0; k < b; ++k) {
    const CascadeSample& s = data.samples[idx[k]];
    if (s.y6 > s.y5)
      throw std::invalid_argument("ecmm loss: click without exposure at request " +
                                  std::to_string(s.request_id));
    const double p1 = sigmoid(c.logits[0].data[k]);
    const double p2 = sigmoid(c.logits[1].data[k]);
    const double p3 = sigmoid(c.logits[2].data[k]);
    const double etr = clamp_prob(p1 + p2);

    total += bce_loss(s.y6, p1) + bce_loss(s.y5, etr);
    d_prob[0].data[k] = bce_grad(s.y6, p1) * inv_b;
    const double d_etr = bce_grad(s.y5, etr) * inv_b;
    d_prob[0].data[k] += d_etr;
    d_prob[1].data[k] = d_etr;

    if (tower_count == 3) {
      total += bce_loss(1 - s.y5, p3);
      d_prob[2].data[k] = bce_grad(1 - s.y5, p3) * inv_b;
    } else {
      const int y3 = (s.deepest_stage == 3 || s.deepest_stage == 4) ? 1 : 0;
      const int y4 = s.deepest_stage == 2 ? 1 : 0;
      const double p4 = sigmoid(c.logits[3].data[k]);
      total += bce_loss(y3, p3) + bce_loss(y4, p4);
      d_prob[2].data[k] = bce_grad(y3, p3) * inv_b;
      d_prob[3].data[k] = bce_grad(y4, p4) * inv_b;
    }
  }
  total *= inv_b;

  // Expected-L0 penalty over every gated connection.
  if (spec_.lambda_l0 != 0.0) {
    const Tensor2D& la1 = params_.value("route1.la");
    for (int i = 0; i < la1.rows; ++i)
      for (int j = 0; j < la1.cols; ++j)
        total += spec_.lambda_l0 * hc_expected_l0(gate_at(la1, i, j));
    if (spec_.gates_on_towers) {
      const Tensor2D& la2 = params_.value("route2.la");
      for (int i = 0; i < la2.rows; ++i)
        for (int j = 0; j < la2.cols; ++j)
          total += spec_.lambda_l0 * hc_expected_l0(gate_at(la2, i, j));
    }
  }

  if (!want_grad) return total;

  // Towers.
  std::vector<Tensor2D> d_tower_in;
  for (int t = 0; t < tower_count; ++t) {
    Tensor2D d_logit(b, 1);
    for (int k = 0; k < b; ++k) {
      const double p = sigmoid(c.logits[t].data[k]);
      d_logit.data[k] = d_prob[t].data[k] * p * (1.0 - p);
    }
    d_tower_in.push_back(towers_[t].backward(params_, c.tower_cache[t], std::move(d_logit)));
  }

  // Tower-input routing.
  const int n2 = static_cast<int>(sub2_.size());
  Tensor2D d_w2(n2, tower_count);
  std::vector<Tensor2D> d_o2(n2, Tensor2D(b, spec_.sizes.sub_width));
  for (int t = 0; t < tower_count; ++t)
    for (int j = 0; j < n2; ++j) {
      const double w = c.plan2.w(j, t);
      for (size_t q = 0; q < d_tower_in[t].data.size(); ++q)
        d_o2[j].data[q] += w * d_tower_in[t].data[q];
      d_w2(j, t) = frobenius_dot(d_tower_in[t], c.o2[j]);
    }
  plan_backward(c.plan2, d_w2, "route2.r", "route2.la");

  // Second sub-layer.
  std::vector<Tensor2D> d_in2;
  for (int j = 0; j < n2; ++j)
    d_in2.push_back(sub2_[j].backward(params_, c.sub2_cache[j], std::move(d_o2[j])));

  // Sub-layer routing.
  const int n1 = static_cast<int>(sub1_.size());
  Tensor2D d_w1(n1, n2);
  std::vector<Tensor2D> d_o1(n1, Tensor2D(b, spec_.sizes.sub_width));
  for (int j = 0; j < n2; ++j)
    for (int i = 0; i < n1; ++i) {
      const double w = c.plan1.w(i, j);
      for (size_t q = 0; q < d_in2[j].data.size(); ++q)
        d_o1[i].data[q] += w * d_in2[j].data[q];
      d_w1(i, j) = frobenius_dot(d_in2[j], c.o1[i]);
    }
  plan_backward(c.plan1, d_w1, "route1.r", "route1.la");

  // First sub-layer into the shared representation.
  Tensor2D d_h(b, spec_.sizes.shared_width);
  for (int i = 0; i < n1; ++i) {
    const Tensor2D di = sub1_[i].backward(params_, c.sub1_cache[i], std::move(d_o1[i]));
    for (size_t q = 0; q < d_h.data.size(); ++q) d_h.data[q] += di.data[q];
  }
  Tensor2D d_xg = shared_.backward(params_, c.shared_cache, std::move(d_h));

  // Feature gate.
  Tensor2D d_u(b, spec_.input_dim());
  Tensor2D d_x(b, spec_.input_dim());
  for (size_t q = 0; q < d_u.data.size(); ++q) {
    const double g = c.g.data[q];
    d_u.data[q] = d_xg.data[q] * c.x.data[q] * g * (1.0 - g);
    d_x.data[q] = d_xg.data[q] * g;
  }
  matmul_transb(d_u, params_.value("fgate.Wg"), d_x, /*accumulate=*/true);
  matmul_transa(c.x, d_u, params_.grad("fgate.Wg"), /*accumulate=*/true);
  embed_backward(data, idx, d_x);

  // L0 penalty gradient.
  if (spec_.lambda_l0 != 0.0) {
    const Tensor2D& la1 = params_.value("route1.la");
    Tensor2D& gla1 = params_.grad("route1.la");
    for (int i = 0; i < la1.rows; ++i)
      for (int j = 0; j < la1.cols; ++j)
        gla1(i, j) += spec_.lambda_l0 * hc_expected_l0_grad_log_alpha(gate_at(la1, i, j));
    if (spec_.gates_on_towers) {
      const Tensor2D& la2 = params_.value("route2.la");
      Tensor2D& gla2 = params_.grad("route2.la");
      for (int i = 0; i < la2.rows; ++i)
        for (int j = 0; j < la2.cols; ++j)
          gla2(i, j) += spec_.lambda_l0 * hc_expected_l0_grad_log_alpha(gate_at(la2, i, j));
    }
  }
  return total;
}

double EcmmModel::expected_active_gates() const {
  double total = 0.0;
  const Tensor2D& la1 = params_.value("route1.la");
  for (int i = 0; i < la1.rows; ++i)
    for (int j = 0; j < la1.cols; ++j) total += hc_expected_l0(gate_at(la1, i, j));
  if (spec_.gates_on_towers) {
    const Tensor2D& la2 = params_.value("route2.la");
    for (int i = 0; i < la2.rows; ++i)
      for (int j = 0; j < la2.cols; ++j) total += hc_expected_l0(gate_at(la2, i, j));
  }
  return total;
}

}  // namespace ecpr
