#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ecpr/ecmm.hpp"
#include "ecpr/gradcheck.hpp"
#include "ecpr/metrics.hpp"
#include "ecpr/model.hpp"
#include "ecpr/nn.hpp"
#include "ecpr/sim.hpp"

using namespace ecpr;

namespace {

CascadeConfig tiny_sim_config() {
  CascadeConfig cfg;
  cfg.n_users = 40;
  cfg.n_items = 150;
  cfg.pool_size = 40;
  cfg.stage_sizes = {16, 8, 4, 2};
  cfg.base_logit = -0.5;
  cfg.train_requests = 30;
  cfg.eval_requests = 0;
  cfg.rate_t1 = cfg.rate_t2 = cfg.rate_s3s5 = cfg.rate_s2s3 = 1.0;
  return cfg;
}

ModelSizes tiny_sizes() {
  ModelSizes sizes;
  sizes.mlp_hidden = {8, 4};
  sizes.shared_width = 12;
  sizes.sub_width = 4;
  sizes.tower_hidden = {4};
  sizes.two_tower_hidden = 8;
  sizes.two_tower_dim = 8;
  return sizes;
}

ModelSpec tiny_spec(ModelKind kind, const Dataset& data) {
  ModelSpec spec;
  spec.kind = kind;
  spec.sizes = tiny_sizes();
  spec.active_fields.resize(data.fields);
  std::iota(spec.active_fields.begin(), spec.active_fields.end(), 0);
  spec.field_vocab = infer_vocabs(data);
  return spec;
}

std::vector<int64_t> first_n(size_t n) {
  std::vector<int64_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

double logit_of(double p) { return std::log(p / (1.0 - p)); }

// Forces a head stack to a constant output by zeroing the final layer weights
// and planting the wanted logits in its bias.
void pin_stack_output(ParameterSet& params, const std::string& last_layer,
                      const std::vector<double>& logits) {
  params.value(last_layer + ".W").fill(0.0);
  Tensor2D& b = params.value(last_layer + ".b");
  REQUIRE(static_cast<size_t>(b.cols) == logits.size());
  for (size_t i = 0; i < logits.size(); ++i) b(0, i) = logits[i];
}

}  // namespace

TEST_CASE("two_tower_score") {
  const std::vector<double> unit{1.0, 0.0};
  CHECK(two_tower_score(unit, unit) == 1.0);
  CHECK(sigmoid(two_tower_score(unit, unit)) == doctest::Approx(0.7310585786).epsilon(1e-9));

  const std::vector<double> orth{0.0, 1.0};
  CHECK(two_tower_score(unit, orth) == 0.0);
  CHECK(sigmoid(two_tower_score(unit, orth)) == 0.5);

  const std::vector<double> a{1.0, 2.0}, b{3.0, 4.0};
  CHECK(two_tower_score(a, b) == 11.0);
  CHECK_THROWS_AS(two_tower_score(a, unit.empty() ? a : std::vector<double>{1.0}),
                  std::invalid_argument);
}

TEST_CASE("deep baseline behaviour") {
  const SimOutput sim = simulate_dataset(61, tiny_sim_config());
  const auto idx = first_n(32);

  SUBCASE("zero-weight network predicts one half everywhere") {
    auto model = make_model(tiny_spec(ModelKind::kDeepBaseline, sim.train), 61);
    for (auto& [name, p] : model->params())
      if (name.rfind("mlp.", 0) == 0) p.value.fill(0.0);
    for (const HeadsRow& h : model->forward(sim.train, idx, nullptr)) CHECK(h.t1 == 0.5);
  }

  SUBCASE("softmax variant outputs a probability vector") {
    auto model = make_model(tiny_spec(ModelKind::kDeepBaselineSoftmax, sim.train), 61);
    for (const HeadsRow& h : model->forward(sim.train, idx, nullptr)) {
      CHECK(h.t1 + h.t2 + h.t3 == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(h.t1 > 0.0);
      CHECK(h.t2 > 0.0);
      CHECK(h.t3 > 0.0);
    }
  }
}

TEST_CASE("deep baseline separates toy data like a logistic oracle") {
  // Two feature fields; field 0 is label-aligned, field 1 is noise.
  Dataset toy;
  toy.fields = 2;
  RngStream rng(7, "toy");
  for (int i = 0; i < 600; ++i) {
    CascadeSample s;
    s.request_id = i;
    s.user_id = i % 10;
    s.item_id = i;
    const int label = static_cast<int>(rng.uniform() < 0.5);
    const int noisy = rng.uniform() < 0.9 ? label : 1 - label;
    s.features = {noisy, static_cast<int32_t>(rng.uniform_int(4))};
    s.deepest_stage = label ? 6 : 5;
    s.y5 = 1;
    s.y6 = label;
    s.domain_tag = label ? 1 : 2;
    toy.samples.push_back(s);
  }

  ModelSpec spec = tiny_spec(ModelKind::kDeepBaseline, toy);
  auto model = make_model(spec, 7);
  AdamState adam;
  adam.config.learning_rate = 0.01;
  const auto idx = first_n(toy.samples.size());
  for (int epoch = 0; epoch < 60; ++epoch) {
    model->params().zero_grads();
    model->loss(toy, idx, nullptr, true);
    adam_step(model->params(), adam);
  }

  // Logistic-regression oracle on the one-hot of field 0: weights via a few
  // gradient steps of the closed-form convex problem.
  double w0 = 0.0, w1 = 0.0, bias = 0.0;
  for (int it = 0; it < 4000; ++it) {
    double g0 = 0, g1 = 0, gb = 0;
    for (const CascadeSample& s : toy.samples) {
      const double z = sigmoid(bias + (s.features[0] == 0 ? w0 : w1));
      const double d = z - s.y6;
      (s.features[0] == 0 ? g0 : g1) += d;
      gb += d;
    }
    w0 -= 0.01 * g0 / toy.samples.size();
    w1 -= 0.01 * g1 / toy.samples.size();
    bias -= 0.01 * gb / toy.samples.size();
  }

  std::vector<double> model_scores, oracle_scores;
  std::vector<int> labels;
  const auto heads = model->forward(toy, idx, nullptr);
  for (size_t i = 0; i < toy.samples.size(); ++i) {
    model_scores.push_back(heads[i].t1);
    oracle_scores.push_back(sigmoid(bias + (toy.samples[i].features[0] == 0 ? w0 : w1)));
    labels.push_back(toy.samples[i].y6);
  }
  const double model_auc = *auc(model_scores, labels);
  const double oracle_auc = *auc(oracle_scores, labels);
  CHECK(oracle_auc > 0.95);  // data really is separable
  CHECK(model_auc > 0.95);
}

TEST_CASE("ecm heads arithmetic") {
  const SimOutput sim = simulate_dataset(67, tiny_sim_config());
  auto model = make_model(tiny_spec(ModelKind::kEcm, sim.train), 67);
  const auto idx = first_n(8);

  SUBCASE("planted probabilities") {
    pin_stack_output(model->params(), "mlp.l2",
                     {std::log(0.02), std::log(0.08), std::log(0.90)});
    const auto heads = model->forward(sim.train, idx, nullptr);
    for (const HeadsRow& h : heads) {
      CHECK(h.petctr == doctest::Approx(0.02).epsilon(1e-12));
      CHECK(h.petr == doctest::Approx(0.10).epsilon(1e-12));
      CHECK(h.pctr == doctest::Approx(0.20).epsilon(1e-12));
      CHECK(h.pitr == doctest::Approx(0.90).epsilon(1e-12));
    }
  }

  SUBCASE("uniform probabilities give pctr one half") {
    pin_stack_output(model->params(), "mlp.l2", {0.0, 0.0, 0.0});
    const auto heads = model->forward(sim.train, idx, nullptr);
    CHECK(heads[0].pctr == doctest::Approx(0.5).epsilon(1e-12));
  }

  SUBCASE("product identity holds for every output") {
    const auto heads = model->forward(sim.train, first_n(200), nullptr);
    for (const HeadsRow& h : heads) CHECK(std::abs(h.petctr - h.petr * h.pctr) < 1e-12);
  }
}

TEST_CASE("ecm loss") {
  const SimOutput sim = simulate_dataset(71, tiny_sim_config());
  auto model = make_model(tiny_spec(ModelKind::kEcm, sim.train), 71);

  SUBCASE("uniform logits cost ln 3") {
    pin_stack_output(model->params(), "mlp.l2", {0.0, 0.0, 0.0});
    const std::vector<int64_t> idx{0};
    CHECK(model->loss(sim.train, idx, nullptr, false) ==
          doctest::Approx(1.0986122886681098).epsilon(1e-12));
  }

  SUBCASE("saturated correct logit costs about zero") {
    // find a click sample (tag 1)
    int64_t click = -1;
    for (size_t i = 0; i < sim.train.samples.size(); ++i)
      if (sim.train.samples[i].domain_tag == 1) {
        click = static_cast<int64_t>(i);
        break;
      }
    REQUIRE(click >= 0);
    pin_stack_output(model->params(), "mlp.l2", {50.0, 0.0, 0.0});
    const std::vector<int64_t> idx{click};
    CHECK(model->loss(sim.train, idx, nullptr, false) < 1e-9);
  }

  SUBCASE("batch loss is the mean of per-sample losses") {
    const std::vector<int64_t> both{0, 5};
    const std::vector<int64_t> first{0}, second{5};
    const double l01 = model->loss(sim.train, both, nullptr, false);
    const double l0 = model->loss(sim.train, first, nullptr, false);
    const double l1 = model->loss(sim.train, second, nullptr, false);
    CHECK(l01 == doctest::Approx((l0 + l1) / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("esmm") {
  const SimOutput sim = simulate_dataset(73, tiny_sim_config());
  auto model = make_model(tiny_spec(ModelKind::kEsmm, sim.train), 73);
  const auto idx = first_n(8);

  SUBCASE("joint probability is the product of towers") {
    pin_stack_output(model->params(), "etr.l2", {logit_of(0.1)});
    pin_stack_output(model->params(), "ctr.l2", {logit_of(0.2)});
    const auto heads = model->forward(sim.train, idx, nullptr);
    for (const HeadsRow& h : heads) {
      CHECK(h.petr == doctest::Approx(0.1).epsilon(1e-12));
      CHECK(h.pctr == doctest::Approx(0.2).epsilon(1e-12));
      CHECK(h.petctr == doctest::Approx(0.02).epsilon(1e-12));
      CHECK(h.t2 == doctest::Approx(0.1 - 0.02).epsilon(1e-12));
    }
  }

  SUBCASE("click tower at one collapses the product") {
    pin_stack_output(model->params(), "etr.l2", {logit_of(0.37)});
    pin_stack_output(model->params(), "ctr.l2", {500.0});
    const auto heads = model->forward(sim.train, idx, nullptr);
    for (const HeadsRow& h : heads) CHECK(h.petctr == doctest::Approx(h.petr).epsilon(1e-12));
  }

  SUBCASE("product identity is exact by construction") {
    const auto heads = model->forward(sim.train, first_n(200), nullptr);
    for (const HeadsRow& h : heads) CHECK(h.petctr == h.petr * h.pctr);
  }
}

TEST_CASE("ecmm structure") {
  const SimOutput sim = simulate_dataset(79, tiny_sim_config());
  ModelSpec spec = tiny_spec(ModelKind::kEcmm, sim.train);
  const auto idx = first_n(8);

  SUBCASE("forced selection routes one sub-network through") {
    // With every first-layer sub-network carrying identical weights, closing
    // all gates except source 2 must match the exact uniform average: both
    // reduce to that sub-network's output.
    auto selection = make_model(spec, 79);
    auto uniform = make_model(spec, 79);
    for (Model* m : {selection.get(), uniform.get()}) {
      ParameterSet& p = m->params();
      for (int i = 0; i < spec.sizes.sub1_count; ++i)
        for (const char* leaf : {"l0.W", "l0.b", "l1.W", "l1.b"})
          p.value("sub1." + std::to_string(i) + "." + leaf) = p.value("sub1.2." + leaf);
    }
    Tensor2D& la1 = selection->params().value("route1.la");
    for (int i = 0; i < la1.rows; ++i)
      for (int j = 0; j < la1.cols; ++j) la1(i, j) = i == 2 ? 60.0 : -60.0;
    selection->params().value("route2.la").fill(60.0);
    as_ecmm(uniform.get())->set_routing_override({true, true});

    const auto a = selection->forward(sim.train, idx, nullptr);
    const auto b = uniform->forward(sim.train, idx, nullptr);
    for (size_t k = 0; k < a.size(); ++k) {
      CHECK(a[k].t1 == doctest::Approx(b[k].t1).epsilon(1e-6));
      CHECK(a[k].t3 == doctest::Approx(b[k].t3).epsilon(1e-6));
    }
  }

  SUBCASE("equal scalars and open gates average the sub-networks") {
    auto model = make_model(spec, 79);
    Tensor2D& la1 = model->params().value("route1.la");
    la1.fill(60.0);  // z = 1 exactly
    model->params().value("route2.la").fill(60.0);
    const auto mixed = model->forward(sim.train, idx, nullptr);

    EcmmModel* ecmm = as_ecmm(model.get());
    ecmm->set_routing_override({true, true});  // exact uniform average
    const auto uniform = model->forward(sim.train, idx, nullptr);
    for (size_t k = 0; k < mixed.size(); ++k) {
      CHECK(mixed[k].t1 == doctest::Approx(uniform[k].t1).epsilon(1e-7));
      CHECK(mixed[k].t2 == doctest::Approx(uniform[k].t2).epsilon(1e-7));
    }
  }

  SUBCASE("head bounds") {
    auto model = make_model(spec, 79);
    RngStream noise_rng(79, "noise");
    const GateNoise noise = draw_gate_noise(spec, noise_rng);
    for (const GateNoise* np : {static_cast<const GateNoise*>(nullptr), &noise}) {
      for (const HeadsRow& h : model->forward(sim.train, idx, np)) {
        CHECK(h.t1 > 0.0);
        CHECK(h.t1 < 1.0);
        CHECK(h.petctr <= h.petr + kProbEps);
        CHECK(h.pctr == doctest::Approx(h.t1 / h.petr).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("ecmm loss") {
  const SimOutput sim = simulate_dataset(83, tiny_sim_config());
  ModelSpec spec = tiny_spec(ModelKind::kEcmm, sim.train);

  int64_t expo = -1;  // y5=1, y6=0 sample
  for (size_t i = 0; i < sim.train.samples.size(); ++i)
    if (sim.train.samples[i].domain_tag == 2) {
      expo = static_cast<int64_t>(i);
      break;
    }
  REQUIRE(expo >= 0);

  SUBCASE("planted heads reproduce the hand-computed sum") {
    ModelSpec no_l0 = spec;
    no_l0.lambda_l0 = 0.0;
    auto model = make_model(no_l0, 83);
    pin_stack_output(model->params(), "tower.0.l1", {logit_of(0.2)});
    pin_stack_output(model->params(), "tower.1.l1", {logit_of(0.3)});
    pin_stack_output(model->params(), "tower.2.l1", {logit_of(0.5)});
    const std::vector<int64_t> idx{expo};
    // -ln(0.8) - ln(0.5) - ln(0.5)
    CHECK(model->loss(sim.train, idx, nullptr, false) ==
          doctest::Approx(1.6094379124341003).epsilon(1e-10));
  }

  SUBCASE("near-perfect heads cost almost nothing") {
    int64_t click = -1;
    for (size_t i = 0; i < sim.train.samples.size(); ++i)
      if (sim.train.samples[i].domain_tag == 1) {
        click = static_cast<int64_t>(i);
        break;
      }
    REQUIRE(click >= 0);
    ModelSpec no_l0 = spec;
    no_l0.lambda_l0 = 0.0;
    auto model = make_model(no_l0, 83);
    pin_stack_output(model->params(), "tower.0.l1", {14.0});
    pin_stack_output(model->params(), "tower.1.l1", {-20.0});
    pin_stack_output(model->params(), "tower.2.l1", {-20.0});
    const std::vector<int64_t> idx{click};
    CHECK(model->loss(sim.train, idx, nullptr, false) < 1e-5);
  }

  SUBCASE("the penalty adds exactly lambda times the expected active gates") {
    ModelSpec with = spec;
    with.lambda_l0 = 1e-3;
    ModelSpec without = spec;
    without.lambda_l0 = 0.0;
    auto m1 = make_model(with, 83);
    auto m0 = make_model(without, 83);
    const std::vector<int64_t> idx{0, 1, 2, 3};
    const double l1 = m1->loss(sim.train, idx, nullptr, false);
    const double l0 = m0->loss(sim.train, idx, nullptr, false);
    CHECK(l1 - l0 == doctest::Approx(1e-3 * m1->expected_active_gates()).epsilon(1e-9));
  }

  SUBCASE("click without exposure is rejected") {
    Dataset bad = sim.train;
    bad.samples[0].y5 = 0;
    bad.samples[0].y6 = 1;
    auto model = make_model(spec, 83);
    const std::vector<int64_t> idx{0};
    CHECK_THROWS_AS(model->loss(bad, idx, nullptr, false), std::invalid_argument);
  }

  SUBCASE("four towers split the implication domain") {
    ModelSpec four = spec;
    four.towers = 4;
    four.lambda_l0 = 0.0;
    auto model = make_model(four, 83);
    pin_stack_output(model->params(), "tower.0.l1", {logit_of(0.2)});
    pin_stack_output(model->params(), "tower.1.l1", {logit_of(0.3)});
    pin_stack_output(model->params(), "tower.2.l1", {logit_of(0.4)});
    pin_stack_output(model->params(), "tower.3.l1", {logit_of(0.25)});
    int64_t deep2 = -1;
    for (size_t i = 0; i < sim.train.samples.size(); ++i)
      if (sim.train.samples[i].deepest_stage == 2) {
        deep2 = static_cast<int64_t>(i);
        break;
      }
    REQUIRE(deep2 >= 0);
    const std::vector<int64_t> idx{deep2};
    const double expected = -std::log(0.8) - std::log(0.5) - std::log(0.6) - std::log(0.25);
    CHECK(model->loss(sim.train, idx, nullptr, false) ==
          doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("full-model gradient checks") {
  for (ModelKind kind : {ModelKind::kTwoTower, ModelKind::kDeepBaseline, ModelKind::kEsmm,
                         ModelKind::kEcm, ModelKind::kEcmm}) {
    const GradCheckResult r = gradcheck_model(kind, 101);
    INFO(to_string(kind), " worst ", r.worst_param, " rel ", r.max_rel_error);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("degenerate ecmm equals a plain three-head network bitwise") {
  const SimOutput sim = simulate_dataset(89, tiny_sim_config());
  ModelSpec spec = tiny_spec(ModelKind::kEcmm, sim.train);
  spec.lambda_l0 = 0.0;
  auto model = make_model(spec, 89);
  EcmmModel* ecmm = as_ecmm(model.get());
  REQUIRE(ecmm != nullptr);

  // copy sub-network 0's weights into every sibling
  ParameterSet& params = model->params();
  for (int i = 1; i < spec.sizes.sub1_count; ++i)
    for (const char* leaf : {"l0.W", "l0.b", "l1.W", "l1.b"})
      params.value("sub1." + std::to_string(i) + "." + leaf) = params.value("sub1.0." + leaf);
  for (int j = 1; j < spec.sizes.sub2_count; ++j)
    for (const char* leaf : {"l0.W", "l0.b", "l1.W", "l1.b"})
      params.value("sub2." + std::to_string(j) + "." + leaf) = params.value("sub2.0." + leaf);

  ecmm->set_routing_override({true, true});
  const auto idx = first_n(16);
  const auto routed = model->forward(sim.train, idx, nullptr);

  // independent plain-path oracle: embed -> feature gate -> shared ->
  // sub1.0 -> sub2.0 -> towers, all by direct affine calls
  const int dim = spec.sizes.emb_dim;
  const int fields = static_cast<int>(spec.active_fields.size());
  Tensor2D x(static_cast<int>(idx.size()), fields * dim);
  for (size_t k = 0; k < idx.size(); ++k) {
    const CascadeSample& s = sim.train.samples[idx[k]];
    for (int f = 0; f < fields; ++f) {
      const int vocab = spec.field_vocab[f];
      const int32_t id = s.features[spec.active_fields[f]];
      const int row = (id >= 0 && id < vocab) ? id : vocab;
      const std::string name = "emb.f" + std::string(f < 10 ? "0" : "") + std::to_string(f);
      const Tensor2D& table = params.value(name);
      std::copy_n(&table.data[static_cast<size_t>(row) * dim], dim,
                  &x.data[(k * fields + f) * dim]);
    }
  }
  Tensor2D u(x.rows, x.cols);
  matmul(x, params.value("fgate.Wg"), u, false);
  Tensor2D xg(x.rows, x.cols);
  for (size_t q = 0; q < x.data.size(); ++q) xg.data[q] = x.data[q] * sigmoid(u.data[q]);

  auto affine_relu = [&](const Tensor2D& in, const std::string& base, bool relu) {
    Tensor2D out;
    affine_forward(in, params.value(base + ".W"), params.value(base + ".b"), out);
    if (relu) relu_inplace(out);
    return out;
  };
  Tensor2D h = affine_relu(xg, "shared.l0", true);
  h = affine_relu(h, "sub1.0.l0", true);
  h = affine_relu(h, "sub1.0.l1", true);
  h = affine_relu(h, "sub2.0.l0", true);
  h = affine_relu(h, "sub2.0.l1", true);
  for (int t = 0; t < 3; ++t) {
    Tensor2D th = affine_relu(h, "tower." + std::to_string(t) + ".l0", true);
    Tensor2D logit = affine_relu(th, "tower." + std::to_string(t) + ".l1", false);
    for (size_t k = 0; k < idx.size(); ++k) {
      const double p = sigmoid(logit.data[k]);
      const double got = t == 0 ? routed[k].t1 : (t == 1 ? routed[k].t2 : routed[k].t3);
      CHECK(got == p);  // bitwise
    }
  }
}

TEST_CASE("rank_by_head") {
  const SimOutput sim = simulate_dataset(97, tiny_sim_config());
  const ModelSpec spec = tiny_spec(ModelKind::kEcm, sim.train);
  auto model = make_model(spec, 97);

  SUBCASE("single candidate") {
    const std::vector<int64_t> idx{3};
    const auto ranked = rank_by_head(*model, sim.train, idx, Head::kT1);
    CHECK(ranked.size() == 1);
    CHECK(ranked[0].item_id == sim.train.samples[3].item_id);
  }

  SUBCASE("ties break by ascending item id") {
    auto pinned = make_model(spec, 97);
    pin_stack_output(pinned->params(), "mlp.l2", {0.0, 0.0, 0.0});  // equal scores
    const auto idx = first_n(16);
    const auto ranked = rank_by_head(*pinned, sim.train, idx, Head::kT1);
    for (size_t i = 1; i < ranked.size(); ++i)
      CHECK(ranked[i - 1].item_id < ranked[i].item_id);
  }

  SUBCASE("agrees with a brute-force sort of the forward scores") {
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < 100; ++i) idx.push_back(i * 3 % 300);
    std::sort(idx.begin(), idx.end());
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    const auto heads = model->forward(sim.train, idx, nullptr);
    std::vector<std::pair<double, int32_t>> brute;
    for (size_t i = 0; i < idx.size(); ++i)
      brute.push_back({heads[i].t1, sim.train.samples[idx[i]].item_id});
    std::sort(brute.begin(), brute.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    const auto ranked = rank_by_head(*model, sim.train, idx, Head::kT1);
    REQUIRE(ranked.size() == brute.size());
    for (size_t i = 0; i < ranked.size(); ++i) CHECK(ranked[i].item_id == brute[i].second);
  }

  SUBCASE("invariant under strictly increasing transforms") {
    const auto idx = first_n(50);
    const auto ranked = rank_by_head(*model, sim.train, idx, Head::kT1);
    const auto heads = model->forward(sim.train, idx, nullptr);
    std::vector<std::pair<double, int32_t>> transformed;
    for (size_t i = 0; i < idx.size(); ++i)
      transformed.push_back(
          {3.0 * heads[i].t1 + 1.0, sim.train.samples[idx[i]].item_id});
    std::sort(transformed.begin(), transformed.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (size_t i = 0; i < ranked.size(); ++i)
      CHECK(ranked[i].item_id == transformed[i].second);
  }

  SUBCASE("empty candidate set is an error") {
    const std::vector<int64_t> empty;
    CHECK_THROWS_AS(rank_by_head(*model, sim.train, empty, Head::kT1), std::invalid_argument);
  }

  SUBCASE("undefined heads are rejected") {
    auto single = make_model(tiny_spec(ModelKind::kDeepBaseline, sim.train), 97);
    const std::vector<int64_t> idx{0, 1};
    CHECK_THROWS_AS(rank_by_head(*single, sim.train, idx, Head::kT2), std::invalid_argument);
    CHECK_THROWS_AS(rank_by_head(*single, sim.train, idx, Head::kPEtr), std::invalid_argument);
  }
}

TEST_CASE("out-of-vocabulary ids hit the dedicated row") {
  const SimOutput sim = simulate_dataset(103, tiny_sim_config());
  ModelSpec spec = tiny_spec(ModelKind::kDeepBaseline, sim.train);
  auto model = make_model(spec, 103);
  Dataset oov = sim.train;
  for (CascadeSample& s : oov.samples) s.features[0] = spec.field_vocab[0] + 500;
  const auto idx = first_n(4);
  CHECK_NOTHROW(model->forward(oov, idx, nullptr));
  // all ids map to the same OOV row, so equal remaining features give equal scores
  Dataset twin = oov;
  for (CascadeSample& s : twin.samples) s.features[0] = spec.field_vocab[0] + 900;
  const auto a = model->forward(oov, idx, nullptr);
  const auto b = model->forward(twin, idx, nullptr);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].t1 == b[i].t1);
}
