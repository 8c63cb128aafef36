#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "ecpr/nn.hpp"
#include "ecpr/sim.hpp"

using namespace ecpr;

namespace {

CascadeConfig small_config() {
  CascadeConfig cfg;
  cfg.n_users = 200;
  cfg.n_items = 1000;
  cfg.pool_size = 100;
  cfg.stage_sizes = {30, 12, 6, 3};
  cfg.train_requests = 200;
  cfg.eval_requests = 50;
  return cfg;
}

// Chi-square over the item-attribute feature histograms of the exposure
// subset against the matching distribution.
double exposure_shift_statistic(const Dataset& data) {
  constexpr int kBins = 16;
  const std::vector<int> fields{7, 8, 9, 10};
  double stat = 0.0;
  for (int f : fields) {
    std::vector<double> all(kBins, 0.0), expo(kBins, 0.0);
    double n_all = 0.0, n_expo = 0.0;
    for (const CascadeSample& s : data.samples) {
      const int b = std::clamp<int>(s.features[f], 0, kBins - 1);
      all[b] += 1.0;
      n_all += 1.0;
      if (s.y5) {
        expo[b] += 1.0;
        n_expo += 1.0;
      }
    }
    for (int b = 0; b < kBins; ++b) {
      const double expected = all[b] / n_all * n_expo;
      if (expected < 1.0) continue;
      const double diff = expo[b] - expected;
      stat += diff * diff / expected;
    }
  }
  return stat;
}

}  // namespace

TEST_CASE("generate_world determinism and degenerate dimension") {
  const CascadeConfig cfg = small_config();
  const World w1 = generate_world(11, cfg);
  const World w2 = generate_world(11, cfg);
  CHECK(w1.user_latent == w2.user_latent);
  CHECK(w1.item_latent == w2.item_latent);
  CHECK(w1.stage_bias == w2.stage_bias);

  CascadeConfig flat = cfg;
  flat.latent_dim = 0;
  const World w0 = generate_world(11, flat);
  CHECK(w0.propensity(0, 1) == sigmoid(cfg.base_logit));
  CHECK(w0.propensity(5, 7) == w0.propensity(190, 900));
}

TEST_CASE("world mean propensity agrees with an independent draw oracle") {
  const CascadeConfig cfg = small_config();
  const World w = generate_world(13, cfg);
  RngStream pick(13, "pairs");
  const int n = 10000;
  double mean = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const int u = static_cast<int>(pick.uniform_int(cfg.n_users));
    const int it = static_cast<int>(pick.uniform_int(cfg.n_items));
    const double p = w.propensity(u, it);
    mean += p;
    m2 += p * p;
  }
  mean /= n;
  const double var_w = m2 / n - mean * mean;

  // Independent Monte Carlo draws straight from the latent generator.
  RngStream mc(777, "oracle");
  const int m = 100000;
  double mean_o = 0.0, m2_o = 0.0;
  for (int i = 0; i < m; ++i) {
    double dot = 0.0;
    for (int d = 0; d < cfg.latent_dim; ++d) dot += mc.normal() * mc.normal();
    const double p = sigmoid(dot / std::sqrt(cfg.latent_dim) + cfg.base_logit);
    mean_o += p;
    m2_o += p * p;
  }
  mean_o /= m;
  const double var_o = m2_o / m - mean_o * mean_o;
  const double sigma = std::sqrt(var_w / n + var_o / m);
  CHECK(std::abs(mean - mean_o) < 3.0 * sigma);
}

TEST_CASE("simulate_request structure") {
  const CascadeConfig cfg = small_config();
  const World w = generate_world(17, cfg);
  for (int64_t rid = 0; rid < 20; ++rid) {
    const auto records = simulate_request(w, cfg, rid, static_cast<int>(rid % cfg.n_users));
    CHECK(records.size() == 30);
    std::map<int, int> depth_counts;
    std::set<int32_t> items;
    int y5 = 0;
    for (const CascadeSample& s : records) {
      CHECK(s.y6 <= s.y5);
      CHECK(s.features.size() == kFeatureFields);
      y5 += s.y5;
      ++depth_counts[s.deepest_stage];
      items.insert(s.item_id);
    }
    CHECK(y5 == 3);
    CHECK(items.size() == records.size());  // no duplicate candidates

    // chain containment on counts
    const auto at_least = [&](int k) {
      int n = 0;
      for (const auto& [d, c] : depth_counts)
        if (d >= k) n += c;
      return n;
    };
    CHECK(at_least(2) == 30);
    CHECK(at_least(3) == 12);
    CHECK(at_least(4) == 6);
    CHECK(at_least(5) == 3);
    CHECK(at_least(6) <= 3);
  }
}

TEST_CASE("noise-free unbiased cascade exposes exactly the top items by propensity") {
  CascadeConfig cfg = small_config();
  cfg.stage_noise = {0, 0, 0, 0};
  cfg.stage_bias_scale = {0, 0, 0, 0};
  const World w = generate_world(19, cfg);
  for (int64_t rid = 0; rid < 10; ++rid) {
    const int user = static_cast<int>(rid * 7 % cfg.n_users);
    const auto records = simulate_request(w, cfg, rid, user);

    std::vector<std::pair<double, int32_t>> truth;
    std::set<int32_t> pool;
    for (const CascadeSample& s : records) pool.insert(s.item_id);
    // records only cover the matching set; reconstruct the top of it
    for (int32_t item : pool) truth.push_back({w.propensity(user, item), item});
    std::sort(truth.begin(), truth.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    std::set<int32_t> expected;
    for (int i = 0; i < cfg.stage_sizes[3]; ++i) expected.insert(truth[i].second);
    for (const CascadeSample& s : records)
      if (s.y5) CHECK(expected.count(s.item_id) == 1);
  }
}

TEST_CASE("label_domains") {
  SUBCASE("table mapping") {
    std::vector<CascadeSample> samples(4);
    samples[0].y5 = 1;
    samples[0].y6 = 1;
    samples[0].deepest_stage = 6;
    samples[1].y5 = 1;
    samples[1].y6 = 0;
    samples[1].deepest_stage = 5;
    samples[2].y5 = 0;
    samples[2].y6 = 0;
    samples[2].deepest_stage = 3;
    samples[3].y5 = 0;
    samples[3].y6 = 0;
    samples[3].deepest_stage = 2;
    label_domains(samples);
    CHECK(samples[0].domain_tag == 1);
    CHECK(samples[1].domain_tag == 2);
    CHECK(samples[2].domain_tag == 3);
    CHECK(samples[3].domain_tag == 3);
  }

  SUBCASE("click without exposure is rejected") {
    std::vector<CascadeSample> bad(1);
    bad[0].y5 = 0;
    bad[0].y6 = 1;
    bad[0].deepest_stage = 2;
    CHECK_THROWS_AS(label_domains(bad), std::invalid_argument);
  }
}

TEST_CASE("subsample_domains") {
  SUBCASE("all-ones rates keep everything") {
    CascadeConfig cfg = small_config();
    cfg.rate_t1 = cfg.rate_t2 = cfg.rate_s3s5 = cfg.rate_s2s3 = 1.0;
    std::vector<CascadeSample> samples(100);
    for (size_t i = 0; i < samples.size(); ++i) {
      samples[i].deepest_stage = 2 + static_cast<int>(i % 5);
      samples[i].y5 = samples[i].deepest_stage >= 5;
      samples[i].y6 = samples[i].deepest_stage == 6;
      samples[i].domain_tag = samples[i].y6 ? 1 : (samples[i].y5 ? 2 : 3);
    }
    RngStream rng(3, "sub");
    const auto kept = subsample_domains(samples, cfg, rng);
    CHECK(kept.size() == samples.size());
    for (const CascadeSample& s : kept) CHECK(s.sample_rate_weight == 1.0);
  }

  SUBCASE("binomial count at rate 0.4 over one million records") {
    CascadeConfig cfg = small_config();
    cfg.rate_t2 = 0.4;
    std::vector<CascadeSample> samples(1000000);
    for (CascadeSample& s : samples) {
      s.deepest_stage = 5;
      s.y5 = 1;
      s.domain_tag = 2;
    }
    RngStream rng(5, "sub.binomial");
    const auto kept = subsample_domains(samples, cfg, rng);
    const double sigma = std::sqrt(1000000 * 0.4 * 0.6);
    CHECK(std::abs(static_cast<double>(kept.size()) - 400000.0) < 3.0 * sigma);
    for (size_t i = 0; i < 10; ++i) CHECK(kept[i].sample_rate_weight == 0.4);
  }
}

TEST_CASE("default rates preserve the domain size ordering") {
  CascadeConfig cfg;  // desk defaults, scaled down in request count only
  cfg.train_requests = 4000;
  cfg.eval_requests = 0;
  const SimOutput out = simulate_dataset(23, cfg);
  int64_t t1 = 0, t2 = 0, t3 = 0;
  for (const CascadeSample& s : out.train.samples) {
    t1 += s.domain_tag == 1;
    t2 += s.domain_tag == 2;
    t3 += s.domain_tag == 3;
  }
  CHECK(t1 < t2);
  CHECK(t2 < t3);
}

TEST_CASE("empirical_rate_check") {
  SUBCASE("hand counts") {
    std::vector<CascadeSample> samples(1000);
    for (size_t i = 0; i < samples.size(); ++i) {
      samples[i].y5 = i < 100;
      samples[i].y6 = i < 10;
    }
    const RateCheck rc = empirical_rate_check(samples);
    CHECK(rc.matching == 1000);
    CHECK(rc.exposure == 100);
    CHECK(rc.click == 10);
    CHECK(rc.etr == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(rc.ctr == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(rc.etctr == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(rc.identity_exact);
  }

  SUBCASE("no clicks") {
    std::vector<CascadeSample> samples(50);
    for (size_t i = 0; i < samples.size(); ++i) samples[i].y5 = i < 5;
    const RateCheck rc = empirical_rate_check(samples);
    CHECK(rc.ctr == 0.0);
    CHECK(rc.etctr == 0.0);
    CHECK(rc.identity_exact);
  }

  SUBCASE("generated split") {
    const SimOutput out = simulate_dataset(29, small_config());
    const RateCheck rc = empirical_rate_check(out.eval.samples);
    CHECK(rc.identity_exact);
    CHECK(rc.etr == doctest::Approx(3.0 / 30.0).epsilon(1e-12));
  }
}

TEST_CASE("simulate_dataset determinism") {
  const CascadeConfig cfg = small_config();
  const SimOutput a = simulate_dataset(31, cfg);
  const SimOutput b = simulate_dataset(31, cfg);
  REQUIRE(a.train.samples.size() == b.train.samples.size());
  REQUIRE(a.eval.samples.size() == b.eval.samples.size());
  for (size_t i = 0; i < a.train.samples.size(); ++i) {
    CHECK(a.train.samples[i].item_id == b.train.samples[i].item_id);
    CHECK(a.train.samples[i].deepest_stage == b.train.samples[i].deepest_stage);
    CHECK(a.train.samples[i].features == b.train.samples[i].features);
  }
  CHECK(a.eval_oracle == b.eval_oracle);

  const SimOutput c = simulate_dataset(32, cfg);
  CHECK(a.train.samples.size() != c.train.samples.size());
}

TEST_CASE("stage bias shifts the exposure feature distribution") {
  CascadeConfig biased = small_config();
  biased.train_requests = 0;
  biased.eval_requests = 400;

  CascadeConfig null_cfg = biased;
  null_cfg.stage_bias_scale = {0, 0, 0, 0};

  // Null distribution of the statistic under noise-only selection.
  std::vector<double> null_stats;
  for (uint64_t seed = 1000; seed < 1100; ++seed)
    null_stats.push_back(exposure_shift_statistic(simulate_dataset(seed, null_cfg).eval));
  std::sort(null_stats.begin(), null_stats.end());
  const double p99 = null_stats[98];

  const double biased_stat = exposure_shift_statistic(simulate_dataset(55, biased).eval);
  CHECK(biased_stat > p99);
}

TEST_CASE("config validation") {
  CascadeConfig cfg = small_config();
  cfg.pool_size = 20;  // smaller than N2 = 30
  CHECK_THROWS_WITH_AS(generate_world(1, cfg), doctest::Contains("pool"),
                       std::invalid_argument);

  cfg = small_config();
  cfg.stage_sizes = {30, 40, 6, 3};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = small_config();
  cfg.rate_t2 = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("dataset file round trip") {
  const SimOutput out = simulate_dataset(41, small_config());
  const std::string path = "test_sim_roundtrip.tsv";
  write_dataset(path, out.train);
  const Dataset back = read_dataset(path);
  REQUIRE(back.samples.size() == out.train.samples.size());
  CHECK(back.fields == out.train.fields);
  for (size_t i = 0; i < back.samples.size(); ++i) {
    CHECK(back.samples[i].request_id == out.train.samples[i].request_id);
    CHECK(back.samples[i].features == out.train.samples[i].features);
    CHECK(back.samples[i].sample_rate_weight == out.train.samples[i].sample_rate_weight);
    CHECK(back.samples[i].domain_tag == out.train.samples[i].domain_tag);
  }
  std::remove(path.c_str());
}
