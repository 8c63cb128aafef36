#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ecpr/rng.hpp"

namespace ecpr {

// One (request, item) record emitted for every member of the request's
// matching result set. deepest_stage is the last chain stage the item
// reached: 2 matching, 3 pre-ranking, 4 ranking, 5 exposure, 6 click.
struct CascadeSample {
  int64_t request_id = 0;
  int32_t user_id = 0;
  int32_t item_id = 0;
  std::vector<int32_t> features;
  int deepest_stage = 2;
  int y5 = 0;
  int y6 = 0;
  int domain_tag = 0;  // 1, 2 or 3
  double sample_rate_weight = 1.0;
};

struct Dataset {
  int fields = 0;
  std::vector<CascadeSample> samples;
};

// Number of feature fields the featurizer emits:
// user id bucket, item id bucket, 5 user-side, 5 item-side/cross.
constexpr int kFeatureFields = 12;

struct CascadeConfig {
  int n_users = 2000;
  int n_items = 10000;
  int latent_dim = 4;
  int pool_size = 200;                               // candidate pool N1 per request
  std::array<int, 4> stage_sizes = {50, 20, 10, 5};  // N2 >= N3 >= N4 >= N5
  std::array<double, 4> stage_noise = {1.0, 0.8, 0.6, 0.4};
  std::array<double, 4> stage_bias_scale = {1.2, 1.0, 0.8, 0.6};
  double base_logit = -2.2;  // shifts the mean true click propensity
  int64_t train_requests = 50000;
  int64_t eval_requests = 5000;
  // Per-domain keep rates for the training split: t1, t2, S3-S5, S2-S3.
  double rate_t1 = 1.0;
  double rate_t2 = 0.4;
  double rate_s3s5 = 0.1;
  double rate_s2s3 = 0.05;

  void validate() const;  // throws std::invalid_argument on a bad combination
};

// Fixed synthetic universe: latent vectors drive the true click propensity,
// per-stage bias vectors make each stage selector a skewed proxy of it.
struct World {
  uint64_t seed = 0;
  int n_users = 0;
  int n_items = 0;
  int latent_dim = 0;
  double base_logit = 0.0;
  std::vector<double> user_latent;                  // n_users x latent_dim
  std::vector<double> item_latent;                  // n_items x latent_dim
  std::vector<std::vector<double>> stage_bias;      // 4 x latent_dim

  double relevance_logit(int user, int item) const;
  double propensity(int user, int item) const;      // sigma(relevance_logit)
  double stage_bias_term(int stage, int item) const;
};

World generate_world(uint64_t seed, const CascadeConfig& config);

// Runs one request through the cascade and emits one labeled record per
// matching-set member. Deterministic given (world, config, request_id).
std::vector<CascadeSample> simulate_request(const World& world, const CascadeConfig& config,
                                            int64_t request_id, int32_t user_id);

// True propensity of every emitted record, aligned with simulate_request.
std::vector<double> request_oracle_scores(const World& world,
                                          const std::vector<CascadeSample>& records);

// t1: clicked; t2: exposed without click; t3: never exposed.
void label_domains(std::vector<CascadeSample>& samples);

// Keeps each record with its domain rate and stamps the applied rate into
// sample_rate_weight. Training split only; evaluation keeps everything.
std::vector<CascadeSample> subsample_domains(const std::vector<CascadeSample>& samples,
                                             const CascadeConfig& config, RngStream& rng);

struct RateCheck {
  int64_t matching = 0;   // |S2|
  int64_t exposure = 0;   // |S5|
  int64_t click = 0;      // |S6|
  bool etr_defined = false, ctr_defined = false;
  double etr = 0.0, ctr = 0.0, etctr = 0.0;
  bool identity_exact = false;  // ETR*CTR == ETCTR as count arithmetic
};

RateCheck empirical_rate_check(const std::vector<CascadeSample>& samples);

struct SimOutput {
  Dataset train;  // domain-subsampled
  Dataset eval;   // full matching sets
  std::vector<double> eval_oracle;  // true propensity per eval record
};

SimOutput simulate_dataset(uint64_t seed, const CascadeConfig& config);

// TSV dataset files, header "#ecpr-dataset v1 fields=<F>".
void write_dataset(const std::string& path, const Dataset& data);
Dataset read_dataset(const std::string& path);

// Oracle sidecar: "#ecpr-oracle v1" then request_id, item_id, score rows.
void write_oracle(const std::string& path, const Dataset& eval, const std::vector<double>& scores);
std::vector<double> read_oracle(const std::string& path, const Dataset& eval);

}  // namespace ecpr
