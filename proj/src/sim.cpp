#include "ecpr/sim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "ecpr/nn.hpp"

namespace ecpr {

namespace {

uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

int32_t quantize16(double v) {
  const int b = static_cast<int>(std::floor((v + 3.0) / 6.0 * 16.0));
  return static_cast<int32_t>(std::clamp(b, 0, 15));
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

}  // namespace

void CascadeConfig::validate() const {
  if (n_users < 1 || n_items < 1) throw std::invalid_argument("config: need users and items >= 1");
  if (latent_dim < 0) throw std::invalid_argument("config: latent_dim must be >= 0");
  if (pool_size < stage_sizes[0])
    throw std::invalid_argument("config: candidate pool (" + std::to_string(pool_size) +
                                ") smaller than matching size N2 (" +
                                std::to_string(stage_sizes[0]) + ")");
  if (pool_size > n_items)
    throw std::invalid_argument("config: candidate pool larger than item universe");
  for (int k = 0; k + 1 < 4; ++k)
    if (stage_sizes[k] < stage_sizes[k + 1])
      throw std::invalid_argument("config: stage sizes must be non-increasing");
  if (stage_sizes[3] < 1) throw std::invalid_argument("config: exposure size N5 must be >= 1");
  for (double r : {rate_t1, rate_t2, rate_s3s5, rate_s2s3})
    if (!(r > 0.0 && r <= 1.0))
      throw std::invalid_argument("config: sampling rates must lie in (0,1]");
  if (train_requests < 0 || eval_requests < 0)
    throw std::invalid_argument("config: request counts must be >= 0");
}

double World::relevance_logit(int user, int item) const {
  double dot = 0.0;
  const double* u = &user_latent[static_cast<size_t>(user) * latent_dim];
  const double* v = &item_latent[static_cast<size_t>(item) * latent_dim];
  for (int k = 0; k < latent_dim; ++k) dot += u[k] * v[k];
  const double scale = latent_dim > 0 ? 1.0 / std::sqrt(static_cast<double>(latent_dim)) : 1.0;
  return dot * scale + base_logit;
}

double World::propensity(int user, int item) const { return sigmoid(relevance_logit(user, item)); }

double World::stage_bias_term(int stage, int item) const {
  double dot = 0.0;
  const double* v = &item_latent[static_cast<size_t>(item) * latent_dim];
  for (int k = 0; k < latent_dim; ++k) dot += stage_bias[stage][k] * v[k];
  return dot;
}

World generate_world(uint64_t seed, const CascadeConfig& config) {
  config.validate();
  World w;
  w.seed = seed;
  w.n_users = config.n_users;
  w.n_items = config.n_items;
  w.latent_dim = config.latent_dim;
  w.base_logit = config.base_logit;

  RngStream users(seed, "world.users");
  w.user_latent.resize(static_cast<size_t>(w.n_users) * w.latent_dim);
  for (double& v : w.user_latent) v = users.normal();

  RngStream items(seed, "world.items");
  w.item_latent.resize(static_cast<size_t>(w.n_items) * w.latent_dim);
  for (double& v : w.item_latent) v = items.normal();

  RngStream bias(seed, "world.stage_bias");
  w.stage_bias.assign(4, std::vector<double>(w.latent_dim, 0.0));
  for (int k = 0; k < 4; ++k) {
    double norm2 = 0.0;
    for (int d = 0; d < w.latent_dim; ++d) {
      w.stage_bias[k][d] = bias.normal();
      norm2 += w.stage_bias[k][d] * w.stage_bias[k][d];
    }
    const double norm = std::sqrt(norm2);
    for (int d = 0; d < w.latent_dim; ++d)
      w.stage_bias[k][d] = norm > 0.0 ? w.stage_bias[k][d] / norm * config.stage_bias_scale[k]
                                      : 0.0;
  }
  return w;
}

namespace {

std::vector<int32_t> featurize(const World& w, int32_t user, int32_t item) {
  std::vector<int32_t> f(kFeatureFields);
  f[0] = user % 1000;
  f[1] = item % 2000;
  for (int k = 0; k < 4; ++k) {
    const double v = w.latent_dim > 0
                         ? w.user_latent[static_cast<size_t>(user) * w.latent_dim + k % w.latent_dim]
                         : 0.0;
    f[2 + k] = quantize16(v);
  }
  f[6] = static_cast<int32_t>(mix64(static_cast<uint64_t>(user) + 0x9E37u) % 8);
  for (int k = 0; k < 4; ++k) {
    const double v = w.latent_dim > 0
                         ? w.item_latent[static_cast<size_t>(item) * w.latent_dim + k % w.latent_dim]
                         : 0.0;
    f[7 + k] = quantize16(v);
  }
  f[11] = static_cast<int32_t>(mix64(mix64(static_cast<uint64_t>(user)) ^
                                     static_cast<uint64_t>(item)) % 32);
  return f;
}

struct ScoredItem {
  int32_t item;
  double score;
};

// Descending score, ties broken by ascending item id so selection is stable.
void take_top(std::vector<ScoredItem>& pool, size_t n) {
  std::partial_sort(pool.begin(), pool.begin() + std::min(n, pool.size()), pool.end(),
                    [](const ScoredItem& a, const ScoredItem& b) {
                      if (a.score != b.score) return a.score > b.score;
                      return a.item < b.item;
                    });
  if (pool.size() > n) pool.resize(n);
}

}  // namespace

std::vector<CascadeSample> simulate_request(const World& world, const CascadeConfig& config,
                                            int64_t request_id, int32_t user_id) {
  RngStream rng(world.seed, "request." + std::to_string(request_id));

  // Candidate pool (S1): distinct items drawn in a deterministic order.
  std::vector<int32_t> pool;
  pool.reserve(config.pool_size);
  std::unordered_set<int32_t> seen;
  while (static_cast<int>(pool.size()) < config.pool_size) {
    const int32_t item = static_cast<int32_t>(rng.uniform_int(world.n_items));
    if (seen.insert(item).second) pool.push_back(item);
  }

  std::vector<ScoredItem> current;
  current.reserve(pool.size());
  for (int32_t item : pool) current.push_back({item, 0.0});

  // Stage k selector: relevance + stage noise + stage-specific item bias.
  std::vector<std::vector<int32_t>> stage_members(4);
  for (int k = 0; k < 4; ++k) {
    for (ScoredItem& c : current) {
      c.score = world.relevance_logit(user_id, c.item) +
                config.stage_noise[k] * rng.normal() + world.stage_bias_term(k, c.item);
    }
    take_top(current, static_cast<size_t>(config.stage_sizes[k]));
    stage_members[k].reserve(current.size());
    for (const ScoredItem& c : current) stage_members[k].push_back(c.item);
  }

  std::vector<int32_t> clicked;
  for (int32_t item : stage_members[3])
    if (rng.uniform() < world.propensity(user_id, item)) clicked.push_back(item);

  auto depth_of = [&](int32_t item) {
    for (int32_t c : clicked)
      if (c == item) return 6;
    for (int k = 3; k >= 1; --k)
      for (int32_t m : stage_members[k])
        if (m == item) return k + 2;
    return 2;
  };

  std::vector<CascadeSample> records;
  records.reserve(stage_members[0].size());
  for (int32_t item : stage_members[0]) {
    CascadeSample s;
    s.request_id = request_id;
    s.user_id = user_id;
    s.item_id = item;
    s.features = featurize(world, user_id, item);
    s.deepest_stage = depth_of(item);
    s.y5 = s.deepest_stage >= 5 ? 1 : 0;
    s.y6 = s.deepest_stage == 6 ? 1 : 0;
    records.push_back(std::move(s));
  }
  return records;
}

std::vector<double> request_oracle_scores(const World& world,
                                          const std::vector<CascadeSample>& records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const CascadeSample& s : records) out.push_back(world.propensity(s.user_id, s.item_id));
  return out;
}

void label_domains(std::vector<CascadeSample>& samples) {
  for (CascadeSample& s : samples) {
    if (s.y6 > s.y5)
      throw std::invalid_argument("label_domains: click without exposure at request " +
                                  std::to_string(s.request_id));
    if ((s.y5 == 1) != (s.deepest_stage >= 5))
      throw std::invalid_argument("label_domains: y5 inconsistent with deepest_stage");
    if (s.y6 == 1)
      s.domain_tag = 1;
    else if (s.y5 == 1)
      s.domain_tag = 2;
    else
      s.domain_tag = 3;
  }
}

std::vector<CascadeSample> subsample_domains(const std::vector<CascadeSample>& samples,
                                             const CascadeConfig& config, RngStream& rng) {
  std::vector<CascadeSample> kept;
  kept.reserve(samples.size());
  for (const CascadeSample& s : samples) {
    double rate = 0.0;
    switch (s.domain_tag) {
      case 1: rate = config.rate_t1; break;
      case 2: rate = config.rate_t2; break;
      case 3: rate = s.deepest_stage >= 3 ? config.rate_s3s5 : config.rate_s2s3; break;
      default: throw std::invalid_argument("subsample_domains: unlabeled sample");
    }
    if (rng.uniform() < rate) {
      kept.push_back(s);
      kept.back().sample_rate_weight = rate;
    }
  }
  return kept;
}

RateCheck empirical_rate_check(const std::vector<CascadeSample>& samples) {
  RateCheck rc;
  for (const CascadeSample& s : samples) {
    ++rc.matching;
    rc.exposure += s.y5;
    rc.click += s.y6;
  }
  if (rc.matching > 0) {
    rc.etr_defined = true;
    rc.etr = static_cast<double>(rc.exposure) / static_cast<double>(rc.matching);
    rc.etctr = static_cast<double>(rc.click) / static_cast<double>(rc.matching);
  }
  if (rc.exposure > 0) {
    rc.ctr_defined = true;
    rc.ctr = static_cast<double>(rc.click) / static_cast<double>(rc.exposure);
  }
  // ETR*CTR = (S5*S6)/(S2*S5) must equal S6/S2 as exact rational arithmetic.
  if (rc.matching > 0 && rc.exposure > 0) {
    const __int128 lhs = static_cast<__int128>(rc.exposure) * rc.click * rc.matching;
    const __int128 rhs = static_cast<__int128>(rc.click) * (static_cast<__int128>(rc.matching) * rc.exposure);
    rc.identity_exact = lhs == rhs;
  } else {
    rc.identity_exact = rc.click == 0;
  }
  return rc;
}

SimOutput simulate_dataset(uint64_t seed, const CascadeConfig& config) {
  config.validate();
  const World world = generate_world(seed, config);

  SimOutput out;
  out.train.fields = kFeatureFields;
  out.eval.fields = kFeatureFields;

  std::vector<CascadeSample> train_raw;
  train_raw.reserve(static_cast<size_t>(config.train_requests) * config.stage_sizes[0]);
  for (int64_t r = 0; r < config.train_requests; ++r) {
    RngStream pick(seed, "request_user." + std::to_string(r));
    const int32_t user = static_cast<int32_t>(pick.uniform_int(config.n_users));
    auto records = simulate_request(world, config, r, user);
    train_raw.insert(train_raw.end(), std::make_move_iterator(records.begin()),
                     std::make_move_iterator(records.end()));
  }
  label_domains(train_raw);
  RngStream sub(seed, "subsample");
  out.train.samples = subsample_domains(train_raw, config, sub);

  for (int64_t r = 0; r < config.eval_requests; ++r) {
    const int64_t rid = config.train_requests + r;
    RngStream pick(seed, "request_user." + std::to_string(rid));
    const int32_t user = static_cast<int32_t>(pick.uniform_int(config.n_users));
    auto records = simulate_request(world, config, rid, user);
    auto oracle = request_oracle_scores(world, records);
    out.eval_oracle.insert(out.eval_oracle.end(), oracle.begin(), oracle.end());
    out.eval.samples.insert(out.eval.samples.end(), std::make_move_iterator(records.begin()),
                            std::make_move_iterator(records.end()));
  }
  label_domains(out.eval.samples);
  return out;
}

void write_dataset(const std::string& path, const Dataset& data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_dataset: cannot open " + path);
  f << "#ecpr-dataset v1 fields=" << data.fields << "\n";
  for (const CascadeSample& s : data.samples) {
    f << s.request_id << '\t' << s.user_id << '\t' << s.item_id;
    for (int32_t id : s.features) f << '\t' << id;
    f << '\t' << s.deepest_stage << '\t' << s.y5 << '\t' << s.y6 << '\t' << s.domain_tag << '\t'
      << format_double(s.sample_rate_weight) << "\n";
  }
  if (!f) throw std::runtime_error("write_dataset: write failed for " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_dataset: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("read_dataset: empty file " + path);
  Dataset data;
  if (line.rfind("#ecpr-dataset v1 fields=", 0) != 0)
    throw std::runtime_error("read_dataset: bad header in " + path);
  data.fields = std::stoi(line.substr(std::string("#ecpr-dataset v1 fields=").size()));
  if (data.fields < 1) throw std::runtime_error("read_dataset: bad field count in " + path);

  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    CascadeSample s;
    s.features.resize(data.fields);
    ss >> s.request_id >> s.user_id >> s.item_id;
    for (int k = 0; k < data.fields; ++k) ss >> s.features[k];
    ss >> s.deepest_stage >> s.y5 >> s.y6 >> s.domain_tag >> s.sample_rate_weight;
    if (!ss) throw std::runtime_error("read_dataset: malformed row in " + path);
    data.samples.push_back(std::move(s));
  }
  return data;
}

void write_oracle(const std::string& path, const Dataset& eval,
                  const std::vector<double>& scores) {
  if (eval.samples.size() != scores.size())
    throw std::invalid_argument("write_oracle: score count does not match dataset");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_oracle: cannot open " + path);
  f << "#ecpr-oracle v1\n";
  for (size_t i = 0; i < scores.size(); ++i) {
    f << eval.samples[i].request_id << '\t' << eval.samples[i].item_id << '\t'
      << format_double(scores[i]) << "\n";
  }
  if (!f) throw std::runtime_error("write_oracle: write failed for " + path);
}

std::vector<double> read_oracle(const std::string& path, const Dataset& eval) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_oracle: cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != "#ecpr-oracle v1")
    throw std::runtime_error("read_oracle: bad header in " + path);
  std::vector<double> scores;
  scores.reserve(eval.samples.size());
  size_t i = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    int64_t rid;
    int32_t item;
    double score;
    ss >> rid >> item >> score;
    if (!ss) throw std::runtime_error("read_oracle: malformed row in " + path);
    if (i >= eval.samples.size() || eval.samples[i].request_id != rid ||
        eval.samples[i].item_id != item)
      throw std::runtime_error("read_oracle: row " + std::to_string(i) +
                               " does not align with the dataset");
    scores.push_back(score);
    ++i;
  }
  if (scores.size() != eval.samples.size())
    throw std::runtime_error("read_oracle: record count mismatch");
  return scores;
}

}  // namespace ecpr
