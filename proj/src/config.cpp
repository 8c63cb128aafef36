#include "ecpr/config.hpp"

#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ecpr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: bad numeric value for '" + key + "': " + v);
  }
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int64_t d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer value for '" + key + "': " + v);
  }
}

std::vector<std::string> split_csv(const std::string& v) {
  std::vector<std::string> parts;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(trim(item));
  return parts;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

template <typename T, size_t N>
std::string join_array(const std::array<T, N>& a) {
  std::string out;
  for (size_t i = 0; i < N; ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>)
      out += format_double(a[i]);
    else
      out += std::to_string(a[i]);
  }
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  sim.validate();
  model_kind_from_string(model);
  if (training_domain != "entire_chain" && training_domain != "exposure_only")
    throw ConfigError("config: training_domain must be entire_chain or exposure_only");
  if (towers != 3 && towers != 4) throw ConfigError("config: towers must be 3 or 4");
  if (gate_placement != "routing_and_towers" && gate_placement != "routing_only")
    throw ConfigError("config: gate_placement must be routing_and_towers or routing_only");
  if (feature_subset != "all" && feature_subset != "half")
    throw ConfigError("config: feature_subset must be all or half");
  if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("config: epochs must be >= 0");
  if (max_steps < 0) throw ConfigError("config: max_steps must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("config: learning_rate must be > 0");
  if (lambda_l0 < 0.0) throw ConfigError("config: lambda must be >= 0");
  if (eval_ks.empty()) throw ConfigError("config: eval_ks must not be empty");
  for (int k : eval_ks)
    if (k < 1) throw ConfigError("config: eval_ks entries must be >= 1");
  try {
    HardConcreteGate{0.0, hc_beta, hc_gamma, hc_zeta}.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (value.empty())
      throw ConfigError("config: empty value for '" + key + "'");

    if (key == "seed") cfg.seed = static_cast<uint64_t>(parse_int(key, value));
    else if (key == "n_users") cfg.sim.n_users = static_cast<int>(parse_int(key, value));
    else if (key == "n_items") cfg.sim.n_items = static_cast<int>(parse_int(key, value));
    else if (key == "latent_dim") cfg.sim.latent_dim = static_cast<int>(parse_int(key, value));
    else if (key == "pool_size") cfg.sim.pool_size = static_cast<int>(parse_int(key, value));
    else if (key == "train_requests") cfg.sim.train_requests = parse_int(key, value);
    else if (key == "eval_requests") cfg.sim.eval_requests = parse_int(key, value);
    else if (key == "base_logit") cfg.sim.base_logit = parse_double(key, value);
    else if (key == "rate_t1") cfg.sim.rate_t1 = parse_double(key, value);
    else if (key == "rate_t2") cfg.sim.rate_t2 = parse_double(key, value);
    else if (key == "rate_s3s5") cfg.sim.rate_s3s5 = parse_double(key, value);
    else if (key == "rate_s2s3") cfg.sim.rate_s2s3 = parse_double(key, value);
    else if (key == "stage_sizes" || key == "stage_noise" || key == "stage_bias_scale") {
      const auto parts = split_csv(value);
      if (parts.size() != 4)
        throw ConfigError("config: '" + key + "' needs 4 comma-separated values");
      for (int i = 0; i < 4; ++i) {
        if (key == "stage_sizes")
          cfg.sim.stage_sizes[i] = static_cast<int>(parse_int(key, parts[i]));
        else if (key == "stage_noise")
          cfg.sim.stage_noise[i] = parse_double(key, parts[i]);
        else
          cfg.sim.stage_bias_scale[i] = parse_double(key, parts[i]);
      }
    } else if (key == "model") cfg.model = value;
    else if (key == "training_domain") cfg.training_domain = value;
    else if (key == "towers") cfg.towers = static_cast<int>(parse_int(key, value));
    else if (key == "lambda") cfg.lambda_l0 = parse_double(key, value);
    else if (key == "hc_beta") cfg.hc_beta = parse_double(key, value);
    else if (key == "hc_gamma") cfg.hc_gamma = parse_double(key, value);
    else if (key == "hc_zeta") cfg.hc_zeta = parse_double(key, value);
    else if (key == "gate_placement") cfg.gate_placement = value;
    else if (key == "learning_rate") cfg.learning_rate = parse_double(key, value);
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "epochs") cfg.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "max_steps") cfg.max_steps = parse_int(key, value);
    else if (key == "eval_ks") {
      cfg.eval_ks.clear();
      for (const std::string& p : split_csv(value))
        cfg.eval_ks.push_back(static_cast<int>(parse_int(key, p)));
    } else if (key == "feature_subset") cfg.feature_subset = value;
    else throw ConfigError("config: unknown key '" + key + "'");
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  std::string out;
  auto kv = [&out](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
  kv("seed", std::to_string(c.seed));
  kv("n_users", std::to_string(c.sim.n_users));
  kv("n_items", std::to_string(c.sim.n_items));
  kv("latent_dim", std::to_string(c.sim.latent_dim));
  kv("pool_size", std::to_string(c.sim.pool_size));
  kv("stage_sizes", join_array(c.sim.stage_sizes));
  kv("stage_noise", join_array(c.sim.stage_noise));
  kv("stage_bias_scale", join_array(c.sim.stage_bias_scale));
  kv("base_logit", format_double(c.sim.base_logit));
  kv("train_requests", std::to_string(c.sim.train_requests));
  kv("eval_requests", std::to_string(c.sim.eval_requests));
  kv("rate_t1", format_double(c.sim.rate_t1));
  kv("rate_t2", format_double(c.sim.rate_t2));
  kv("rate_s3s5", format_double(c.sim.rate_s3s5));
  kv("rate_s2s3", format_double(c.sim.rate_s2s3));
  kv("model", c.model);
  kv("training_domain", c.training_domain);
  kv("towers", std::to_string(c.towers));
  kv("lambda", format_double(c.lambda_l0));
  kv("hc_beta", format_double(c.hc_beta));
  kv("hc_gamma", format_double(c.hc_gamma));
  kv("hc_zeta", format_double(c.hc_zeta));
  kv("gate_placement", c.gate_placement);
  kv("learning_rate", format_double(c.learning_rate));
  kv("batch_size", std::to_string(c.batch_size));
  kv("epochs", std::to_string(c.epochs));
  kv("max_steps", std::to_string(c.max_steps));
  {
    std::string ks;
    for (size_t i = 0; i < c.eval_ks.size(); ++i)
      ks += (i ? "," : "") + std::to_string(c.eval_ks[i]);
    kv("eval_ks", ks);
  }
  kv("feature_subset", c.feature_subset);
  return out;
}

std::vector<int> active_fields_for(const std::string& feature_subset, int fields) {
  const int keep = feature_subset == "half" ? (fields + 1) / 2 : fields;
  std::vector<int> active(keep);
  std::iota(active.begin(), active.end(), 0);
  return active;
}

ModelSpec build_model_spec(const ExperimentConfig& config, const Dataset& train) {
  config.validate();
  ModelSpec spec;
  spec.kind = model_kind_from_string(config.model);
  spec.active_fields = active_fields_for(config.feature_subset, train.fields);
  const std::vector<int> vocabs = infer_vocabs(train);
  for (int f : spec.active_fields) spec.field_vocab.push_back(vocabs[f]);
  spec.towers = config.towers;
  spec.lambda_l0 = config.lambda_l0;
  spec.hc_beta = config.hc_beta;
  spec.hc_gamma = config.hc_gamma;
  spec.hc_zeta = config.hc_zeta;
  spec.gates_on_towers = config.gate_placement == "routing_and_towers";
  return spec;
}

}  // namespace ecpr
