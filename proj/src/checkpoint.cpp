#include "ecpr/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace ecpr {

namespace {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const ExperimentConfig& config) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f << "#ecpr-checkpoint v1 model=" << to_string(model.spec().kind) << "\n";
  for (const auto& [name, p] : model.params()) {
    f << "tensor " << name << " " << p.value.rows << " " << p.value.cols << "\n";
    for (int r = 0; r < p.value.rows; ++r) {
      for (int c = 0; c < p.value.cols; ++c) {
        if (c) f << ' ';
        f << fmt17(p.value(r, c));
      }
      f << "\n";
    }
  }
  f << "config\n" << serialize_config(config);
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

LoadedCheckpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line.rfind("#ecpr-checkpoint v1 model=", 0) != 0)
    throw std::runtime_error("read_checkpoint: bad header in " + path);
  LoadedCheckpoint out;
  out.model_kind = line.substr(std::string("#ecpr-checkpoint v1 model=").size());

  while (std::getline(f, line)) {
    if (line == "config") break;
    std::istringstream head(line);
    std::string word, name;
    int rows = 0, cols = 0;
    head >> word >> name >> rows >> cols;
    if (!head || word != "tensor" || rows < 0 || cols < 0)
      throw std::runtime_error("read_checkpoint: malformed tensor header: " + line);
    Tensor2D t(rows, cols);
    for (int r = 0; r < rows; ++r) {
      if (!std::getline(f, line))
        throw std::runtime_error("read_checkpoint: truncated tensor " + name);
      std::istringstream row(line);
      for (int c = 0; c < cols; ++c) row >> t(r, c);
      if (!row) throw std::runtime_error("read_checkpoint: malformed row in tensor " + name);
    }
    out.tensors.emplace(name, std::move(t));
  }
  if (line != "config") throw std::runtime_error("read_checkpoint: missing config section");
  std::stringstream rest;
  rest << f.rdbuf();
  out.config = parse_config(rest.str());
  return out;
}

std::unique_ptr<Model> model_from_checkpoint(const std::string& path,
                                             ExperimentConfig* config_out) {
  LoadedCheckpoint ck = read_checkpoint(path);

  ModelSpec spec;
  spec.kind = model_kind_from_string(ck.model_kind);
  spec.towers = ck.config.towers;
  spec.lambda_l0 = ck.config.lambda_l0;
  spec.hc_beta = ck.config.hc_beta;
  spec.hc_gamma = ck.config.hc_gamma;
  spec.hc_zeta = ck.config.hc_zeta;
  spec.gates_on_towers = ck.config.gate_placement == "routing_and_towers";
  // Active fields and vocabularies come from the stored embedding tables.
  for (const auto& [name, tensor] : ck.tensors) {
    if (name.rfind("emb.f", 0) == 0) {
      spec.active_fields.push_back(std::stoi(name.substr(5)));
      spec.field_vocab.push_back(tensor.rows - 1);
      spec.sizes.emb_dim = tensor.cols;
    }
  }
  if (spec.active_fields.empty())
    throw std::runtime_error("model_from_checkpoint: no embedding tables in " + path);

  std::unique_ptr<Model> model = make_model(spec, ck.config.seed);
  size_t filled = 0;
  for (auto& [name, p] : model->params()) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end())
      throw std::runtime_error("model_from_checkpoint: checkpoint lacks tensor '" + name + "'");
    if (!it->second.same_shape(p.value))
      throw std::runtime_error("model_from_checkpoint: shape mismatch for '" + name + "': " +
                               it->second.shape_str() + " vs " + p.value.shape_str());
    p.value = it->second;
    ++filled;
  }
  if (filled != ck.tensors.size())
    throw std::runtime_error("model_from_checkpoint: checkpoint has extra tensors");
  if (config_out) *config_out = ck.config;
  return model;
}

}  // namespace ecpr
