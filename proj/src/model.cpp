#include "ecpr/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ecpr/ecmm.hpp"

namespace ecpr {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kTwoTower: return "two_tower";
    case ModelKind::kDeepBaseline: return "deep_baseline";
    case ModelKind::kDeepBaselineSoftmax: return "deep_baseline_softmax";
    case ModelKind::kEcm: return "ecm";
    case ModelKind::kEsmm: return "esmm";
    case ModelKind::kEcmm: return "ecmm";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "two_tower") return ModelKind::kTwoTower;
  if (name == "deep_baseline") return ModelKind::kDeepBaseline;
  if (name == "deep_baseline_softmax") return ModelKind::kDeepBaselineSoftmax;
  if (name == "ecm") return ModelKind::kEcm;
  if (name == "esmm") return ModelKind::kEsmm;
  if (name == "ecmm") return ModelKind::kEcmm;
  throw std::invalid_argument("unknown model kind '" + name + "'");
}

Head head_from_string(const std::string& name) {
  if (name == "t1") return Head::kT1;
  if (name == "t2") return Head::kT2;
  if (name == "petr") return Head::kPEtr;
  throw std::invalid_argument("unknown head '" + name + "' (expected t1, t2 or petr)");
}

double HeadsRow::select(Head h) const {
  switch (h) {
    case Head::kT1: return t1;
    case Head::kT2:
      if (!has_t2) throw std::invalid_argument("head t2 is undefined for this model");
      return t2;
    case Head::kPEtr:
      if (!has_petr) throw std::invalid_argument("head petr is undefined for this model");
      return petr;
  }
  return t1;
}

Tensor2D glorot_uniform(int rows, int cols, uint64_t seed, const std::string& name) {
  RngStream rng(seed, "init." + name);
  const double limit = std::sqrt(6.0 / (rows + cols));
  Tensor2D t(rows, cols);
  for (double& v : t.data) v = (2.0 * rng.uniform() - 1.0) * limit;
  return t;
}

namespace {

Tensor2D embedding_init(int rows, int cols, uint64_t seed, const std::string& name) {
  RngStream rng(seed, "init." + name);
  Tensor2D t(rows, cols);
  for (double& v : t.data) v = (2.0 * rng.uniform() - 1.0) * 0.1;
  return t;
}

}  // namespace

GateNoise draw_gate_noise(const ModelSpec& spec, RngStream& rng) {
  GateNoise noise;
  noise.route1_m = Tensor2D(spec.sizes.sub1_count, spec.sizes.sub2_count);
  for (double& v : noise.route1_m.data) v = rng.uniform_open();
  noise.route2_m = Tensor2D(spec.sizes.sub2_count, spec.towers);
  for (double& v : noise.route2_m.data) v = rng.uniform_open();
  return noise;
}

std::string Model::emb_name(int slot) const {
  const int field = spec_.active_fields[slot];
  return "emb.f" + std::string(field < 10 ? "0" : "") + std::to_string(field);
}

void Model::add_embedding_params(uint64_t seed) {
  if (spec_.active_fields.size() != spec_.field_vocab.size())
    throw std::invalid_argument("model spec: active_fields and field_vocab sizes differ");
  for (size_t s = 0; s < spec_.active_fields.size(); ++s) {
    const std::string name = emb_name(static_cast<int>(s));
    // One extra row catches out-of-vocabulary ids.
    params_.add(name, embedding_init(spec_.field_vocab[s] + 1, spec_.sizes.emb_dim, seed, name));
  }
}

int Model::embedding_row(int slot, int32_t id) const {
  const int vocab = spec_.field_vocab[slot];
  return (id >= 0 && id < vocab) ? id : vocab;
}

Tensor2D Model::embed(const Dataset& data, std::span<const int64_t> idx) const {
  const int dim = spec_.sizes.emb_dim;
  const int slots = static_cast<int>(spec_.active_fields.size());
  Tensor2D x(static_cast<int>(idx.size()), slots * dim);
  for (size_t k = 0; k < idx.size(); ++k) {
    const CascadeSample& s = data.samples[idx[k]];
    for (int slot = 0; slot < slots; ++slot) {
      const int field = spec_.active_fields[slot];
      if (field >= data.fields)
        throw std::invalid_argument("embed: field index exceeds dataset fields");
      const Tensor2D& table = params_.value(emb_name(slot));
      const int row = embedding_row(slot, s.features[field]);
      std::copy_n(&table.data[static_cast<size_t>(row) * dim], dim,
                  &x.data[(static_cast<size_t>(k) * slots + slot) * dim]);
    }
  }
  return x;
}

void Model::embed_backward(const Dataset& data, std::span<const int64_t> idx,
                           const Tensor2D& d_input) {
  const int dim = spec_.sizes.emb_dim;
  const int slots = static_cast<int>(spec_.active_fields.size());
  for (size_t k = 0; k < idx.size(); ++k) {
    const CascadeSample& s = data.samples[idx[k]];
    for (int slot = 0; slot < slots; ++slot) {
      const int field = spec_.active_fields[slot];
      Tensor2D& g = params_.grad(emb_name(slot));
      const int row = embedding_row(slot, s.features[field]);
      const double* src = &d_input.data[(static_cast<size_t>(k) * slots + slot) * dim];
      double* dst = &g.data[static_cast<size_t>(row) * dim];
      for (int d = 0; d < dim; ++d) dst[d] += src[d];
    }
  }
}

void MlpStack::add_params(ParameterSet& params, uint64_t seed) const {
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::string base = prefix + ".l" + std::to_string(i);
    params.add(base + ".W", glorot_uniform(dims[i], dims[i + 1], seed, base + ".W"));
    params.add(base + ".b", Tensor2D(1, dims[i + 1]));
  }
}

Tensor2D MlpStack::forward(const ParameterSet& params, Tensor2D input,
                           std::vector<Tensor2D>* cache) const {
  if (cache) {
    cache->clear();
    cache->push_back(input);
  }
  Tensor2D cur = std::move(input);
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::string base = prefix + ".l" + std::to_string(i);
    Tensor2D next;
    affine_forward(cur, params.value(base + ".W"), params.value(base + ".b"), next);
    if (i + 2 < dims.size() || relu_last) relu_inplace(next);
    if (cache) cache->push_back(next);
    cur = std::move(next);
  }
  return cur;
}

Tensor2D MlpStack::backward(ParameterSet& params, const std::vector<Tensor2D>& cache,
                            Tensor2D d_out) const {
  const int layers = static_cast<int>(dims.size()) - 1;
  Tensor2D d = std::move(d_out);
  for (int i = layers - 1; i >= 0; --i) {
    const std::string base = prefix + ".l" + std::to_string(i);
    if (i + 1 < layers || relu_last) relu_backward(cache[i + 1], d);
    Tensor2D d_prev(cache[i].rows, cache[i].cols);
    affine_backward(cache[i], params.value(base + ".W"), d, &d_prev,
                    &params.grad(base + ".W"), &params.grad(base + ".b"));
    d = std::move(d_prev);
  }
  return d;
}

double two_tower_score(std::span<const double> user_vec, std::span<const double> item_vec) {
  if (user_vec.size() != item_vec.size())
    throw std::invalid_argument("two_tower_score: tower output dimensions differ");
  double dot = 0.0;
  for (size_t i = 0; i < user_vec.size(); ++i) dot += user_vec[i] * item_vec[i];
  return dot;
}

std::vector<int> infer_vocabs(const Dataset& data) {
  std::vector<int> vocab(data.fields, 1);
  for (const CascadeSample& s : data.samples)
    for (int f = 0; f < data.fields; ++f)
      vocab[f] = std::max(vocab[f], static_cast<int>(s.features[f]) + 1);
  return vocab;
}

std::vector<RankedCandidate> rank_by_head(const Model& model, const Dataset& data,
                                          std::span<const int64_t> idx, Head head) {
  if (idx.empty()) throw std::invalid_argument("rank_by_head: empty candidate set");
  const std::vector<HeadsRow> heads = model.forward(data, idx, nullptr);
  std::vector<RankedCandidate> ranked(idx.size());
  for (size_t i = 0; i < idx.size(); ++i)
    ranked[i] = {data.samples[idx[i]].item_id, heads[i].select(head)};
  std::sort(ranked.begin(), ranked.end(), [](const RankedCandidate& a, const RankedCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item_id < b.item_id;
  });
  return ranked;
}

// ---------------------------------------------------------------------------
// Plain MLP over concatenated embeddings: single sigmoid head for the deep
// baseline, 3-class softmax head for the cross-domain variants.

namespace {

class MlpModel : public Model {
 public:
  MlpModel(ModelSpec spec, uint64_t seed) : Model(std::move(spec)) {
    add_embedding_params(seed);
    const bool multiclass = spec_.kind != ModelKind::kDeepBaseline;
    stack_.prefix = "mlp";
    stack_.dims.push_back(spec_.input_dim());
    for (int h : spec_.sizes.mlp_hidden) stack_.dims.push_back(h);
    stack_.dims.push_back(multiclass ? 3 : 1);
    stack_.add_params(params_, seed);
  }

  std::vector<HeadsRow> forward(const Dataset& data, std::span<const int64_t> idx,
                                const GateNoise*) const override {
    const Tensor2D logits = stack_.forward(params_, embed(data, idx), nullptr);
    std::vector<HeadsRow> out(idx.size());
    const bool multiclass = spec_.kind != ModelKind::kDeepBaseline;
    for (size_t k = 0; k < idx.size(); ++k) {
      HeadsRow& h = out[k];
      if (multiclass) {
        const std::vector<double> p =
            softmax(std::span<const double>(&logits.data[k * 3], 3));
        h.t1 = p[0];
        h.t2 = p[1];
        h.t3 = p[2];
        h.petctr = p[0];
        h.petr = p[0] + p[1];
        h.pctr = h.petr > 0.0 ? p[0] / h.petr : 0.5;
        h.pitr = p[2];
        h.has_t2 = true;
        h.has_petr = true;
      } else {
        h.t1 = sigmoid(logits.data[k]);
        h.petctr = h.t1;
      }
    }
    return out;
  }

  double loss(const Dataset& data, std::span<const int64_t> idx, const GateNoise*,
              bool want_grad) override {
    std::vector<Tensor2D> cache;
    const Tensor2D logits = stack_.forward(params_, embed(data, idx), &cache);
    const double inv_b = 1.0 / static_cast<double>(idx.size());
    const bool multiclass = spec_.kind != ModelKind::kDeepBaseline;
    double total = 0.0;
    Tensor2D d_logits(logits.rows, logits.cols);
    for (size_t k = 0; k < idx.size(); ++k) {
      const CascadeSample& s = data.samples[idx[k]];
      if (multiclass) {
        if (s.domain_tag < 1 || s.domain_tag > 3)
          throw std::invalid_argument("loss: sample without a valid domain tag");
        const std::span<const double> row(&logits.data[k * 3], 3);
        total += softmax_xent_loss(s.domain_tag - 1, row);
        if (want_grad) {
          const std::vector<double> g = softmax_xent_grad(s.domain_tag - 1, row);
          for (int j = 0; j < 3; ++j) d_logits(static_cast<int>(k), j) = g[j] * inv_b;
        }
      } else {
        const double p = sigmoid(logits.data[k]);
        total += bce_loss(s.y6, p);
        if (want_grad) d_logits.data[k] = bce_grad(s.y6, p) * p * (1.0 - p) * inv_b;
      }
    }
    if (want_grad) {
      const Tensor2D d_input = stack_.backward(params_, cache, std::move(d_logits));
      embed_backward(data, idx, d_input);
    }
    return total * inv_b;
  }

 private:
  MlpStack stack_;
};

// ---------------------------------------------------------------------------
// Vector-product baseline: user tower and item tower, score = dot product.

class TwoTowerModel : public Model {
 public:
  TwoTowerModel(ModelSpec spec, uint64_t seed) : Model(std::move(spec)) {
    add_embedding_params(seed);
    for (size_t slot = 0; slot < spec_.active_fields.size(); ++slot) {
      const int f = spec_.active_fields[slot];
      const bool user_side = f == 0 || (f >= 2 && f <= 6);
      (user_side ? user_slots_ : item_slots_).push_back(static_cast<int>(slot));
    }
    if (user_slots_.empty() || item_slots_.empty())
      throw std::invalid_argument("two_tower: need at least one field per tower");
    user_stack_ = {"user", {static_cast<int>(user_slots_.size()) * spec_.sizes.emb_dim,
                            spec_.sizes.two_tower_hidden, spec_.sizes.two_tower_dim}};
    item_stack_ = {"item", {static_cast<int>(item_slots_.size()) * spec_.sizes.emb_dim,
                            spec_.sizes.two_tower_hidden, spec_.sizes.two_tower_dim}};
    user_stack_.add_params(params_, seed);
    item_stack_.add_params(params_, seed);
  }

  std::vector<HeadsRow> forward(const Dataset& data, std::span<const int64_t> idx,
                                const GateNoise*) const override {
    const Tensor2D u = user_stack_.forward(params_, embed_slots(data, idx, user_slots_), nullptr);
    const Tensor2D v = item_stack_.forward(params_, embed_slots(data, idx, item_slots_), nullptr);
    std::vector<HeadsRow> out(idx.size());
    for (size_t k = 0; k < idx.size(); ++k) {
      const double dot = two_tower_score({&u.data[k * u.cols], static_cast<size_t>(u.cols)},
                                         {&v.data[k * v.cols], static_cast<size_t>(v.cols)});
      out[k].t1 = sigmoid(dot);
      out[k].petctr = out[k].t1;
    }
    return out;
  }

  double loss(const Dataset& data, std::span<const int64_t> idx, const GateNoise*,
              bool want_grad) override {
    std::vector<Tensor2D> ucache, icache;
    const Tensor2D xu = embed_slots(data, idx, user_slots_);
    const Tensor2D xv = embed_slots(data, idx, item_slots_);
    const Tensor2D u = user_stack_.forward(params_, xu, &ucache);
    const Tensor2D v = item_stack_.forward(params_, xv, &icache);
    const double inv_b = 1.0 / static_cast<double>(idx.size());
    double total = 0.0;
    Tensor2D du(u.rows, u.cols), dv(v.rows, v.cols);
    for (size_t k = 0; k < idx.size(); ++k) {
      const CascadeSample& s = data.samples[idx[k]];
      const double dot = two_tower_score({&u.data[k * u.cols], static_cast<size_t>(u.cols)},
                                         {&v.data[k * v.cols], static_cast<size_t>(v.cols)});
      const double p = sigmoid(dot);
      total += bce_loss(s.y6, p);
      if (want_grad) {
        const double dscore = bce_grad(s.y6, p) * p * (1.0 - p) * inv_b;
        for (int d = 0; d < u.cols; ++d) {
          du(static_cast<int>(k), d) = dscore * v(static_cast<int>(k), d);
          dv(static_cast<int>(k), d) = dscore * u(static_cast<int>(k), d);
        }
      }
    }
    if (want_grad) {
      embed_slots_backward(data, idx, user_slots_,
                           user_stack_.backward(params_, ucache, std::move(du)));
      embed_slots_backward(data, idx, item_slots_,
                           item_stack_.backward(params_, icache, std::move(dv)));
    }
    return total * inv_b;
  }

 private:
  Tensor2D embed_slots(const Dataset& data, std::span<const int64_t> idx,
                       const std::vector<int>& slots) const {
    const int dim = spec_.sizes.emb_dim;
    Tensor2D x(static_cast<int>(idx.size()), static_cast<int>(slots.size()) * dim);
    for (size_t k = 0; k < idx.size(); ++k) {
      const CascadeSample& s = data.samples[idx[k]];
      for (size_t j = 0; j < slots.size(); ++j) {
        const int slot = slots[j];
        const Tensor2D& table = params_.value(emb_name(slot));
        const int row = embedding_row(slot, s.features[spec_.active_fields[slot]]);
        std::copy_n(&table.data[static_cast<size_t>(row) * dim], dim,
                    &x.data[(k * slots.size() + j) * dim]);
      }
    }
    return x;
  }

  void embed_slots_backward(const Dataset& data, std::span<const int64_t> idx,
                            const std::vector<int>& slots, const Tensor2D& d_input) {
    const int dim = spec_.sizes.emb_dim;
    for (size_t k = 0; k < idx.size(); ++k) {
      const CascadeSample& s = data.samples[idx[k]];
      for (size_t j = 0; j < slots.size(); ++j) {
        const int slot = slots[j];
        Tensor2D& g = params_.grad(emb_name(slot));
        const int row = embedding_row(slot, s.features[spec_.active_fields[slot]]);
        const double* src = &d_input.data[(k * slots.size() + j) * dim];
        double* dst = &g.data[static_cast<size_t>(row) * dim];
        for (int d = 0; d < dim; ++d) dst[d] += src[d];
      }
    }
  }

  std::vector<int> user_slots_, item_slots_;
  MlpStack user_stack_, item_stack_;
};

// ---------------------------------------------------------------------------
// ESMM-style joint model: an exposure tower and a click tower over shared
// embeddings; the joint probability is their product.

class EsmmModel : public Model {
 public:
  EsmmModel(ModelSpec spec, uint64_t seed) : Model(std::move(spec)) {
    add_embedding_params(seed);
    etr_stack_.prefix = "etr";
    ctr_stack_.prefix = "ctr";
    for (MlpStack* st : {&etr_stack_, &ctr_stack_}) {
      st->dims.push_back(spec_.input_dim());
      for (int h : spec_.sizes.mlp_hidden) st->dims.push_back(h);
      st->dims.push_back(1);
      st->add_params(params_, seed);
    }
  }

  std::vector<HeadsRow> forward(const Dataset& data, std::span<const int64_t> idx,
                                const GateNoise*) const override {
    const Tensor2D x = embed(data, idx);
    const Tensor2D a = etr_stack_.forward(params_, x, nullptr);
    const Tensor2D b = ctr_stack_.forward(params_, x, nullptr);
    std::vector<HeadsRow> out(idx.size());
    for (size_t k = 0; k < idx.size(); ++k) {
      HeadsRow& h = out[k];
      h.petr = sigmoid(a.data[k]);
      h.pctr = sigmoid(b.data[k]);
      h.petctr = h.petr * h.pctr;
      h.t1 = h.petctr;
      h.t2 = h.petr - h.petctr;
      h.has_t2 = true;
      h.has_petr = true;
    }
    return out;
  }

  double loss(const Dataset& data, std::span<const int64_t> idx, const GateNoise*,
              bool want_grad) override {
    std::vector<Tensor2D> acache, bcache;
    const Tensor2D x = embed(data, idx);
    const Tensor2D a = etr_stack_.forward(params_, x, &acache);
    const Tensor2D b = ctr_stack_.forward(params_, x, &bcache);
    const double inv_b = 1.0 / static_cast<double>(idx.size());
    double total = 0.0;
    Tensor2D da(a.rows, 1), db(b.rows, 1);
    for (size_t k = 0; k < idx.size(); ++k) {
      const CascadeSample& s = data.samples[idx[k]];
      const double petr = sigmoid(a.data[k]);
      const double pctr = sigmoid(b.data[k]);
      const double joint = petr * pctr;
      total += bce_loss(s.y5, petr) + bce_loss(s.y6, joint);
      if (want_grad) {
        const double d_petr = bce_grad(s.y5, petr) + bce_grad(s.y6, joint) * pctr;
        const double d_pctr = bce_grad(s.y6, joint) * petr;
        da.data[k] = d_petr * petr * (1.0 - petr) * inv_b;
        db.data[k] = d_pctr * pctr * (1.0 - pctr) * inv_b;
      }
    }
    if (want_grad) {
      Tensor2D dx(x.rows, x.cols);
      Tensor2D d1 = etr_stack_.backward(params_, acache, std::move(da));
      Tensor2D d2 = ctr_stack_.backward(params_, bcache, std::move(db));
      for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] = d1.data[i] + d2.data[i];
      embed_backward(data, idx, dx);
    }
    return total * inv_b;
  }

 private:
  MlpStack etr_stack_, ctr_stack_;
};

}  // namespace

EcmmModel* as_ecmm(Model* model) { return dynamic_cast<EcmmModel*>(model); }

std::unique_ptr<Model> make_model(const ModelSpec& spec, uint64_t seed) {
  switch (spec.kind) {
    case ModelKind::kTwoTower: return std::make_unique<TwoTowerModel>(spec, seed);
    case ModelKind::kDeepBaseline:
    case ModelKind::kDeepBaselineSoftmax:
    case ModelKind::kEcm: return std::make_unique<MlpModel>(spec, seed);
    case ModelKind::kEsmm: return std::make_unique<EsmmModel>(spec, seed);
    case ModelKind::kEcmm: return std::make_unique<EcmmModel>(spec, seed);
  }
  throw std::invalid_argument("make_model: bad kind");
}

}  // namespace ecpr
