#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ecpr/gates.hpp"
#include "ecpr/nn.hpp"
#include "ecpr/rng.hpp"
#include "ecpr/sim.hpp"
#include "ecpr/tensor.hpp"

namespace ecpr {

enum class ModelKind {
  kTwoTower,
  kDeepBaseline,
  kDeepBaselineSoftmax,
  kEcm,
  kEsmm,
  kEcmm,
};

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

enum class Head { kT1, kT2, kPEtr };
Head head_from_string(const std::string& name);

// Per-sample head outputs. Fields a model does not produce stay NaN and
// selecting them throws.
struct HeadsRow {
  double t1 = 0, t2 = 0, t3 = 0, t4 = 0;
  double petctr = 0, petr = 0, pctr = 0, pitr = 0;
  bool has_t2 = false, has_petr = false;

  double select(Head h) const;
};

struct ModelSizes {
  int emb_dim = 8;
  std::vector<int> mlp_hidden = {128, 64, 32};
  int shared_width = 128;
  int sub1_count = 8;
  int sub2_count = 4;
  int sub_width = 32;
  std::vector<int> tower_hidden = {16};
  int two_tower_hidden = 64;
  int two_tower_dim = 32;
};

struct ModelSpec {
  ModelKind kind = ModelKind::kEcm;
  ModelSizes sizes;
  std::vector<int> active_fields;  // absolute indices into the feature row
  std::vector<int> field_vocab;    // per active field, OOV row excluded
  int towers = 3;                  // 3 or 4 (ecmm only)
  double lambda_l0 = 1e-5;
  double hc_beta = 0.7;
  double hc_gamma = -0.1;
  double hc_zeta = 1.1;
  bool gates_on_towers = true;  // gate placement: routing connections (+ tower inputs)

  int input_dim() const { return static_cast<int>(active_fields.size()) * sizes.emb_dim; }
};

// Per-step uniform draws for the stochastic gates; all samples of a minibatch
// share one draw per connection. Frozen noise makes the loss deterministic,
// which the gradient checker requires.
struct GateNoise {
  Tensor2D route1_m;
  Tensor2D route2_m;
};

GateNoise draw_gate_noise(const ModelSpec& spec, RngStream& rng);

class Model {
 public:
  explicit Model(ModelSpec spec) : spec_(std::move(spec)) {}
  virtual ~Model() = default;

  const ModelSpec& spec() const { return spec_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // Head outputs for a batch. Stochastic gates use `noise` when given and the
  // deterministic test-time gate otherwise.
  virtual std::vector<HeadsRow> forward(const Dataset& data, std::span<const int64_t> idx,
                                        const GateNoise* noise) const = 0;

  // Mean batch loss (plus any regularizer); accumulates gradients into the
  // parameter set when want_grad is true.
  virtual double loss(const Dataset& data, std::span<const int64_t> idx, const GateNoise* noise,
                      bool want_grad) = 0;

  // Sum of P(z != 0) over all hard-concrete gates; 0 for ungated models.
  virtual double expected_active_gates() const { return 0.0; }

 protected:
  // Concatenated embedding rows for the active fields; ids outside the vocab
  // land on the table's dedicated OOV row.
  Tensor2D embed(const Dataset& data, std::span<const int64_t> idx) const;
  void embed_backward(const Dataset& data, std::span<const int64_t> idx, const Tensor2D& d_input);
  void add_embedding_params(uint64_t seed);
  std::string emb_name(int slot) const;
  int embedding_row(int slot, int32_t id) const;

  ModelSpec spec_;
  ParameterSet params_;
};

std::unique_ptr<Model> make_model(const ModelSpec& spec, uint64_t seed);

// Vocabulary sizes observed in a training split (max id + 1 per field).
std::vector<int> infer_vocabs(const Dataset& data);

// Dot product of the two tower outputs; sigmoid for probability use.
double two_tower_score(std::span<const double> user_vec, std::span<const double> item_vec);

struct RankedCandidate {
  int32_t item_id;
  double score;
};

// Descending by head score, ties by ascending item id.
std::vector<RankedCandidate> rank_by_head(const Model& model, const Dataset& data,
                                          std::span<const int64_t> idx, Head head);

// ---- shared building blocks ----

// Affine stack with relu on hidden layers; the last layer is linear unless
// relu_last is set. Parameters are "<prefix>.l<i>.W" / ".b"; layer i maps
// dims[i] -> dims[i+1].
struct MlpStack {
  std::string prefix;
  std::vector<int> dims;
  bool relu_last = false;

  void add_params(ParameterSet& params, uint64_t seed) const;
  // cache[0] is the input; cache[i+1] the post-activation of layer i.
  Tensor2D forward(const ParameterSet& params, Tensor2D input,
                   std::vector<Tensor2D>* cache) const;
  // d_out is the gradient at the (linear) output; returns d_input.
  Tensor2D backward(ParameterSet& params, const std::vector<Tensor2D>& cache,
                    Tensor2D d_out) const;
};

Tensor2D glorot_uniform(int rows, int cols, uint64_t seed, const std::string& name);

// Forced-open / uniform-average routing switches used by the degeneracy
// checks; normal training leaves both off.
struct RoutingOverride {
  bool force_open_gates = false;
  bool uniform_routing = false;
};

class EcmmModel;
EcmmModel* as_ecmm(Model* model);

}  // namespace ecpr
