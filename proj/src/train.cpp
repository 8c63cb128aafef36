#include "ecpr/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "ecpr/nn.hpp"

namespace ecpr {

Dataset filter_training_domain(const Dataset& data, const std::string& training_domain) {
  if (training_domain == "entire_chain") return data;
  if (training_domain != "exposure_only")
    throw ConfigError("unknown training domain '" + training_domain + "'");
  Dataset out;
  out.fields = data.fields;
  for (const CascadeSample& s : data.samples)
    if (s.deepest_stage >= 5) out.samples.push_back(s);
  return out;
}

int64_t budget_steps(int64_t n_samples, int batch_size, int epochs) {
  const int64_t per_epoch = (n_samples + batch_size - 1) / batch_size;
  return per_epoch * epochs;
}

TrainResult train_loop(Model& model, const Dataset& train, const ExperimentConfig& config,
                       std::ostream* log) {
  if (train.samples.empty()) throw std::invalid_argument("train_loop: empty training split");
  const int64_t n = static_cast<int64_t>(train.samples.size());
  const int64_t target =
      config.max_steps > 0 ? config.max_steps : budget_steps(n, config.batch_size, config.epochs);

  AdamState adam;
  adam.config.learning_rate = config.learning_rate;

  TrainResult result;
  const bool stochastic_gates = model.spec().kind == ModelKind::kEcmm;
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int64_t epoch = 0; result.steps < target; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const ParameterSet snapshot = model.params();

    RngStream shuffle(config.seed, "shuffle.epoch." + std::to_string(epoch));
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(order[i], order[shuffle.uniform_int(i + 1)]);

    double loss_sum = 0.0;
    int64_t batches = 0;
    for (int64_t start = 0; start < n && result.steps < target; start += config.batch_size) {
      const int64_t stop = std::min(n, start + config.batch_size);
      std::span<const int64_t> batch(order.data() + start, static_cast<size_t>(stop - start));

      model.params().zero_grads();
      GateNoise noise;
      if (stochastic_gates) {
        RngStream gate_rng(config.seed, "gates.step." + std::to_string(result.steps));
        noise = draw_gate_noise(model.spec(), gate_rng);
      }
      const double loss =
          model.loss(train, batch, stochastic_gates ? &noise : nullptr, /*want_grad=*/true);
      if (!std::isfinite(loss)) {
        model.params() = snapshot;
        result.aborted = true;
        if (log) *log << "train: non-finite loss at step " << result.steps
                      << ", rolled back to last epoch boundary\n";
        return result;
      }
      adam_step(model.params(), adam);
      loss_sum += loss;
      ++batches;
      ++result.steps;
    }

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.epoch_mean_loss.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
    result.epoch_seconds.push_back(secs);
    if (log)
      *log << "epoch " << epoch << ": mean loss " << result.epoch_mean_loss.back() << " ("
           << batches << " steps)\n";
  }
  return result;
}

}  // namespace ecpr
