#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bayesformer/checkpoint.hpp"
#include "bayesformer/datasets.hpp"
#include "bayesformer/graph.hpp"
#include "bayesformer/encoder.hpp"
#include "bayesformer/model.hpp"
#include "bayesformer/variational.hpp"

namespace bayesformer {

enum class OptimizerKind { Sgd, Adam };
OptimizerKind parse_optimizer(std::string_view name);
std::string_view to_string(OptimizerKind kind);

struct TrainConfig {
  float lr = 1e-3f;
  std::size_t batch_size = 32;
  std::size_t max_steps = 1000;
  // KL/L2 weight; when unset, default_lambda(p_drop, sigma_prior, |train|).
  std::optional<float> lambda;
  float sigma_prior = 1.0f;
  std::uint64_t seed = 0;
  std::size_t eval_every = 100;
  OptimizerKind optimizer = OptimizerKind::Adam;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float adam_eps = 1e-8f;
  std::size_t workers = 0;  // 0: hardware concurrency

  void validate() const;
  float resolved_lambda(float p_drop, std::size_t n_train) const;
};

enum class Split { Train, Valid };
std::string_view to_string(Split split);

struct MetricsRow {
  std::size_t step = 0;
  Split split = Split::Valid;
  double loss = 0.0;
  double nll = 0.0;
  double accuracy = 0.0;
  double mcc = 0.0;
  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

// Matthews correlation from a C x C confusion matrix (rows: truth); the
// multiclass generalization reduces to the usual binary formula. 0 when undefined.
double matthews_corrcoef(std::span<const std::size_t> confusion, std::size_t n_classes);

// -log softmax(logits)[label].
double negative_log_likelihood(const Tensor& logits, int label);

// Mean per-example NLL plus kl_regularizer(params, lambda).
double loss(std::span<const Tensor> logits_batch, std::span<const int> labels,
            const EncoderParams& params, float lambda);

// The same objective recorded as one graph, with one BayesFormer mask plan per
// example (null plans for deterministic passes).
Var objective(Graph& graph, const BoundParams& params, const EncoderConfig& config,
              std::span<const Example> batch, std::span<const MaskPlan* const> plans, float lambda);

// Gradient of the objective for one minibatch, each example forwarded with
// its own stream. Per-example gradients are reduced in batch order.
struct BatchGradient {
  double loss = 0.0;
  double nll = 0.0;
  EncoderParams grads;
};
BatchGradient batch_gradient(const EncoderParams& params, const EncoderConfig& config,
                             std::span<const Example* const> batch,
                             std::span<const Stream> streams, float lambda,
                             std::size_t workers = 0);

class Optimizer {
 public:
  Optimizer(const TrainConfig& config, const EncoderParams& shape_like);
  void step(EncoderParams& params, const EncoderParams& grads);
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  TrainConfig config_;
  EncoderParams m_;
  EncoderParams v_;
  std::size_t t_ = 0;
};

// The seeded initialization train() starts from when no parameters are given.
EncoderParams initial_params(const EncoderConfig& config, std::uint64_t seed);

// Stream of the mask plan for dataset example `index` at update `step`.
Stream training_stream(std::uint64_t seed, std::size_t index, std::size_t step);

struct TrainResult {
  Checkpoint best;   // lowest validation NLL among recorded evaluations
  Checkpoint final;
  std::size_t best_step = 0;
  std::vector<MetricsRow> metrics;
};

// Runs max_steps updates from `initial` (or a seeded init). Metrics are
// recorded at step 0 and every eval_every steps; validation is mask free.
// Throws TrainingDiverged when the loss stops being finite.
TrainResult train(const EncoderConfig& model_config, const TrainConfig& train_config,
                  const Dataset& train_data, const Dataset& valid_data,
                  const EncoderParams* initial = nullptr);

// Deterministic-mode metrics; loss adds kl_regularizer(lambda) to the NLL.
MetricsRow evaluate(const Checkpoint& checkpoint, const Dataset& data, Split split = Split::Valid,
                    float lambda = 0.0f);

// Header "step,split,loss,nll,accuracy,mcc".
std::string metrics_csv(std::span<const MetricsRow> rows);
void write_metrics_csv(std::span<const MetricsRow> rows, const std::filesystem::path& path);

}  // namespace bayesformer
