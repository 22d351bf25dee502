#pragma once

#include <span>
#include <string>
#include <vector>

#include "bayesformer/graph.hpp"
#include "bayesformer/model.hpp"
#include "bayesformer/rng.hpp"
#include "bayesformer/variational.hpp"

namespace bayesformer {

// Parameters bound as leaves of one graph.
using BoundParams = EncoderWeights<Var>;
using BoundLayer = LayerWeights<Var>;
using BoundHead = HeadWeights<Var>;

BoundParams bind(Graph& graph, const EncoderParams& params, bool requires_grad);
// grads[k] += weight * dL/dparam[k] in manifest order.
void accumulate_grads(const Graph& graph, const BoundParams& bound, EncoderParams& grads,
                      float weight = 1.0f);

// Standard dropout sites of the baseline encoder (all elementwise).
struct BaselineLayerMasks {
  std::vector<Mask> attention;  // per head, n x n over attention weights
  Mask attn_out;                // n x d_model, sublayer output before the residual
  Mask ffn_hidden;              // n x d_ffn, after the activation
  Mask ffn_out;                 // n x d_model, sublayer output before the residual
};

struct BaselinePlan {
  Mask embed;  // n x d_model, after the embedding layer norm
  std::vector<BaselineLayerMasks> layers;
};

BaselinePlan sample_baseline_plan(const EncoderConfig& config, std::size_t seq_len,
                                  const Stream& stream);

// Optional instrumentation: records the tensor entering and leaving every
// BayesFormer mask site so tests can audit the realized masks.
struct MaskSiteRecord {
  std::string site;
  Tensor before;
  Tensor after;
};
using ForwardTrace = std::vector<MaskSiteRecord>;

// Graph-level building blocks. A null plan means deterministic (mask free).
Var embed(Graph& graph, const BoundParams& params, const EncoderConfig& config,
          std::span<const int> token_ids, const MaskPlan* plan, ForwardTrace* trace = nullptr);

Var attention_head(Graph& graph, Var x, const BoundHead& head, const HeadMasks* masks,
                   bool scaled, ForwardTrace* trace = nullptr, const std::string& site = "head");

Var encoder_layer(Graph& graph, Var x, const BoundLayer& layer, const EncoderConfig& config,
                  const LayerMasks* masks, bool scaled, ForwardTrace* trace = nullptr,
                  std::size_t layer_index = 0);

// BayesFormer encoder; returns [1 x n_classes] logits read from position 0.
Var forward(Graph& graph, const BoundParams& params, const EncoderConfig& config,
            std::span<const int> token_ids, const MaskPlan* plan, ForwardTrace* trace = nullptr);

// Standard-dropout encoder with the same parameters. A null plan is eval mode.
Var baseline_forward(Graph& graph, const BoundParams& params, const EncoderConfig& config,
                     std::span<const int> token_ids, const BaselinePlan* plan);

// One stochastic pass of whichever variant config.variant names, masks drawn
// from `stream`. This is the training-time and MC-inference forward.
Var stochastic_forward(Graph& graph, const BoundParams& params, const EncoderConfig& config,
                       std::span<const int> token_ids, const Stream& stream);

// Tensor-level conveniences (no gradients).
Tensor forward(std::span<const int> token_ids, const EncoderParams& params,
               const EncoderConfig& config, const MaskPlan* plan = nullptr,
               ForwardTrace* trace = nullptr);
Tensor baseline_forward(std::span<const int> token_ids, const EncoderParams& params,
                        const EncoderConfig& config, const BaselinePlan* plan = nullptr);
Tensor deterministic_logits(std::span<const int> token_ids, const EncoderParams& params,
                            const EncoderConfig& config);
Tensor stochastic_logits(std::span<const int> token_ids, const EncoderParams& params,
                         const EncoderConfig& config, const Stream& stream);

// Throws ContractError when ids are out of range or the sequence is too long.
void validate_tokens(std::span<const int> token_ids, const EncoderConfig& config);

}  // namespace bayesformer
