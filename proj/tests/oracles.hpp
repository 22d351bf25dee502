#pragma once

// Explicit-weight route of the mask/weight equivalence: every row mask of a
// plan is turned into a weight draw from the variational distribution at
// sigma = 0 with the same Bernoulli outcomes.

#include "bayesformer/encoder.hpp"
#include "bayesformer/variational.hpp"

namespace oracle {

inline bayesformer::Tensor rows_of(const bayesformer::Tensor& mean, const bayesformer::Mask& m) {
  return bayesformer::weights_from_rows(mean, m.keep, 0.0f, bayesformer::Stream(0));
}

// W_input, W_pos, per-head W_Q/W_K/W_V and W_mlp1 with the plan's dropped rows zeroed.
inline bayesformer::EncoderParams explicit_weights(const bayesformer::EncoderParams& params,
                                                   const bayesformer::MaskPlan& plan) {
  bayesformer::EncoderParams w = params;
  w.token_embedding = rows_of(params.token_embedding, plan.input);
  w.position_embedding = rows_of(params.position_embedding, plan.position);
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    const auto& lm = plan.layers[i];
    for (std::size_t j = 0; j < w.layers[i].heads.size(); ++j) {
      auto& h = w.layers[i].heads[j];
      h.query = rows_of(params.layers[i].heads[j].query, lm.heads[j].query);
      h.key = rows_of(params.layers[i].heads[j].key, lm.heads[j].key);
      h.value = rows_of(params.layers[i].heads[j].value, lm.heads[j].value);
    }
    w.layers[i].ffn_in = rows_of(params.layers[i].ffn_in, lm.ffn_input);
  }
  return w;
}

// The plan with every row mask replaced by keep-all; only the elementwise
// FFN-internal dropout remains.
inline bayesformer::MaskPlan element_only(const bayesformer::EncoderConfig& cfg,
                                          const bayesformer::MaskPlan& plan, std::size_t n) {
  bayesformer::MaskPlan out = bayesformer::keep_all_plan(cfg, n);
  out.scaled = plan.scaled;
  for (std::size_t i = 0; i < cfg.n_layers; ++i) out.layers[i].ffn_hidden = plan.layers[i].ffn_hidden;
  return out;
}

// The plan with its elementwise FFN-internal dropout disabled.
inline bayesformer::MaskPlan rows_only(const bayesformer::EncoderConfig& cfg,
                                       bayesformer::MaskPlan plan, std::size_t n) {
  for (auto& layer : plan.layers)
    layer.ffn_hidden = bayesformer::keep_all_mask(bayesformer::MaskKind::Element, n, cfg.d_ffn);
  return plan;
}

}  // namespace oracle
