#include "bayesformer/encoder.hpp"

#include <cmath>
#include <numeric>

#include "bayesformer/error.hpp"

namespace bayesformer {
namespace {

constexpr std::uint64_t kBaselineEmbedSite = 1;
constexpr std::uint64_t kBaselineLayerSite = 2;

Var activation(Graph& g, Var x, Activation act) {
  return act == Activation::Relu ? g.relu(x) : g.gelu(x);
}

void record(ForwardTrace* trace, const std::string& site, const Graph& g, Var before, Var after) {
  if (trace) trace->push_back({site, g.value(before), g.value(after)});
}

// Per-row multipliers for a row-indexed mask (vocabulary type or position).
Tensor row_factor(const Mask& mask, std::span<const int> row_index, bool scaled) {
  const Tensor f = mask.factor(scaled);
  Tensor out({row_index.size(), 1});
  for (std::size_t r = 0; r < row_index.size(); ++r) {
    out[r] = f[static_cast<std::size_t>(row_index[r])];
  }
  return out;
}

Var embedding_rows(Graph& g, Var table, std::span<const int> rows, const Mask* mask, bool scaled,
                   ForwardTrace* trace, const char* site) {
  Var looked_up = g.gather_rows(table, rows);
  if (!mask || (mask->dropped_count() == 0 && (!scaled || mask->p == 0.0f))) {
    if (mask) record(trace, site, g, looked_up, looked_up);
    return looked_up;
  }
  Var masked = g.mul_const(looked_up, row_factor(*mask, rows, scaled));
  record(trace, site, g, looked_up, masked);
  return masked;
}

}  // namespace

BoundParams bind(Graph& graph, const EncoderParams& params, bool requires_grad) {
  BoundParams bound;
  bound.layers.resize(params.layers.size());
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    bound.layers[i].heads.resize(params.layers[i].heads.size());
  }
  std::vector<Var*> slots;
  visit_weights(bound, [&](const ParamName&, Var& v, ParamRole) { slots.push_back(&v); });
  std::size_t k = 0;
  visit_weights(params, [&](const ParamName&, const Tensor& t, ParamRole) {
    *slots[k++] = graph.leaf(t, requires_grad);
  });
  return bound;
}

void accumulate_grads(const Graph& graph, const BoundParams& bound, EncoderParams& grads,
                      float weight) {
  std::vector<const Var*> vars;
  visit_weights(bound, [&](const ParamName&, const Var& v, ParamRole) { vars.push_back(&v); });
  std::size_t k = 0;
  visit_weights(grads, [&](const ParamName&, Tensor& t, ParamRole) {
    const Tensor g = graph.grad(*vars[k++]);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += weight * g[i];
  });
}

void validate_tokens(std::span<const int> token_ids, const EncoderConfig& config) {
  require(!token_ids.empty(), "encoder: empty token sequence");
  require(token_ids.size() <= config.max_positions,
          "encoder: sequence length " + std::to_string(token_ids.size()) + " exceeds max_positions " +
              std::to_string(config.max_positions));
  for (int id : token_ids) {
    require(id >= 0 && static_cast<std::size_t>(id) < config.vocab_size,
            "encoder: token id " + std::to_string(id) + " outside vocabulary of " +
                std::to_string(config.vocab_size));
  }
}

BaselinePlan sample_baseline_plan(const EncoderConfig& config, std::size_t seq_len,
                                  const Stream& stream) {
  const float p = config.p_drop;
  BaselinePlan plan;
  plan.embed = sample_element_mask(seq_len, config.d_model, p, stream.split(kBaselineEmbedSite));
  plan.layers.resize(config.n_layers);
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    const Stream ls = stream.split(kBaselineLayerSite).split(i);
    auto& layer = plan.layers[i];
    for (std::size_t j = 0; j < config.n_heads; ++j) {
      layer.attention.push_back(sample_element_mask(seq_len, seq_len, p, ls.split(j)));
    }
    layer.attn_out = sample_element_mask(seq_len, config.d_model, p, ls.split(1000));
    layer.ffn_hidden = sample_element_mask(seq_len, config.d_ffn, p, ls.split(1001));
    layer.ffn_out = sample_element_mask(seq_len, config.d_model, p, ls.split(1002));
  }
  return plan;
}

Var embed(Graph& graph, const BoundParams& params, const EncoderConfig& config,
          std::span<const int> token_ids, const MaskPlan* plan, ForwardTrace* trace) {
  validate_tokens(token_ids, config);
  std::vector<int> positions(token_ids.size());
  std::iota(positions.begin(), positions.end(), 0);
  const bool scaled = plan ? plan->scaled : false;
  // Masks act on embedding rows, i.e. before the lookup contributes.
  Var tok = embedding_rows(graph, params.token_embedding, token_ids, plan ? &plan->input : nullptr,
                           scaled, trace, "input");
  Var pos = embedding_rows(graph, params.position_embedding, positions,
                           plan ? &plan->position : nullptr, scaled, trace, "position");
  const Var parts[] = {tok, pos};
  return graph.layer_norm(graph.concat_cols(parts), params.embed_norm_gain, params.embed_norm_bias);
}

Var attention_head(Graph& graph, Var x, const BoundHead& head, const HeadMasks* masks,
                   bool scaled, ForwardTrace* trace, const std::string& site) {
  Var xq = x, xk = x, xv = x;
  if (masks) {
    xq = apply_mask(graph, x, masks->query, scaled);
    xk = apply_mask(graph, x, masks->key, scaled);
    xv = apply_mask(graph, x, masks->value, scaled);
    record(trace, site + ".query", graph, x, xq);
    record(trace, site + ".key", graph, x, xk);
    record(trace, site + ".value", graph, x, xv);
  }
  Var q = graph.matmul(xq, head.query);
  Var k = graph.matmul(xk, head.key);
  Var v = graph.matmul(xv, head.value);
  const auto d_head = static_cast<float>(graph.value(head.query).cols());
  Var scores = graph.scale(graph.matmul_bt(q, k), 1.0f / std::sqrt(d_head));
  return graph.matmul(graph.softmax_rows(scores), v);
}

Var encoder_layer(Graph& graph, Var x, const BoundLayer& layer, const EncoderConfig& config,
                  const LayerMasks* masks, bool scaled, ForwardTrace* trace,
                  std::size_t layer_index) {
  const std::string prefix = "layer" + std::to_string(layer_index);
  std::vector<Var> heads;
  heads.reserve(layer.heads.size());
  for (std::size_t j = 0; j < layer.heads.size(); ++j) {
    heads.push_back(attention_head(graph, x, layer.heads[j], masks ? &masks->heads[j] : nullptr,
                                   scaled, trace, prefix + ".head" + std::to_string(j)));
  }
  Var z = graph.concat_cols(heads);
  Var residual = graph.add(graph.layer_norm(z, layer.attn_norm_gain, layer.attn_norm_bias), x);
  Var ffn_input = residual;
  if (masks) {
    ffn_input = apply_mask(graph, residual, masks->ffn_input, scaled);
    record(trace, prefix + ".ffn_input", graph, residual, ffn_input);
  }
  Var hidden = activation(graph, graph.matmul(ffn_input, layer.ffn_in), config.ffn_activation);
  if (masks) hidden = apply_mask(graph, hidden, masks->ffn_hidden, scaled);
  Var ffn = graph.matmul(hidden, layer.ffn_out);
  return graph.layer_norm(graph.add(ffn, residual), layer.out_norm_gain, layer.out_norm_bias);
}

Var forward(Graph& graph, const BoundParams& params, const EncoderConfig& config,
            std::span<const int> token_ids, const MaskPlan* plan, ForwardTrace* trace) {
  const bool scaled = plan ? plan->scaled : false;
  if (plan) {
    require(plan->layers.size() == config.n_layers, "forward: mask plan has wrong layer count");
  }
  Var x = embed(graph, params, config, token_ids, plan, trace);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    x = encoder_layer(graph, x, params.layers[i], config, plan ? &plan->layers[i] : nullptr,
                      scaled, trace, i);
  }
  return graph.matmul(graph.select_row(x, 0), params.classifier);
}

Var baseline_forward(Graph& graph, const BoundParams& params, const EncoderConfig& config,
                     std::span<const int> token_ids, const BaselinePlan* plan) {
  Var x = embed(graph, params, config, token_ids, nullptr);
  if (plan) x = apply_mask(graph, x, plan->embed, true);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const BoundLayer& layer = params.layers[i];
    const BaselineLayerMasks* masks = plan ? &plan->layers[i] : nullptr;
    std::vector<Var> heads;
    for (std::size_t j = 0; j < layer.heads.size(); ++j) {
      const BoundHead& head = layer.heads[j];
      Var q = graph.matmul(x, head.query);
      Var k = graph.matmul(x, head.key);
      Var v = graph.matmul(x, head.value);
      const auto d_head = static_cast<float>(graph.value(head.query).cols());
      Var attn = graph.softmax_rows(graph.scale(graph.matmul_bt(q, k), 1.0f / std::sqrt(d_head)));
      if (masks) attn = apply_mask(graph, attn, masks->attention[j], true);
      heads.push_back(graph.matmul(attn, v));
    }
    Var attn_out = graph.layer_norm(graph.concat_cols(heads), layer.attn_norm_gain,
                                    layer.attn_norm_bias);
    if (masks) attn_out = apply_mask(graph, attn_out, masks->attn_out, true);
    Var residual = graph.add(attn_out, x);
    Var hidden = activation(graph, graph.matmul(residual, layer.ffn_in), config.ffn_activation);
    if (masks) hidden = apply_mask(graph, hidden, masks->ffn_hidden, true);
    Var ffn = graph.matmul(hidden, layer.ffn_out);
    if (masks) ffn = apply_mask(graph, ffn, masks->ffn_out, true);
    x = graph.layer_norm(graph.add(ffn, residual), layer.out_norm_gain, layer.out_norm_bias);
  }
  return graph.matmul(graph.select_row(x, 0), params.classifier);
}

Var stochastic_forward(Graph& graph, const BoundParams& params, const EncoderConfig& config,
                       std::span<const int> token_ids, const Stream& stream) {
  if (config.variant == Variant::BayesFormer) {
    const MaskPlan plan = sample_mask_plan(config, token_ids, stream);
    return forward(graph, params, config, token_ids, &plan);
  }
  validate_tokens(token_ids, config);
  const BaselinePlan plan = sample_baseline_plan(config, token_ids.size(), stream);
  return baseline_forward(graph, params, config, token_ids, &plan);
}

Tensor forward(std::span<const int> token_ids, const EncoderParams& params,
               const EncoderConfig& config, const MaskPlan* plan, ForwardTrace* trace) {
  Graph g;
  const BoundParams bound = bind(g, params, false);
  return g.value(forward(g, bound, config, token_ids, plan, trace));
}

Tensor baseline_forward(std::span<const int> token_ids, const EncoderParams& params,
                        const EncoderConfig& config, const BaselinePlan* plan) {
  Graph g;
  const BoundParams bound = bind(g, params, false);
  return g.value(baseline_forward(g, bound, config, token_ids, plan));
}

Tensor deterministic_logits(std::span<const int> token_ids, const EncoderParams& params,
                            const EncoderConfig& config) {
  return config.variant == Variant::BayesFormer ? forward(token_ids, params, config)
                                                : baseline_forward(token_ids, params, config);
}

Tensor stochastic_logits(std::span<const int> token_ids, const EncoderParams& params,
                         const EncoderConfig& config, const Stream& stream) {
  Graph g;
  const BoundParams bound = bind(g, params, false);
  return g.value(stochastic_forward(g, bound, config, token_ids, stream));
}

}  // namespace bayesformer
