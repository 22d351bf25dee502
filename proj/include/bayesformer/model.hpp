#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "bayesformer/tensor.hpp"

namespace bayesformer {

enum class Activation { Relu, Gelu };
enum class Variant { BayesFormer, Baseline };

std::string_view to_string(Activation a);
std::string_view to_string(Variant v);
Activation parse_activation(std::string_view s);
Variant parse_variant(std::string_view s);

struct EncoderConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t d_model = 16;
  std::size_t d_ffn = 32;
  std::size_t vocab_size = 8;
  std::size_t max_positions = 16;
  std::size_t n_classes = 2;
  float p_drop = 0.1f;
  Activation ffn_activation = Activation::Relu;
  Variant variant = Variant::BayesFormer;

  std::size_t d_head() const { return d_model / n_heads; }
  std::size_t d_embed() const { return d_model / 2; }
  // Throws ContractError on any violated invariant.
  void validate() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

enum class ParamRole {
  VariationalMean,  // weight matrix with a variational row distribution; L2-regularized
  Norm,             // layer-norm gain or bias
};

// Manifest name of a parameter tensor, materialized only on demand.
struct ParamName {
  const char* leaf;
  int layer = -1;
  int head = -1;
  std::string str() const;
};

// Parameter layout shared by concrete tensors (EncoderParams) and graph
// handles (BoundParams). Weight matrices are the variational means.
template <typename T>
struct HeadWeights {
  T query;  // d_model x d_head
  T key;
  T value;
  friend bool operator==(const HeadWeights&, const HeadWeights&) = default;
};

template <typename T>
struct LayerWeights {
  std::vector<HeadWeights<T>> heads;
  T attn_norm_gain;  // 1 x d_model
  T attn_norm_bias;
  T ffn_in;   // d_model x d_ffn
  T ffn_out;  // d_ffn x d_model
  T out_norm_gain;
  T out_norm_bias;
  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

template <typename T>
struct EncoderWeights {
  T token_embedding;     // vocab_size x d_model/2
  T position_embedding;  // max_positions x d_model/2
  T embed_norm_gain;     // 1 x d_model
  T embed_norm_bias;
  std::vector<LayerWeights<T>> layers;
  T classifier;  // d_model x n_classes
  friend bool operator==(const EncoderWeights&, const EncoderWeights&) = default;
};

// Calls fn(ParamName, member, ParamRole) for every tensor in manifest order.
template <typename W, typename Fn>
void visit_weights(W& w, Fn&& fn) {
  constexpr auto mean = ParamRole::VariationalMean;
  constexpr auto norm = ParamRole::Norm;
  fn(ParamName{"token_embedding"}, w.token_embedding, mean);
  fn(ParamName{"position_embedding"}, w.position_embedding, mean);
  fn(ParamName{"embed_norm.gain"}, w.embed_norm_gain, norm);
  fn(ParamName{"embed_norm.bias"}, w.embed_norm_bias, norm);
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    auto& layer = w.layers[i];
    const int li = static_cast<int>(i);
    for (std::size_t j = 0; j < layer.heads.size(); ++j) {
      const int hj = static_cast<int>(j);
      fn(ParamName{"query", li, hj}, layer.heads[j].query, mean);
      fn(ParamName{"key", li, hj}, layer.heads[j].key, mean);
      fn(ParamName{"value", li, hj}, layer.heads[j].value, mean);
    }
    fn(ParamName{"attn_norm.gain", li}, layer.attn_norm_gain, norm);
    fn(ParamName{"attn_norm.bias", li}, layer.attn_norm_bias, norm);
    fn(ParamName{"ffn_in", li}, layer.ffn_in, mean);
    fn(ParamName{"ffn_out", li}, layer.ffn_out, mean);
    fn(ParamName{"out_norm.gain", li}, layer.out_norm_gain, norm);
    fn(ParamName{"out_norm.bias", li}, layer.out_norm_bias, norm);
  }
  fn(ParamName{"classifier"}, w.classifier, mean);
}

using HeadParams = HeadWeights<Tensor>;
using LayerParams = LayerWeights<Tensor>;

struct EncoderParams : EncoderWeights<Tensor> {
  // Correct shapes, weights zero, layer-norm gains one.
  static EncoderParams zeros(const EncoderConfig& config);
  // Weights ~ N(0, stddev^2), gains 1, biases 0, deterministic in seed.
  static EncoderParams init(const EncoderConfig& config, std::uint64_t seed, float stddev = 0.02f);

  // Visits every tensor in manifest order with its full name.
  void for_each(const std::function<void(const std::string&, Tensor&, ParamRole)>& fn);
  void for_each(const std::function<void(const std::string&, const Tensor&, ParamRole)>& fn) const;

  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  std::vector<std::string> names() const;
  std::size_t parameter_count() const;

  // Throws DimensionError naming the first tensor whose shape disagrees.
  void validate(const EncoderConfig& config) const;

  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

}  // namespace bayesformer
