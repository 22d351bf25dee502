#include "bayesformer/model.hpp"

#include <random>

#include "bayesformer/error.hpp"
#include "bayesformer/rng.hpp"

namespace bayesformer {

std::string_view to_string(Activation a) { return a == Activation::Relu ? "relu" : "gelu"; }
std::string_view to_string(Variant v) {
  return v == Variant::BayesFormer ? "bayesformer" : "baseline";
}

Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::Relu;
  if (s == "gelu") return Activation::Gelu;
  throw ContractError("unknown activation '" + std::string(s) + "' (expected relu|gelu)");
}

Variant parse_variant(std::string_view s) {
  if (s == "bayesformer") return Variant::BayesFormer;
  if (s == "baseline") return Variant::Baseline;
  throw ContractError("unknown variant '" + std::string(s) + "' (expected bayesformer|baseline)");
}

void EncoderConfig::validate() const {
  require(n_layers >= 1 && n_heads >= 1 && d_model >= 1 && d_ffn >= 1 && vocab_size >= 1 &&
              max_positions >= 1 && n_classes >= 1,
          "encoder config: all counts must be >= 1");
  require(d_model % 2 == 0, "encoder config: d_model must be even");
  require(d_model % n_heads == 0, "encoder config: d_model must be divisible by n_heads");
  require(p_drop >= 0.0f && p_drop <= 1.0f, "encoder config: p_drop must lie in [0, 1]");
}

std::string ParamName::str() const {
  std::string out;
  if (layer >= 0) out += "layers." + std::to_string(layer) + ".";
  if (head >= 0) out += "heads." + std::to_string(head) + ".";
  return out + leaf;
}

EncoderParams EncoderParams::zeros(const EncoderConfig& c) {
  c.validate();
  const std::size_t d = c.d_model;
  EncoderParams p;
  p.token_embedding = Tensor({c.vocab_size, c.d_embed()});
  p.position_embedding = Tensor({c.max_positions, c.d_embed()});
  p.embed_norm_gain = Tensor({1, d}, 1.0f);
  p.embed_norm_bias = Tensor({1, d});
  p.layers.resize(c.n_layers);
  for (auto& layer : p.layers) {
    layer.heads.resize(c.n_heads);
    for (auto& h : layer.heads) {
      h.query = Tensor({d, c.d_head()});
      h.key = Tensor({d, c.d_head()});
      h.value = Tensor({d, c.d_head()});
    }
    layer.attn_norm_gain = Tensor({1, d}, 1.0f);
    layer.attn_norm_bias = Tensor({1, d});
    layer.ffn_in = Tensor({d, c.d_ffn});
    layer.ffn_out = Tensor({c.d_ffn, d});
    layer.out_norm_gain = Tensor({1, d}, 1.0f);
    layer.out_norm_bias = Tensor({1, d});
  }
  p.classifier = Tensor({d, c.n_classes});
  return p;
}

EncoderParams EncoderParams::init(const EncoderConfig& config, std::uint64_t seed, float stddev) {
  EncoderParams p = zeros(config);
  std::uint64_t index = 0;
  visit_weights(p, [&](const ParamName&, Tensor& t, ParamRole role) {
    Stream stream = Stream::derive(seed, index++, 0, site::kInit);
    if (role != ParamRole::VariationalMean) return;
    std::normal_distribution<float> normal(0.0f, stddev);
    for (float& v : t.values()) v = normal(stream);
  });
  return p;
}

void EncoderParams::for_each(
    const std::function<void(const std::string&, Tensor&, ParamRole)>& fn) {
  visit_weights(*this, [&](const ParamName& n, Tensor& t, ParamRole r) { fn(n.str(), t, r); });
}

void EncoderParams::for_each(
    const std::function<void(const std::string&, const Tensor&, ParamRole)>& fn) const {
  visit_weights(*this,
                [&](const ParamName& n, const Tensor& t, ParamRole r) { fn(n.str(), t, r); });
}

std::vector<Tensor*> EncoderParams::tensors() {
  std::vector<Tensor*> out;
  visit_weights(*this, [&](const ParamName&, Tensor& t, ParamRole) { out.push_back(&t); });
  return out;
}

std::vector<const Tensor*> EncoderParams::tensors() const {
  std::vector<const Tensor*> out;
  visit_weights(*this, [&](const ParamName&, const Tensor& t, ParamRole) { out.push_back(&t); });
  return out;
}

std::vector<std::string> EncoderParams::names() const {
  std::vector<std::string> out;
  visit_weights(*this, [&](const ParamName& n, const Tensor&, ParamRole) { out.push_back(n.str()); });
  return out;
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors()) n += t->size();
  return n;
}

void EncoderParams::validate(const EncoderConfig& config) const {
  const EncoderParams expected = zeros(config);
  auto want = expected.tensors();
  const auto names = expected.names();
  auto have = tensors();
  if (have.size() != want.size()) {
    throw DimensionError("encoder params: expected " + std::to_string(want.size()) +
                         " tensors, found " + std::to_string(have.size()));
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (have[i]->shape() != want[i]->shape()) {
      throw DimensionError("encoder params: " + names[i] + " has shape " +
                           shape_string(have[i]->shape()) + ", config requires " +
                           shape_string(want[i]->shape()));
    }
  }
}

}  // namespace bayesformer
