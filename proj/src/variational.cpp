#include "bayesformer/variational.hpp"

#include <algorithm>
#include <random>
#include <string>

#include "bayesformer/error.hpp"

namespace bayesformer {
namespace {

void check_probability(float p) {
  require(p >= 0.0f && p <= 1.0f, "drop probability " + std::to_string(p) + " outside [0, 1]");
}

// drop iff u < p, so p == 0 never drops and p == 1 always drops.
std::uint8_t keep_bit(const Stream& stream, std::uint64_t index, float p) {
  return stream.uniform_at(index) < static_cast<double>(p) ? 0 : 1;
}

Mask sample_bits(MaskKind kind, std::size_t rows, std::size_t cols, float p,
                 const Stream& stream) {
  check_probability(p);
  Mask m;
  m.kind = kind;
  m.p = p;
  m.rows = rows;
  m.cols = cols;
  m.keep.resize(rows * cols);
  for (std::size_t i = 0; i < m.keep.size(); ++i) m.keep[i] = keep_bit(stream, i, p);
  return m;
}

// Site tags inside one plan.
constexpr std::uint64_t kInputSite = 1;
constexpr std::uint64_t kPositionSite = 2;
constexpr std::uint64_t kLayerSite = 3;
constexpr std::uint64_t kQuerySite = 0, kKeySite = 1, kValueSite = 2;
constexpr std::uint64_t kFfnInputSite = 1000;
constexpr std::uint64_t kFfnHiddenSite = 1001;

}  // namespace

std::size_t Mask::dropped_count() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t{0}));
}

Tensor Mask::factor(bool scaled) const {
  if (scaled && p >= 1.0f) {
    throw ContractError("apply_mask: scaled mask with p = 1 divides by zero");
  }
  const float kept_value = scaled ? 1.0f / (1.0f - p) : 1.0f;
  Tensor f({rows, cols});
  for (std::size_t i = 0; i < keep.size(); ++i) f[i] = keep[i] ? kept_value : 0.0f;
  return f;
}

Mask sample_feature_mask(std::size_t dim, float p, const Stream& stream) {
  return sample_bits(MaskKind::Feature, 1, dim, p, stream);
}

Mask sample_type_mask(std::span<const int> present_ids, std::size_t domain_size, float p,
                      const Stream& stream) {
  for (int id : present_ids) {
    require(id >= 0 && static_cast<std::size_t>(id) < domain_size,
            "sample_type_mask: id " + std::to_string(id) + " outside vocabulary of " +
                std::to_string(domain_size));
  }
  return sample_bits(MaskKind::VocabType, 1, domain_size, p, stream);
}

Mask sample_position_mask(std::size_t domain_size, float p, const Stream& stream) {
  return sample_bits(MaskKind::Position, 1, domain_size, p, stream);
}

Mask sample_element_mask(std::size_t rows, std::size_t cols, float p, const Stream& stream) {
  return sample_bits(MaskKind::Element, rows, cols, p, stream);
}

Mask keep_all_mask(MaskKind kind, std::size_t rows, std::size_t cols) {
  Mask m;
  m.kind = kind;
  m.rows = rows;
  m.cols = cols;
  m.keep.assign(rows * cols, 1);
  return m;
}

Mask mask_from_rows(MaskKind kind, std::span<const std::uint8_t> keep_rows, float p) {
  check_probability(p);
  Mask m;
  m.kind = kind;
  m.p = p;
  m.rows = 1;
  m.cols = keep_rows.size();
  m.keep.assign(keep_rows.begin(), keep_rows.end());
  return m;
}

Tensor apply_mask(const Tensor& x, const Mask& mask, bool scaled) {
  Graph g;
  Var out = apply_mask(g, g.constant(x), mask, scaled);
  return g.value(out);
}

Var apply_mask(Graph& graph, Var x, const Mask& mask, bool scaled) {
  const Tensor& v = graph.value(x);
  if (mask.kind == MaskKind::Element) {
    if (mask.rows != v.rows() || mask.cols != v.cols()) {
      throw DimensionError("apply_mask: element mask [" + std::to_string(mask.rows) + "x" +
                           std::to_string(mask.cols) + "] vs tensor " + shape_string(v.shape()));
    }
  } else if (mask.cols != v.cols()) {
    throw DimensionError("apply_mask: mask over " + std::to_string(mask.cols) +
                         " features vs tensor " + shape_string(v.shape()));
  }
  if (mask.dropped_count() == 0 && (!scaled || mask.p == 0.0f)) return x;
  return graph.mul_const(x, mask.factor(scaled));
}

MaskPlan sample_mask_plan(const EncoderConfig& config, std::span<const int> token_ids,
                          const Stream& stream) {
  config.validate();
  const float p = config.p_drop;
  MaskPlan plan;
  plan.stream_key = stream.key();
  plan.input = sample_type_mask(token_ids, config.vocab_size, p, stream.split(kInputSite));
  plan.position = sample_position_mask(config.max_positions, p, stream.split(kPositionSite));
  plan.layers.resize(config.n_layers);
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    const Stream layer_stream = stream.split(kLayerSite).split(i);
    LayerMasks& layer = plan.layers[i];
    layer.heads.resize(config.n_heads);
    for (std::size_t j = 0; j < config.n_heads; ++j) {
      const Stream head_stream = layer_stream.split(j);
      layer.heads[j].query = sample_feature_mask(config.d_model, p, head_stream.split(kQuerySite));
      layer.heads[j].key = sample_feature_mask(config.d_model, p, head_stream.split(kKeySite));
      layer.heads[j].value = sample_feature_mask(config.d_model, p, head_stream.split(kValueSite));
    }
    layer.ffn_input = sample_feature_mask(config.d_model, p, layer_stream.split(kFfnInputSite));
    layer.ffn_hidden = sample_element_mask(token_ids.size(), config.d_ffn, p,
                                           layer_stream.split(kFfnHiddenSite));
  }
  return plan;
}

MaskPlan keep_all_plan(const EncoderConfig& config, std::size_t seq_len) {
  MaskPlan plan;
  plan.input = keep_all_mask(MaskKind::VocabType, 1, config.vocab_size);
  plan.position = keep_all_mask(MaskKind::Position, 1, config.max_positions);
  plan.layers.resize(config.n_layers);
  for (auto& layer : plan.layers) {
    layer.heads.resize(config.n_heads);
    for (auto& h : layer.heads) {
      h.query = keep_all_mask(MaskKind::Feature, 1, config.d_model);
      h.key = h.query;
      h.value = h.query;
    }
    layer.ffn_input = keep_all_mask(MaskKind::Feature, 1, config.d_model);
    layer.ffn_hidden = keep_all_mask(MaskKind::Element, seq_len, config.d_ffn);
  }
  return plan;
}

WeightSample sample_weights_from_q(const Tensor& mean, float p, float sigma_prior,
                                   const Stream& stream) {
  check_probability(p);
  WeightSample s;
  s.keep_rows.resize(mean.rows());
  const Stream bernoulli = stream.split(0);
  for (std::size_t r = 0; r < mean.rows(); ++r) s.keep_rows[r] = keep_bit(bernoulli, r, p);
  s.weights = weights_from_rows(mean, s.keep_rows, sigma_prior, stream.split(1));
  return s;
}

Tensor weights_from_rows(const Tensor& mean, std::span<const std::uint8_t> keep_rows,
                         float sigma_prior, const Stream& stream) {
  require(sigma_prior >= 0.0f, "sample_weights_from_q: sigma_prior must be >= 0");
  if (keep_rows.size() != mean.rows()) {
    throw DimensionError("weights_from_rows: " + std::to_string(keep_rows.size()) +
                         " row outcomes for " + shape_string(mean.shape()));
  }
  Tensor w(mean.shape());
  Stream noise = stream;
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (std::size_t r = 0; r < mean.rows(); ++r) {
    for (std::size_t c = 0; c < mean.cols(); ++c) {
      const float centre = keep_rows[r] ? mean(r, c) : 0.0f;
      w(r, c) = sigma_prior > 0.0f ? centre + sigma_prior * normal(noise) : centre;
    }
  }
  return w;
}

float kl_regularizer(const EncoderParams& params, float lambda) {
  require(lambda >= 0.0f, "kl_regularizer: lambda must be >= 0");
  double total = 0.0;
  params.for_each([&](const std::string&, const Tensor& t, ParamRole role) {
    if (role != ParamRole::VariationalMean) return;
    for (float v : t.values()) total += static_cast<double>(v) * v;
  });
  return static_cast<float>(static_cast<double>(lambda) * total);
}

float default_lambda(float p_drop, float sigma_prior, std::size_t n_train) {
  require(n_train > 0, "default_lambda: empty training set");
  require(sigma_prior > 0.0f, "default_lambda: sigma_prior must be > 0");
  return (1.0f - p_drop) / (2.0f * sigma_prior * sigma_prior * static_cast<float>(n_train));
}

}  // namespace bayesformer
