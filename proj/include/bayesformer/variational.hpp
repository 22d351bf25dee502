#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bayesformer/graph.hpp"
#include "bayesformer/model.hpp"
#include "bayesformer/rng.hpp"
#include "bayesformer/tensor.hpp"

namespace bayesformer {

enum class MaskKind : std::uint8_t {
  Feature,    // one bit per feature column, shared by every row (sequence position)
  VocabType,  // one bit per vocabulary row of the token embedding
  Position,   // one bit per row of the position embedding
  Element,    // independent bit per (row, column); ordinary dropout
};

// Bernoulli keep/drop pattern. For Element masks the bits cover rows x cols
// row-major; every other kind is a single row of `cols` bits.
struct Mask {
  MaskKind kind = MaskKind::Feature;
  float p = 0.0f;
  std::size_t rows = 1;
  std::size_t cols = 0;
  std::vector<std::uint8_t> keep;

  std::size_t domain_size() const noexcept { return keep.size(); }
  bool kept(std::size_t i) const { return keep.at(i) != 0; }
  std::size_t dropped_count() const;
  // Multiplier per bit: 0 for dropped, 1 (or 1/(1-p) when scaled) for kept.
  // Throws ContractError for scaled masks with p == 1.
  Tensor factor(bool scaled) const;
};

Mask sample_feature_mask(std::size_t dim, float p, const Stream& stream);
// One bit per vocabulary id in [0, domain_size); bit v depends only on (stream, v)
// so the pattern over present ids does not depend on which other ids occur.
Mask sample_type_mask(std::span<const int> present_ids, std::size_t domain_size, float p,
                      const Stream& stream);
Mask sample_position_mask(std::size_t domain_size, float p, const Stream& stream);
Mask sample_element_mask(std::size_t rows, std::size_t cols, float p, const Stream& stream);
Mask keep_all_mask(MaskKind kind, std::size_t rows, std::size_t cols);
Mask mask_from_rows(MaskKind kind, std::span<const std::uint8_t> keep_rows, float p);

// Feature masks act on the columns of x, shared over rows; Element masks
// elementwise. Scaled kept values are divided by (1 - p).
Tensor apply_mask(const Tensor& x, const Mask& mask, bool scaled);
Var apply_mask(Graph& graph, Var x, const Mask& mask, bool scaled);

struct HeadMasks {
  Mask query;
  Mask key;
  Mask value;
};

struct LayerMasks {
  std::vector<HeadMasks> heads;
  Mask ffn_input;   // feature mask over d_model (the h_mlp site)
  Mask ffn_hidden;  // elementwise dropout after the FFN activation, n x d_ffn
};

// Every Bernoulli event of one stochastic BayesFormer forward pass for one example.
struct MaskPlan {
  Mask input;     // VocabType over vocab_size
  Mask position;  // Position over max_positions
  std::vector<LayerMasks> layers;
  std::uint64_t stream_key = 0;
  bool scaled = true;
};

// Each site draws from its own child stream of `stream`.
MaskPlan sample_mask_plan(const EncoderConfig& config, std::span<const int> token_ids,
                          const Stream& stream);
// Plan whose masks keep everything (p recorded as given).
MaskPlan keep_all_plan(const EncoderConfig& config, std::size_t seq_len);

// One draw from the row mixture p N(0, s^2 I) + (1-p) N(M_row, s^2 I).
struct WeightSample {
  Tensor weights;
  std::vector<std::uint8_t> keep_rows;
};
WeightSample sample_weights_from_q(const Tensor& mean, float p, float sigma_prior,
                                   const Stream& stream);
// Same mixture with the Bernoulli outcomes given.
Tensor weights_from_rows(const Tensor& mean, std::span<const std::uint8_t> keep_rows,
                         float sigma_prior, const Stream& stream);

// lambda * sum of squared Frobenius norms over the variational-mean matrices.
float kl_regularizer(const EncoderParams& params, float lambda);
// (1 - p) / (2 sigma^2 N): the Gaussian-prior KL weight per training example.
float default_lambda(float p_drop, float sigma_prior, std::size_t n_train);

}  // namespace bayesformer
