#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bayesformer/checkpoint.hpp"

namespace bayesformer {

inline constexpr std::size_t kDefaultPasses = 11;
inline constexpr std::size_t kDefaultResamples = 1000;
inline constexpr double kDefaultAlpha = 0.05;

using ProbMatrix = std::vector<std::vector<double>>;  // T x C

struct PredictiveSummary {
  std::vector<double> mean_probs;
  std::vector<double> ci_low;
  std::vector<double> ci_high;
  double entropy = 0.0;  // nats
  double bald = 0.0;     // nats
  std::size_t T = 0;
  ProbMatrix sample_probs;
};

struct McOptions {
  double alpha = kDefaultAlpha;
  std::size_t resamples = kDefaultResamples;
  // Coordinate of the example, so every example of a pool gets its own masks.
  std::uint64_t example = 0;
  std::size_t workers = 1;
};

// T stochastic passes of the checkpoint's variant; pass t draws its masks from
// Stream::derive(seed, example, t, site::kPredict).
PredictiveSummary mc_predict(const Checkpoint& checkpoint, std::span<const int> token_ids,
                             std::size_t T, std::uint64_t seed, const McOptions& options = {});

// Aggregates T probability rows (entropy, BALD, per-class bootstrap intervals).
PredictiveSummary summarize(ProbMatrix sample_probs, std::uint64_t seed,
                            const McOptions& options = {});

std::vector<double> softmax_probs(const Tensor& logits);

// -sum q ln q, with 0 ln 0 = 0.
double predictive_entropy(std::span<const double> probs);
// H(mean row) - mean H(row), clamped at 0 against rounding.
double bald_score(const ProbMatrix& sample_probs);

// Percentile bootstrap of the mean with nearest-rank quantiles.
std::pair<double, double> bootstrap_ci(std::span<const double> samples, double alpha,
                                       std::size_t resamples, std::uint64_t seed);

// {"mean_probs":[..],"ci_low":[..],"ci_high":[..],"entropy":x,"bald":y}
std::string to_json_line(const PredictiveSummary& summary);

}  // namespace bayesformer
