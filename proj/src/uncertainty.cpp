#include "bayesformer/uncertainty.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "bayesformer/encoder.hpp"
#include "bayesformer/error.hpp"
#include "bayesformer/parallel.hpp"
#include "bayesformer/rng.hpp"

namespace bayesformer {

std::vector<double> softmax_probs(const Tensor& logits) {
  double mx = -INFINITY;
  for (float v : logits.values()) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < out.size(); ++c) {
    out[c] = std::exp(static_cast<double>(logits[c]) - mx);
    sum += out[c];
  }
  for (double& v : out) v /= sum;
  return out;
}

double predictive_entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double q : probs)
    if (q > 0.0) h -= q * std::log(q);
  return std::max(0.0, h);
}

namespace {

// Averages offsets from the first value, so identical inputs reproduce that
// value exactly (a plain sum / T can be off by an ulp).
template <typename Get>
double shifted_mean(std::size_t n, Get&& get) {
  const double first = get(0);
  double offset = 0.0;
  for (std::size_t i = 1; i < n; ++i) offset += get(i) - first;
  return first + offset / static_cast<double>(n);
}

std::vector<double> row_mean(const ProbMatrix& rows) {
  std::vector<double> mean(rows.front().size());
  for (std::size_t c = 0; c < mean.size(); ++c)
    mean[c] = shifted_mean(rows.size(), [&](std::size_t t) { return rows[t][c]; });
  return mean;
}

}  // namespace

double bald_score(const ProbMatrix& sample_probs) {
  require(!sample_probs.empty(), "bald_score: need at least one row");
  const std::size_t c = sample_probs.front().size();
  std::vector<double> h(sample_probs.size());
  for (std::size_t t = 0; t < h.size(); ++t) {
    require(sample_probs[t].size() == c, "bald_score: ragged probability rows");
    h[t] = predictive_entropy(sample_probs[t]);
  }
  const double mean_h = shifted_mean(h.size(), [&](std::size_t t) { return h[t]; });
  return std::max(0.0, predictive_entropy(row_mean(sample_probs)) - mean_h);
}

std::pair<double, double> bootstrap_ci(std::span<const double> samples, double alpha,
                                       std::size_t resamples, std::uint64_t seed) {
  require(!samples.empty(), "bootstrap_ci: need at least one sample");
  require(alpha > 0.0 && alpha < 1.0, "bootstrap_ci: alpha must lie in (0, 1)");
  require(resamples >= 1, "bootstrap_ci: need at least one resample");
  const std::size_t t = samples.size();
  Stream stream = Stream::derive(seed, 0, 0, site::kBootstrap);
  const auto [lo_s, hi_s] = std::minmax_element(samples.begin(), samples.end());
  std::vector<double> means(resamples);
  std::vector<std::size_t> draw(t);
  for (double& m : means) {
    for (auto& d : draw) d = stream.below(t);
    m = std::clamp(shifted_mean(t, [&](std::size_t i) { return samples[draw[i]]; }), *lo_s, *hi_s);
  }
  std::sort(means.begin(), means.end());
  auto rank = [&](double q) {
    const auto r = static_cast<std::size_t>(std::ceil(q * static_cast<double>(resamples)));
    return means[std::clamp<std::size_t>(r, 1, resamples) - 1];
  };
  return {rank(alpha / 2.0), rank(1.0 - alpha / 2.0)};
}

PredictiveSummary summarize(ProbMatrix sample_probs, std::uint64_t seed,
                            const McOptions& options) {
  require(!sample_probs.empty(), "summarize: need at least one pass");
  PredictiveSummary s;
  s.T = sample_probs.size();
  s.mean_probs = row_mean(sample_probs);
  s.entropy = predictive_entropy(s.mean_probs);
  s.bald = std::min(bald_score(sample_probs), s.entropy);
  const std::size_t c = s.mean_probs.size();
  s.ci_low.resize(c);
  s.ci_high.resize(c);
  std::vector<double> column(s.T);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t t = 0; t < s.T; ++t) column[t] = sample_probs[t][k];
    const std::uint64_t key = Stream::derive(seed, options.example, k, site::kBootstrap).key();
    auto [lo, hi] = bootstrap_ci(column, options.alpha, options.resamples, key);
    // A percentile interval can in principle miss the sample mean under heavy skew.
    s.ci_low[k] = std::min(lo, s.mean_probs[k]);
    s.ci_high[k] = std::max(hi, s.mean_probs[k]);
  }
  s.sample_probs = std::move(sample_probs);
  return s;
}

PredictiveSummary mc_predict(const Checkpoint& checkpoint, std::span<const int> token_ids,
                             std::size_t T, std::uint64_t seed, const McOptions& options) {
  require(T >= 1, "mc_predict: T must be >= 1");
  require(checkpoint.config.p_drop < 1.0f, "mc_predict: p_drop must lie in [0, 1)");
  validate_tokens(token_ids, checkpoint.config);
  ProbMatrix rows(T);
  parallel_for(
      T,
      [&](std::size_t t) {
        const Stream stream = Stream::derive(seed, options.example, t, site::kPredict);
        rows[t] = softmax_probs(
            stochastic_logits(token_ids, checkpoint.params, checkpoint.config, stream));
      },
      options.workers == 0 ? default_workers() : options.workers);
  return summarize(std::move(rows), seed, options);
}

std::string to_json_line(const PredictiveSummary& s) {
  nlohmann::json j;
  j["mean_probs"] = s.mean_probs;
  j["ci_low"] = s.ci_low;
  j["ci_high"] = s.ci_high;
  j["entropy"] = s.entropy;
  j["bald"] = s.bald;
  return j.dump();
}

}  // namespace bayesformer
