#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "bayesformer/encoder.hpp"
#include "bayesformer/error.hpp"
#include "oracles.hpp"
#include "reference.hpp"

using namespace bayesformer;

namespace {

EncoderConfig config(std::size_t layers, std::size_t heads, std::size_t d, float p = 0.1f) {
  EncoderConfig c;
  c.n_layers = layers;
  c.n_heads = heads;
  c.d_model = d;
  c.d_ffn = 2 * d;
  c.vocab_size = 6;
  c.max_positions = 8;
  c.n_classes = 3;
  c.p_drop = p;
  return c;
}

std::vector<int> random_ids(std::mt19937& rng, std::size_t n, std::size_t vocab) {
  std::uniform_int_distribution<int> u(1, static_cast<int>(vocab) - 1);
  std::vector<int> ids(n, 0);
  for (std::size_t i = 1; i < n; ++i) ids[i] = u(rng);
  return ids;
}

const MaskSiteRecord& find_site(const ForwardTrace& trace, const std::string& name) {
  for (const auto& r : trace)
    if (r.site == name) return r;
  throw std::runtime_error("no trace record for " + name);
}

double rel_error(const Tensor& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), 1e-3));
  return worst;
}

// Single head on an n x d input, built directly from tensors.
Tensor run_head(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                const HeadMasks* masks, bool scaled) {
  Graph g;
  BoundHead head{g.leaf(wq), g.leaf(wk), g.leaf(wv)};
  return g.value(attention_head(g, g.leaf(x), head, masks, scaled));
}

}  // namespace

TEST(Embed, SingleTokenHandComputedAtWidthTwo) {
  EncoderConfig c = config(1, 1, 2);
  EncoderParams p = EncoderParams::init(c, 1, 1.0f);
  p.embed_norm_gain = Tensor::row({1.5f, 0.5f});
  p.embed_norm_bias = Tensor::row({0.1f, -0.2f});
  const std::vector<int> ids = {3};
  Graph g;
  const BoundParams b = bind(g, p, false);
  const Tensor out = g.value(embed(g, b, c, ids, nullptr));
  const double a = p.token_embedding(3, 0), q = p.position_embedding(0, 0);
  const double mean = (a + q) / 2, sd = std::sqrt((a - mean) * (a - mean) + 1e-5);
  EXPECT_NEAR(out(0, 0), 1.5 * (a - mean) / sd + 0.1, 1e-5);
  EXPECT_NEAR(out(0, 1), 0.5 * (q - mean) / sd - 0.2, 1e-5);
}

TEST(Embed, DroppedTypeZeroedAtEveryOccurrence) {
  const EncoderConfig c = config(1, 1, 4, 0.5f);
  const EncoderParams p = EncoderParams::init(c, 2, 1.0f);
  const std::vector<int> ids = {0, 2, 3, 2};  // "a b a" with a = 2 after BOS
  MaskPlan plan = keep_all_plan(c, ids.size());
  plan.input = mask_from_rows(MaskKind::VocabType, std::vector<std::uint8_t>{1, 1, 0, 1, 1, 1}, 0.5f);
  ForwardTrace trace;
  forward(ids, p, c, &plan, &trace);
  const auto& rec = find_site(trace, "input");
  for (std::size_t col = 0; col < c.d_embed(); ++col) {
    EXPECT_EQ(rec.after(1, col), 0.0f);
    EXPECT_EQ(rec.after(3, col), 0.0f);
    EXPECT_FLOAT_EQ(rec.after(2, col), 2.0f * rec.before(2, col));
    EXPECT_FLOAT_EQ(rec.after(0, col), 2.0f * rec.before(0, col));
  }
}

TEST(Embed, ZeroProbabilityPlanEqualsNoPlan) {
  const EncoderConfig c = config(2, 2, 4, 0.0f);
  const EncoderParams p = EncoderParams::init(c, 3, 0.5f);
  const std::vector<int> ids = {0, 1, 4, 4, 2};
  const MaskPlan plan = sample_mask_plan(c, ids, Stream(8));
  EXPECT_EQ(forward(ids, p, c, &plan), forward(ids, p, c, nullptr));
}

TEST(Embed, InvalidTokensRejected) {
  const EncoderConfig c = config(1, 1, 2);
  const EncoderParams p = EncoderParams::init(c, 1);
  EXPECT_THROW(deterministic_logits(std::vector<int>{0, 6}, p, c), ContractError);
  EXPECT_THROW(deterministic_logits(std::vector<int>(9, 0), p, c), ContractError);
  EXPECT_THROW(deterministic_logits(std::vector<int>{}, p, c), ContractError);
}

TEST(AttentionHead, SingletonSequenceReturnsValuePath) {
  std::mt19937 rng(1);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Tensor x({1, 4}), wq({4, 2}), wk({4, 2}), wv({4, 2});
  for (Tensor* t : {&x, &wq, &wk, &wv})
    for (float& v : t->values()) v = n(rng);
  HeadMasks m{sample_feature_mask(4, 0.5f, Stream(1)), sample_feature_mask(4, 0.5f, Stream(2)),
              sample_feature_mask(4, 0.5f, Stream(3))};
  const Tensor out = run_head(x, wq, wk, wv, &m, true);
  const Tensor expected = matmul(apply_mask(x, m.value, true), wv);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(out[i], expected[i], 1e-6);
}

TEST(AttentionHead, QueryDroppingAllFeaturesGivesUniformWeights) {
  std::mt19937 rng(2);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Tensor x({3, 4}), wq({4, 2}), wk({4, 2}), wv({4, 2});
  for (Tensor* t : {&x, &wq, &wk, &wv})
    for (float& v : t->values()) v = n(rng);
  HeadMasks m{sample_feature_mask(4, 1.0f, Stream(1)), keep_all_mask(MaskKind::Feature, 1, 4),
              keep_all_mask(MaskKind::Feature, 1, 4)};
  const Tensor out = run_head(x, wq, wk, wv, &m, false);
  const Tensor v = matmul(x, wv);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 2; ++c)
      EXPECT_NEAR(out(r, c), (v(0, c) + v(1, c) + v(2, c)) / 3.0f, 1e-6);
}

TEST(AttentionHead, HandComputedScalarCase) {
  // n = 2, d = 1, one head: scores s_ab = (x_a q)(x_b k).
  const float x1 = 0.5f, x2 = -1.2f, q = 0.8f, k = 1.5f, v = -0.7f;
  const Tensor out = run_head(Tensor::matrix({{x1}, {x2}}), Tensor::scalar(q), Tensor::scalar(k),
                              Tensor::scalar(v), nullptr, false);
  const double xs[2] = {x1, x2};
  for (int a = 0; a < 2; ++a) {
    const double s1 = xs[a] * q * x1 * k, s2 = xs[a] * q * x2 * k;
    const double w1 = std::exp(s1) / (std::exp(s1) + std::exp(s2));
    EXPECT_NEAR(out(a, 0), w1 * x1 * v + (1 - w1) * x2 * v, 1e-6);
  }
}

TEST(EncoderLayer, MatchesScalarReferenceAtWidthTwo) {
  EncoderConfig c = config(1, 1, 2, 0.3f);
  c.d_ffn = 3;
  const EncoderParams p = EncoderParams::init(c, 4, 0.8f);
  const std::vector<int> ids = {0, 5};
  const auto ref = reference::Params::from(p);
  EXPECT_LT(rel_error(forward(ids, p, c), reference::forward(ids, ref, c, nullptr)), 1e-5);
  // At width two LN(z) and x are both +-1-like, so some plans nearly cancel
  // in the residual (|u| ~ 4e-3) and the next layer norm amplifies float
  // rounding by a few hundred; the tolerance reflects that, not a mismatch.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MaskPlan plan = sample_mask_plan(c, ids, Stream(seed));
    EXPECT_LT(rel_error(forward(ids, p, c, &plan), reference::forward(ids, ref, c, &plan)), 5e-4);
  }
}

TEST(EncoderLayer, FfnMaskDroppingAllFeaturesZeroesFfnInput) {
  const EncoderConfig c = config(1, 2, 4, 0.5f);
  const EncoderParams p = EncoderParams::init(c, 5, 0.5f);
  const std::vector<int> ids = {0, 1, 2};
  MaskPlan plan = keep_all_plan(c, ids.size());
  plan.layers[0].ffn_input = sample_feature_mask(4, 1.0f, Stream(1));
  plan.scaled = false;
  ForwardTrace trace;
  forward(ids, p, c, &plan, &trace);
  for (float v : find_site(trace, "layer0.ffn_input").after.values()) EXPECT_EQ(v, 0.0f);
}

TEST(EncoderLayer, ZeroProbabilityMatchesBaselineLayer) {
  const EncoderConfig c = config(1, 2, 4, 0.0f);
  const EncoderParams p = EncoderParams::init(c, 6, 0.5f);
  const std::vector<int> ids = {0, 1, 3, 2};
  const MaskPlan plan = sample_mask_plan(c, ids, Stream(3));
  const BaselinePlan bplan = sample_baseline_plan(c, ids.size(), Stream(3));
  EXPECT_EQ(forward(ids, p, c, &plan), baseline_forward(ids, p, c, &bplan));
}

TEST(Forward, MatchesReferenceOnRandomPlans) {
  std::mt19937 rng(7);
  for (auto act : {Activation::Relu, Activation::Gelu}) {
    EncoderConfig c = config(2, 2, 8, 0.2f);
    c.ffn_activation = act;
    const EncoderParams p = EncoderParams::init(c, 8, 0.5f);
    const auto ref = reference::Params::from(p);
    for (int trial = 0; trial < 10; ++trial) {
      const auto ids = random_ids(rng, 6, c.vocab_size);
      const MaskPlan plan = sample_mask_plan(c, ids, Stream(trial));
      // float pipeline against doubles, two layer norms deep
      EXPECT_LT(rel_error(forward(ids, p, c, &plan), reference::forward(ids, ref, c, &plan)), 1e-4);
      EXPECT_LT(rel_error(forward(ids, p, c), reference::forward(ids, ref, c, nullptr)), 1e-4);
    }
  }
}

TEST(Forward, PureInInputsAndPlan) {
  const EncoderConfig c = config(2, 2, 8, 0.2f);
  const EncoderParams p = EncoderParams::init(c, 9);
  const std::vector<int> ids = {0, 1, 2, 3, 4};
  EXPECT_EQ(forward(ids, p, c), forward(ids, p, c));
  const MaskPlan plan = sample_mask_plan(c, ids, Stream(99));
  EXPECT_EQ(forward(ids, p, c, &plan), forward(ids, p, c, &plan));
  EXPECT_EQ(stochastic_logits(ids, p, c, Stream(5)), stochastic_logits(ids, p, c, Stream(5)));
}

TEST(Forward, UnscaledMasksEqualExplicitWeightDraws) {
  for (std::size_t layers : {1u, 2u}) {
    for (std::size_t heads : {1u, 2u}) {
      for (std::size_t d : {2u, 4u}) {
        if (d % heads) continue;
        EncoderConfig c = config(layers, heads, d, 0.3f);
        std::mt19937 rng(static_cast<unsigned>(layers * 100 + heads * 10 + d));
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
          const EncoderParams p = EncoderParams::init(c, seed, 0.7f);
          const auto ids = random_ids(rng, 5, c.vocab_size);
          MaskPlan plan = sample_mask_plan(c, ids, Stream::derive(seed, 0, 0, site::kMaskPlan));
          plan.scaled = false;
          const EncoderParams w = oracle::explicit_weights(p, plan);
          // Row masks only: the explicit route is fully deterministic.
          const MaskPlan rows = oracle::rows_only(c, plan, ids.size());
          EXPECT_LT(max_relative_error(forward(ids, p, c, &rows), forward(ids, w, c), 1e-6), 1e-5);
          // With the elementwise FFN dropout shared by both routes.
          const MaskPlan elem = oracle::element_only(c, plan, ids.size());
          EXPECT_LT(max_relative_error(forward(ids, p, c, &plan), forward(ids, w, c, &elem), 1e-6), 1e-5);
        }
      }
    }
  }
}

TEST(Forward, MasksTiedAcrossPositions) {
  const EncoderConfig c = config(2, 2, 8, 0.4f);
  const EncoderParams p = EncoderParams::init(c, 10, 0.5f);
  const std::vector<int> ids = {0, 1, 2, 3, 4, 5};
  const MaskPlan plan = sample_mask_plan(c, ids, Stream(12));
  ForwardTrace trace;
  forward(ids, p, c, &plan, &trace);
  std::size_t checked = 0;
  for (const auto& rec : trace) {
    if (rec.site == "input" || rec.site == "position") continue;
    for (std::size_t col = 0; col < rec.before.cols(); ++col) {
      // One multiplier per column, shared by every row (position).
      const bool dropped = rec.after(0, col) == 0.0f && rec.before(0, col) != 0.0f;
      for (std::size_t r = 0; r < rec.before.rows(); ++r) {
        if (dropped) {
          EXPECT_EQ(rec.after(r, col), 0.0f) << rec.site;
        } else {
          EXPECT_FLOAT_EQ(rec.after(r, col), rec.before(r, col) / (1.0f - c.p_drop)) << rec.site;
        }
      }
      ++checked;
    }
  }
  EXPECT_GT(checked, 0u);
}

TEST(Forward, LogitsFiniteOnConstantInputs) {
  for (float p : {0.0f, 0.5f, 0.99f}) {
    const EncoderConfig c = config(2, 2, 8, p);
    const EncoderParams params = EncoderParams::init(c, 11);
    for (int tok : {0, 1}) {
      const std::vector<int> ids(6, tok);
      EXPECT_TRUE(deterministic_logits(ids, params, c).all_finite());
      for (std::uint64_t s = 0; s < 20; ++s) {
        EXPECT_TRUE(stochastic_logits(ids, params, c, Stream(s)).all_finite());
        EncoderConfig base = c;
        base.variant = Variant::Baseline;
        EXPECT_TRUE(stochastic_logits(ids, params, base, Stream(s)).all_finite());
      }
    }
  }
}

TEST(Forward, PlanWithWrongLayerCountRejected) {
  const EncoderConfig c = config(2, 1, 4);
  const EncoderParams p = EncoderParams::init(c, 1);
  const std::vector<int> ids = {0, 1};
  MaskPlan plan = sample_mask_plan(c, ids, Stream(1));
  plan.layers.pop_back();
  EXPECT_THROW(forward(ids, p, c, &plan), ContractError);
}

TEST(Baseline, ZeroProbabilityEqualsBayesFormerDeterministic) {
  const EncoderConfig c = config(2, 2, 8, 0.0f);
  const EncoderParams p = EncoderParams::init(c, 12, 0.5f);
  const std::vector<int> ids = {0, 2, 2, 5};
  const BaselinePlan plan = sample_baseline_plan(c, ids.size(), Stream(1));
  EXPECT_EQ(baseline_forward(ids, p, c, &plan), forward(ids, p, c));
  EXPECT_EQ(baseline_forward(ids, p, c), forward(ids, p, c));
}

TEST(Baseline, EvalModeIgnoresSeed) {
  EncoderConfig c = config(2, 2, 8, 0.3f);
  c.variant = Variant::Baseline;
  const EncoderParams p = EncoderParams::init(c, 13);
  const std::vector<int> ids = {0, 1, 2};
  EXPECT_EQ(deterministic_logits(ids, p, c), baseline_forward(ids, p, c));
  EXPECT_NE(stochastic_logits(ids, p, c, Stream(1)), stochastic_logits(ids, p, c, Stream(2)));
}

TEST(Baseline, PlanHasStandardDropoutSites) {
  const EncoderConfig c = config(2, 2, 8, 0.3f);
  const BaselinePlan plan = sample_baseline_plan(c, 5, Stream(1));
  EXPECT_EQ(plan.embed.kind, MaskKind::Element);
  EXPECT_EQ(plan.embed.rows, 5u);
  EXPECT_EQ(plan.embed.cols, c.d_model);
  ASSERT_EQ(plan.layers.size(), 2u);
  for (const auto& l : plan.layers) {
    ASSERT_EQ(l.attention.size(), c.n_heads);
    EXPECT_EQ(l.attention[0].rows, 5u);
    EXPECT_EQ(l.attention[0].cols, 5u);
    EXPECT_EQ(l.attn_out.cols, c.d_model);
    EXPECT_EQ(l.ffn_hidden.cols, c.d_ffn);
    EXPECT_EQ(l.ffn_out.cols, c.d_model);
  }
}

TEST(Baseline, MonteCarloMeanOfLinearSiteIsDeterministic) {
  // The embedding-output dropout is the baseline's first (linear) site: its
  // average over many draws recovers the deterministic embedding.
  const EncoderConfig c = config(1, 1, 2, 0.2f);
  const EncoderParams p = EncoderParams::init(c, 14, 1.0f);
  const std::vector<int> ids = {0, 3, 1};
  Graph g;
  const BoundParams b = bind(g, p, false);
  const Tensor x = g.value(embed(g, b, c, ids, nullptr));
  const int draws = 20000;
  std::vector<double> mean(x.size(), 0.0);
  for (int i = 0; i < draws; ++i) {
    const BaselinePlan plan = sample_baseline_plan(c, ids.size(), Stream::derive(1, i, 0, site::kBaselinePlan));
    const Tensor y = apply_mask(x, plan.embed, true);
    for (std::size_t k = 0; k < x.size(); ++k) mean[k] += y[k];
  }
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double se = std::abs(x[k]) * std::sqrt(0.2 / 0.8 / draws);
    EXPECT_NEAR(mean[k] / draws, x[k], 4.0 * se + 1e-7);
  }
}

TEST(Params, BindAndAccumulateFollowManifestOrder) {
  const EncoderConfig c = config(2, 2, 4);
  const EncoderParams p = EncoderParams::init(c, 15);
  EncoderParams grads = EncoderParams::zeros(c);
  for (Tensor* t : grads.tensors()) t->fill(0.0f);
  Graph g;
  const BoundParams b = bind(g, p, true);
  const std::vector<int> ids = {0, 1, 2};
  Var logits = forward(g, b, c, ids, nullptr);
  g.backward(g.cross_entropy(logits, 1));
  accumulate_grads(g, b, grads, 2.0f);
  const Tensor expected = g.grad(b.classifier);
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_FLOAT_EQ(grads.classifier[i], 2.0f * expected[i]);
  EXPECT_EQ(p.names().front(), "token_embedding");
  EXPECT_EQ(p.names()[4], "layers.0.heads.0.query");
  EXPECT_EQ(p.names().back(), "classifier");
}
