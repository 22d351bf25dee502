#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "bayesformer/active.hpp"
#include "bayesformer/error.hpp"

using namespace bayesformer;

namespace {

EncoderConfig model(float p = 0.2f) {
  EncoderConfig c;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ffn = 16;
  c.vocab_size = 8;
  c.max_positions = 10;
  c.n_classes = 2;
  c.p_drop = p;
  return c;
}

Dataset pool_data(std::size_t n, std::uint64_t seed) {
  TaskSpec s;
  s.kind = TaskKind::NoisyMajority;
  s.flip_prob = 0.1;
  s.n_examples = n;
  s.seed = seed;
  return generate(s);
}

PoolState with_scores(std::size_t n, const std::vector<double>& scores) {
  PoolState s;
  for (std::size_t i = 0; i < n; ++i) {
    s.unlabeled.push_back(i);
    s.scores[i] = scores[i];
  }
  return s;
}

TrainConfig quick() {
  TrainConfig t;
  t.max_steps = 10;
  t.batch_size = 8;
  t.eval_every = 5;
  return t;
}

}  // namespace

TEST(WarmStart, TenPercentOfHundred) {
  const PoolState s = warm_start(100, 0.1, 3);
  EXPECT_EQ(s.labeled.size(), 10u);
  EXPECT_EQ(s.unlabeled.size(), 90u);
  EXPECT_NO_THROW(s.check());
  ASSERT_EQ(s.history.size(), 1u);
  EXPECT_EQ(s.history[0], s.labeled);
}

TEST(WarmStart, SeededAndPartitioning) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const PoolState a = warm_start(57, 0.3, seed), b = warm_start(57, 0.3, seed);
    EXPECT_EQ(a.labeled, b.labeled);
    std::set<std::size_t> all(a.labeled.begin(), a.labeled.end());
    for (std::size_t i : a.unlabeled) EXPECT_TRUE(all.insert(i).second);
    EXPECT_EQ(all.size(), 57u);
    EXPECT_TRUE(std::is_sorted(a.labeled.begin(), a.labeled.end()));
  }
  EXPECT_NE(warm_start(57, 0.3, 1).labeled, warm_start(57, 0.3, 2).labeled);
}

TEST(WarmStart, EmptySelectionRejected) {
  EXPECT_THROW(warm_start(5, 0.1, 0), ContractError);
  EXPECT_THROW(warm_start(100, 0.0, 0), ContractError);
  EXPECT_THROW(warm_start(100, 1.0, 0), ContractError);
}

TEST(PoolState, CheckCatchesBrokenInvariants) {
  PoolState s = warm_start(20, 0.25, 1);
  s.scores[s.labeled.front()] = 1.0;
  EXPECT_THROW(s.check(), ContractError);
  s = warm_start(20, 0.25, 1);
  s.labeled.insert(std::lower_bound(s.labeled.begin(), s.labeled.end(), s.unlabeled[0]),
                   s.unlabeled[0]);  // now in both sets
  EXPECT_THROW(s.check(), ContractError);
}

TEST(SelectTopK, ZeroIsEmpty) {
  EXPECT_TRUE(select_top_k(with_scores(3, {3, 1, 2}), 0).empty());
}

TEST(SelectTopK, DistinctScores) {
  EXPECT_EQ(select_top_k(with_scores(3, {3, 1, 2}), 2), (std::vector<std::size_t>{0, 2}));
}

TEST(SelectTopK, TiesGoToSmallestIndices) {
  EXPECT_EQ(select_top_k(with_scores(4, {5, 5, 5, 5}), 2), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(select_top_k(with_scores(5, {1, 7, 2, 7, 7}), 3), (std::vector<std::size_t>{1, 3, 4}));
}

TEST(SelectTopK, OversizedKRejected) {
  EXPECT_THROW(select_top_k(with_scores(3, {1, 2, 3}), 4), ContractError);
}

TEST(Acquire, MovesSelectionAndRecordsHistory) {
  PoolState s = warm_start(30, 0.2, 4);
  const std::vector<std::size_t> pick = {s.unlabeled[3], s.unlabeled[0]};
  const PoolState t = acquire(s, pick);
  EXPECT_EQ(t.labeled.size(), 8u);
  EXPECT_NO_THROW(t.check());
  EXPECT_EQ(t.history.back(), pick);
  EXPECT_THROW(acquire(t, pick), ContractError);
}

TEST(Budget, CountsAndClamps) {
  EXPECT_EQ(budget_count(0.1, 2000, 1800), 200u);
  EXPECT_EQ(budget_count(0.0, 2000, 1800), 0u);
  EXPECT_EQ(budget_count(0.95, 2000, 1800), 1800u);
  EXPECT_THROW(budget_count(-0.1, 10, 10), ContractError);
}

TEST(ScorePool, RandomIsReproducibleAndCheckpointFree) {
  const Dataset pool = pool_data(40, 1);
  const PoolState warm = warm_start(40, 0.25, 2);
  const Checkpoint a{model(), EncoderParams::init(model(), 1)};
  const Checkpoint b{model(), EncoderParams::init(model(), 2)};
  const PoolState sa = score_pool(a, pool, warm, Strategy::Random, 11, 5);
  const PoolState sb = score_pool(b, pool, warm, Strategy::Random, 11, 5);
  EXPECT_EQ(sa.scores, sb.scores);
  EXPECT_EQ(sa.scores.size(), warm.unlabeled.size());
  EXPECT_NO_THROW(sa.check());
  EXPECT_NE(score_pool(a, pool, warm, Strategy::Random, 11, 6).scores, sa.scores);
}

TEST(ScorePool, ZeroDropBaldScoresAreZero) {
  const Dataset pool = pool_data(30, 2);
  const Checkpoint ck{model(0.0f), EncoderParams::init(model(0.0f), 3, 0.5f)};
  const PoolState s = score_pool(ck, pool, warm_start(30, 0.2, 1), Strategy::McBald, 11, 4);
  for (const auto& [i, score] : s.scores) EXPECT_EQ(score, 0.0) << i;
}

TEST(ScorePool, BaldScoresUseEveryExample) {
  const Dataset pool = pool_data(30, 2);
  const Checkpoint ck{model(0.3f), EncoderParams::init(model(0.3f), 3, 0.5f)};
  const PoolState warm = warm_start(30, 0.2, 1);
  const PoolState s1 = score_pool(ck, pool, warm, Strategy::McBald, 11, 4, 1);
  const PoolState s4 = score_pool(ck, pool, warm, Strategy::McBald, 11, 4, 4);
  EXPECT_EQ(s1.scores, s4.scores);
  std::size_t positive = 0;
  for (const auto& [i, score] : s1.scores) positive += score > 0.0;
  EXPECT_GT(positive, 0u);
  EXPECT_EQ(s1.scores, score_pool(ck, pool, warm, Strategy::McBald, 11, 4, 1).scores);
}

TEST(SingleRound, ZeroBudgetReducesToWarmModelAndFullBudgetAgrees) {
  const Dataset pool = pool_data(60, 3), valid = pool_data(20, 4), test = pool_data(30, 5);
  const Checkpoint base{model(), EncoderParams::init(model(), 7)};
  ActiveConfig cfg;
  cfg.budgets = {0.0, 1.0};
  cfg.seeds = {11};
  cfg.passes = 3;
  const auto rows = run_single_round(base, pool, valid, test, cfg, quick());
  ASSERT_EQ(rows.size(), 4u);  // strategies x budgets
  // rows: mc_bald@0, mc_bald@1, random@0, random@1
  const auto same = [](const CurveRow& a, const CurveRow& b) {
    return a.accuracy == b.accuracy && a.mcc == b.mcc && a.nll == b.nll;
  };
  EXPECT_TRUE(same(rows[0], rows[2]));
  EXPECT_TRUE(same(rows[1], rows[3]));

  TrainConfig tc = quick();
  tc.seed = 11;
  tc.workers = 1;
  const PoolState warm = warm_start(60, 0.1, 11);
  const Checkpoint warm_model = train(base.config, tc, subset(pool, warm.labeled), valid,
                                      &base.params).best;
  EXPECT_EQ(evaluate(warm_model, test).nll, rows[0].nll);
}

TEST(SingleRound, CurveCsvLayoutAndDeterminism) {
  const Dataset pool = pool_data(50, 6), valid = pool_data(20, 7);
  const Checkpoint base{model(), EncoderParams::init(model(), 8)};
  ActiveConfig cfg;
  cfg.budgets = {0.2};
  cfg.seeds = {1, 2};
  cfg.passes = 3;
  const auto a = run_single_round(base, pool, valid, valid, cfg, quick());
  const auto b = run_single_round(base, pool, valid, valid, cfg, quick());
  EXPECT_EQ(a, b);
  const std::string csv = curve_csv(a);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "strategy,budget_fraction,seed,accuracy,mcc,nll");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_NE(csv.find("\nmc_bald,0.2,1,"), std::string::npos);
  EXPECT_NE(csv.find("\nrandom,0.2,2,"), std::string::npos);
}

TEST(Strategy, Parsing) {
  EXPECT_EQ(parse_strategy("mc_bald"), Strategy::McBald);
  EXPECT_EQ(parse_strategy("random"), Strategy::Random);
  EXPECT_THROW(parse_strategy("entropy"), ContractError);
  EXPECT_EQ(ActiveConfig{}.passes, 11u);
}
