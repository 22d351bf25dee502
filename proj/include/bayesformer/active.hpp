#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bayesformer/checkpoint.hpp"
#include "bayesformer/datasets.hpp"
#include "bayesformer/training.hpp"
#include "bayesformer/uncertainty.hpp"

namespace bayesformer {

enum class Strategy { McBald, Random };
Strategy parse_strategy(std::string_view name);
std::string_view to_string(Strategy s);

struct PoolState {
  std::vector<std::size_t> labeled;    // ascending
  std::vector<std::size_t> unlabeled;  // ascending
  std::map<std::size_t, double> scores;
  std::vector<std::vector<std::size_t>> history;

  std::size_t pool_size() const { return labeled.size() + unlabeled.size(); }
  // Throws ContractError if the partition or score keys are inconsistent.
  void check() const;
};

PoolState warm_start(std::size_t pool_size, double fraction, std::uint64_t seed);

// Scores every unlabeled example once. mc_bald uses mc_predict with T passes,
// example coordinate = pool index; random draws i.i.d. uniforms from seed.
PoolState score_pool(const Checkpoint& checkpoint, const Dataset& pool, PoolState state,
                     Strategy strategy, std::size_t T, std::uint64_t seed,
                     std::size_t workers = 1);

// Highest scores first, ties broken by ascending index.
std::vector<std::size_t> select_top_k(const PoolState& state, std::size_t k);

// Moves `selected` from unlabeled to labeled and records it in history.
PoolState acquire(PoolState state, std::span<const std::size_t> selected);

Dataset subset(const Dataset& data, std::span<const std::size_t> indices);

inline const std::vector<double> kDefaultBudgets = {0.05, 0.10, 0.20, 0.40, 0.80};

struct ActiveConfig {
  std::vector<double> budgets = kDefaultBudgets;  // fractions of the pool
  std::vector<Strategy> strategies = {Strategy::McBald, Strategy::Random};
  std::vector<std::uint64_t> seeds = {0};
  double warm_fraction = 0.1;
  std::size_t passes = kDefaultPasses;
  std::size_t workers = 1;
};

struct CurveRow {
  Strategy strategy = Strategy::Random;
  double budget_fraction = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double mcc = 0.0;
  double nll = 0.0;
  friend bool operator==(const CurveRow&, const CurveRow&) = default;
};

// Number of acquired examples for a budget fraction, clamped to what is left.
std::size_t budget_count(double fraction, std::size_t pool_size, std::size_t unlabeled);

// Per seed: warm start, finetune base on the warm set, then per strategy score
// once and, per budget, finetune base afresh on warm + top-k and evaluate.
// `valid` selects the best checkpoint of each finetune; `eval_data` is reported.
std::vector<CurveRow> run_single_round(const Checkpoint& base, const Dataset& pool,
                                       const Dataset& valid, const Dataset& eval_data,
                                       const ActiveConfig& config, const TrainConfig& train_config);

// Header "strategy,budget_fraction,seed,accuracy,mcc,nll".
std::string curve_csv(std::span<const CurveRow> rows);
void write_curve_csv(std::span<const CurveRow> rows, const std::filesystem::path& path);

}  // namespace bayesformer
