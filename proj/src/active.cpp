#include "bayesformer/active.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "bayesformer/error.hpp"
#include "bayesformer/parallel.hpp"
#include "bayesformer/rng.hpp"

namespace bayesformer {

Strategy parse_strategy(std::string_view name) {
  if (name == "mc_bald") return Strategy::McBald;
  if (name == "random") return Strategy::Random;
  throw ContractError("unknown strategy '" + std::string(name) + "' (expected mc_bald|random)");
}

std::string_view to_string(Strategy s) { return s == Strategy::McBald ? "mc_bald" : "random"; }

void PoolState::check() const {
  std::vector<std::size_t> all(labeled);
  all.insert(all.end(), unlabeled.begin(), unlabeled.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i)
    require(all[i] == i, "pool state: labeled/unlabeled do not partition the pool");
  for (const auto& [idx, score] : scores) {
    require(std::binary_search(unlabeled.begin(), unlabeled.end(), idx),
            "pool state: score for labeled index " + std::to_string(idx));
  }
}

PoolState warm_start(std::size_t pool_size, double fraction, std::uint64_t seed) {
  require(fraction > 0.0 && fraction < 1.0, "warm_start: fraction must lie in (0, 1)");
  const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(pool_size)));
  require(n > 0, "warm_start: fraction " + std::to_string(fraction) + " of " +
                     std::to_string(pool_size) + " examples selects nothing");
  std::vector<std::size_t> order(pool_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Stream stream = Stream::derive(seed, 0, 0, site::kWarmStart);
  std::shuffle(order.begin(), order.end(), stream);
  PoolState state;
  state.labeled.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
  state.unlabeled.assign(order.begin() + static_cast<std::ptrdiff_t>(n), order.end());
  std::sort(state.labeled.begin(), state.labeled.end());
  std::sort(state.unlabeled.begin(), state.unlabeled.end());
  state.history.push_back(state.labeled);
  return state;
}

PoolState score_pool(const Checkpoint& checkpoint, const Dataset& pool, PoolState state,
                     Strategy strategy, std::size_t T, std::uint64_t seed, std::size_t workers) {
  require(state.pool_size() == pool.size(), "score_pool: pool state does not match pool data");
  const auto& idx = state.unlabeled;
  std::vector<double> scores(idx.size());
  if (strategy == Strategy::Random) {
    for (std::size_t i = 0; i < idx.size(); ++i)
      scores[i] = Stream::derive(seed, idx[i], 0, site::kRandomScore).uniform();
  } else {
    McOptions options;
    options.resamples = 1;  // intervals are not needed for scoring
    parallel_for(
        idx.size(),
        [&](std::size_t i) {
          McOptions o = options;
          o.example = idx[i];
          scores[i] = mc_predict(checkpoint, pool[idx[i]].tokens, T, seed, o).bald;
        },
        workers == 0 ? default_workers() : workers);
  }
  state.scores.clear();
  for (std::size_t i = 0; i < idx.size(); ++i) state.scores.emplace(idx[i], scores[i]);
  return state;
}

std::vector<std::size_t> select_top_k(const PoolState& state, std::size_t k) {
  require(k <= state.unlabeled.size(), "select_top_k: k = " + std::to_string(k) + " exceeds " +
                                           std::to_string(state.unlabeled.size()) +
                                           " unlabeled examples");
  std::vector<std::pair<std::size_t, double>> ranked;
  ranked.reserve(state.unlabeled.size());
  for (std::size_t i : state.unlabeled) {
    auto it = state.scores.find(i);
    ranked.emplace_back(i, it == state.scores.end() ? 0.0 : it->second);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(ranked[i].first);
  return out;
}

PoolState acquire(PoolState state, std::span<const std::size_t> selected) {
  for (std::size_t i : selected) {
    auto it = std::lower_bound(state.unlabeled.begin(), state.unlabeled.end(), i);
    require(it != state.unlabeled.end() && *it == i,
            "acquire: index " + std::to_string(i) + " is not unlabeled");
    state.unlabeled.erase(it);
    state.labeled.insert(std::lower_bound(state.labeled.begin(), state.labeled.end(), i), i);
  }
  state.scores.clear();
  state.history.emplace_back(selected.begin(), selected.end());
  return state;
}

Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
  Dataset out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    require(i < data.size(), "subset: index out of range");
    out.push_back(data[i]);
  }
  return out;
}

std::size_t budget_count(double fraction, std::size_t pool_size, std::size_t unlabeled) {
  require(fraction >= 0.0, "budget fractions must be >= 0");
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pool_size)));
  return std::min(k, unlabeled);
}

std::vector<CurveRow> run_single_round(const Checkpoint& base, const Dataset& pool,
                                       const Dataset& valid, const Dataset& eval_data,
                                       const ActiveConfig& config,
                                       const TrainConfig& train_config) {
  require(!pool.empty() && !eval_data.empty(), "run_single_round: empty pool or eval data");
  std::vector<CurveRow> rows;
  for (std::uint64_t seed : config.seeds) {
    TrainConfig tc = train_config;
    tc.seed = seed;
    tc.workers = config.workers;
    const PoolState warm = warm_start(pool.size(), config.warm_fraction, seed);
    const Checkpoint warm_model =
        train(base.config, tc, subset(pool, warm.labeled), valid, &base.params).best;
    for (Strategy strategy : config.strategies) {
      const PoolState scored =
          score_pool(warm_model, pool, warm, strategy, config.passes, seed, config.workers);
      for (double budget : config.budgets) {
        const std::size_t k = budget_count(budget, pool.size(), scored.unlabeled.size());
        const PoolState after = acquire(scored, select_top_k(scored, k));
        const Checkpoint model =
            train(base.config, tc, subset(pool, after.labeled), valid, &base.params).best;
        const MetricsRow m = evaluate(model, eval_data);
        rows.push_back({strategy, budget, seed, m.accuracy, m.mcc, m.nll});
      }
    }
  }
  return rows;
}

std::string curve_csv(std::span<const CurveRow> rows) {
  std::ostringstream os;
  os.precision(9);
  os << "strategy,budget_fraction,seed,accuracy,mcc,nll\n";
  for (const CurveRow& r : rows) {
    os << to_string(r.strategy) << ',' << r.budget_fraction << ',' << r.seed << ',' << r.accuracy
       << ',' << r.mcc << ',' << r.nll << '\n';
  }
  return os.str();
}

void write_curve_csv(std::span<const CurveRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << curve_csv(rows);
}

}  // namespace bayesformer
