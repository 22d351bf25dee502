#include "bayesformer/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "bayesformer/error.hpp"
#include "bayesformer/parallel.hpp"

namespace bayesformer {
namespace {

void add_kl_gradient(EncoderParams& grads, const EncoderParams& params, float lambda) {
  if (lambda == 0.0f) return;
  auto g = grads.tensors();
  std::size_t k = 0;
  visit_weights(params, [&](const ParamName&, const Tensor& m, ParamRole role) {
    Tensor& dst = *g[k++];
    if (role != ParamRole::VariationalMean) return;
    for (std::size_t i = 0; i < m.size(); ++i) dst[i] += 2.0f * lambda * m[i];
  });
}

void zero(EncoderParams& params) {
  for (Tensor* t : params.tensors()) t->fill(0.0f);
}

// Endless sequence of seeded per-epoch permutations.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) { reshuffle(); }

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (cursor_ == order_.size()) {
        ++epoch_;
        reshuffle();
      }
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Stream stream = Stream::derive(seed_, epoch_, 0, site::kBatch);
    std::shuffle(order_.begin(), order_.end(), stream);
    cursor_ = 0;
  }

  std::size_t n_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

std::size_t argmax(const Tensor& logits) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.size(); ++c)
    if (logits[c] > logits[best]) best = c;
  return best;
}

}  // namespace

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw ContractError("unknown optimizer '" + std::string(name) + "' (expected sgd|adam)");
}

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Sgd ? "sgd" : "adam";
}

std::string_view to_string(Split split) { return split == Split::Train ? "train" : "valid"; }

void TrainConfig::validate() const {
  require(lr > 0.0f, "train config: lr must be positive");
  require(batch_size >= 1, "train config: batch_size must be >= 1");
  require(eval_every >= 1, "train config: eval_every must be >= 1");
  require(!lambda || *lambda >= 0.0f, "train config: lambda must be >= 0");
  require(sigma_prior > 0.0f, "train config: sigma_prior must be positive");
  require(beta1 >= 0.0f && beta1 < 1.0f && beta2 >= 0.0f && beta2 < 1.0f,
          "train config: adam betas must lie in [0, 1)");
  require(adam_eps > 0.0f, "train config: adam eps must be positive");
}

float TrainConfig::resolved_lambda(float p_drop, std::size_t n_train) const {
  return lambda ? *lambda : default_lambda(p_drop, sigma_prior, n_train);
}

double matthews_corrcoef(std::span<const std::size_t> confusion, std::size_t n_classes) {
  require(confusion.size() == n_classes * n_classes, "matthews_corrcoef: bad confusion size");
  double correct = 0.0, total = 0.0;
  std::vector<double> truth(n_classes, 0.0), predicted(n_classes, 0.0);
  for (std::size_t t = 0; t < n_classes; ++t) {
    for (std::size_t p = 0; p < n_classes; ++p) {
      const auto v = static_cast<double>(confusion[t * n_classes + p]);
      truth[t] += v;
      predicted[p] += v;
      total += v;
      if (t == p) correct += v;
    }
  }
  double tp = 0.0, pp = 0.0, tt = 0.0;
  for (std::size_t k = 0; k < n_classes; ++k) {
    tp += truth[k] * predicted[k];
    pp += predicted[k] * predicted[k];
    tt += truth[k] * truth[k];
  }
  const double denom = std::sqrt((total * total - pp) * (total * total - tt));
  if (denom == 0.0) return 0.0;
  return (correct * total - tp) / denom;
}

double negative_log_likelihood(const Tensor& logits, int label) {
  require(label >= 0 && static_cast<std::size_t>(label) < logits.size(),
          "nll: label " + std::to_string(label) + " outside " + std::to_string(logits.size()) +
              " classes");
  double mx = -INFINITY;
  for (float v : logits.values()) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (float v : logits.values()) sum += std::exp(static_cast<double>(v) - mx);
  return mx + std::log(sum) - logits[static_cast<std::size_t>(label)];
}

double loss(std::span<const Tensor> logits_batch, std::span<const int> labels,
            const EncoderParams& params, float lambda) {
  require(logits_batch.size() == labels.size() && !labels.empty(),
          "loss: need one label per logits row");
  double nll = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    nll += negative_log_likelihood(logits_batch[i], labels[i]);
  }
  return nll / static_cast<double>(labels.size()) + kl_regularizer(params, lambda);
}

Var objective(Graph& graph, const BoundParams& params, const EncoderConfig& config,
              std::span<const Example> batch, std::span<const MaskPlan* const> plans,
              float lambda) {
  require(!batch.empty() && plans.size() == batch.size(), "objective: one plan per example");
  std::vector<Var> terms;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Var logits = forward(graph, params, config, batch[i].tokens, plans[i]);
    terms.push_back(graph.cross_entropy(logits, batch[i].label));
  }
  Var mean_nll = graph.scale(graph.sum(terms), 1.0f / static_cast<float>(batch.size()));
  std::vector<Var> squares;
  visit_weights(params, [&](const ParamName&, const Var& v, ParamRole role) {
    if (role == ParamRole::VariationalMean) squares.push_back(graph.sum_squares(v));
  });
  const Var parts[] = {mean_nll, graph.scale(graph.sum(squares), lambda)};
  return graph.sum(parts);
}

BatchGradient batch_gradient(const EncoderParams& params, const EncoderConfig& config,
                             std::span<const Example* const> batch,
                             std::span<const Stream> streams, float lambda, std::size_t workers) {
  require(!batch.empty() && streams.size() == batch.size(),
          "batch_gradient: one stream per example");
  const std::size_t n = batch.size();
  const float weight = 1.0f / static_cast<float>(n);
  if (workers == 0) workers = default_workers();
  workers = std::min(workers, n);

  BatchGradient out;
  out.grads = EncoderParams::zeros(config);
  zero(out.grads);  // zeros() leaves layer-norm gains at one
  std::vector<double> nll(n, 0.0);

  auto run = [&](std::size_t i, EncoderParams& into) {
    Graph g;
    const BoundParams bound = bind(g, params, true);
    Var logits = stochastic_forward(g, bound, config, batch[i]->tokens, streams[i]);
    Var ce = g.cross_entropy(logits, batch[i]->label);
    nll[i] = g.value(ce).item();
    g.backward(ce);
    accumulate_grads(g, bound, into, weight);
  };

  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) run(i, out.grads);
  } else {
    // zero + w*g is exact, so slot-then-reduce matches the sequential sum bitwise.
    std::vector<EncoderParams> slots(n, out.grads);
    parallel_for(n, [&](std::size_t i) { run(i, slots[i]); }, workers);
    for (std::size_t i = 0; i < n; ++i) {
      auto dst = out.grads.tensors();
      auto src = slots[i].tensors();
      for (std::size_t k = 0; k < dst.size(); ++k)
        for (std::size_t e = 0; e < dst[k]->size(); ++e) (*dst[k])[e] += (*src[k])[e];
    }
  }
  add_kl_gradient(out.grads, params, lambda);
  out.nll = std::accumulate(nll.begin(), nll.end(), 0.0) / static_cast<double>(n);
  out.loss = out.nll + kl_regularizer(params, lambda);
  return out;
}

Optimizer::Optimizer(const TrainConfig& config, const EncoderParams& shape_like)
    : config_(config), m_(shape_like), v_(shape_like) {
  zero(m_);
  zero(v_);
}

void Optimizer::step(EncoderParams& params, const EncoderParams& grads) {
  ++t_;
  auto p = params.tensors();
  auto g = grads.tensors();
  if (config_.optimizer == OptimizerKind::Sgd) {
    for (std::size_t k = 0; k < p.size(); ++k)
      for (std::size_t i = 0; i < p[k]->size(); ++i) (*p[k])[i] -= config_.lr * (*g[k])[i];
    return;
  }
  auto m = m_.tensors();
  auto v = v_.tensors();
  const float b1 = config_.beta1, b2 = config_.beta2;
  const float c1 = 1.0f - std::pow(b1, static_cast<float>(t_));
  const float c2 = 1.0f - std::pow(b2, static_cast<float>(t_));
  for (std::size_t k = 0; k < p.size(); ++k) {
    for (std::size_t i = 0; i < p[k]->size(); ++i) {
      const float gi = (*g[k])[i];
      float& mi = (*m[k])[i];
      float& vi = (*v[k])[i];
      mi = b1 * mi + (1.0f - b1) * gi;
      vi = b2 * vi + (1.0f - b2) * gi * gi;
      (*p[k])[i] -= config_.lr * (mi / c1) / (std::sqrt(vi / c2) + config_.adam_eps);
    }
  }
}

EncoderParams initial_params(const EncoderConfig& config, std::uint64_t seed) {
  return EncoderParams::init(config, mix64(seed ^ site::kInit));
}

Stream training_stream(std::uint64_t seed, std::size_t index, std::size_t step) {
  return Stream::derive(seed, index, step, site::kMaskPlan);
}

MetricsRow evaluate(const Checkpoint& checkpoint, const Dataset& data, Split split, float lambda) {
  require(!data.empty(), "evaluate: empty dataset");
  const EncoderConfig& config = checkpoint.config;
  const std::size_t c = config.n_classes;
  std::vector<std::size_t> confusion(c * c, 0);
  double nll = 0.0;
  std::size_t correct = 0;
  for (const Example& ex : data) {
    const Tensor logits = deterministic_logits(ex.tokens, checkpoint.params, config);
    nll += negative_log_likelihood(logits, ex.label);
    const std::size_t pred = argmax(logits);
    confusion[static_cast<std::size_t>(ex.label) * c + pred] += 1;
    if (pred == static_cast<std::size_t>(ex.label)) ++correct;
  }
  MetricsRow row;
  row.split = split;
  row.nll = nll / static_cast<double>(data.size());
  row.loss = row.nll + kl_regularizer(checkpoint.params, lambda);
  row.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  row.mcc = matthews_corrcoef(confusion, c);
  return row;
}

TrainResult train(const EncoderConfig& model_config, const TrainConfig& train_config,
                  const Dataset& train_data, const Dataset& valid_data,
                  const EncoderParams* initial) {
  model_config.validate();
  train_config.validate();
  require(!train_data.empty() && !valid_data.empty(), "train: datasets must be nonempty");
  require(model_config.p_drop < 1.0f, "train: p_drop must lie in [0, 1)");
  validate_dataset(train_data, model_config.vocab_size, model_config.n_classes,
                   model_config.max_positions);
  validate_dataset(valid_data, model_config.vocab_size, model_config.n_classes,
                   model_config.max_positions);

  const float lambda = train_config.resolved_lambda(model_config.p_drop, train_data.size());
  Checkpoint current{model_config,
                     initial ? *initial : initial_params(model_config, train_config.seed)};
  current.params.validate(model_config);

  TrainResult result;
  Optimizer optimizer(train_config, current.params);
  BatchSampler sampler(train_data.size(), train_config.seed);
  double best_nll = INFINITY;
  double window_loss = 0.0;
  std::size_t window_steps = 0;

  auto record = [&](std::size_t step) {
    MetricsRow tr = evaluate(current, train_data, Split::Train, lambda);
    if (window_steps > 0) tr.loss = window_loss / static_cast<double>(window_steps);
    tr.step = step;
    MetricsRow va = evaluate(current, valid_data, Split::Valid, lambda);
    va.step = step;
    result.metrics.push_back(tr);
    result.metrics.push_back(va);
    window_loss = 0.0;
    window_steps = 0;
    if (va.nll < best_nll) {
      best_nll = va.nll;
      result.best = current;
      result.best_step = step;
    }
  };

  record(0);
  std::vector<const Example*> batch(train_config.batch_size);
  std::vector<Stream> streams(train_config.batch_size);
  for (std::size_t step = 1; step <= train_config.max_steps; ++step) {
    const auto indices = sampler.next(train_config.batch_size);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      batch[i] = &train_data[indices[i]];
      streams[i] = training_stream(train_config.seed, indices[i], step);
    }
    BatchGradient bg = batch_gradient(current.params, model_config, batch, streams, lambda,
                                      train_config.workers);
    if (!std::isfinite(bg.loss)) {
      std::ostringstream os;
      os << "training diverged at step " << step << ": loss " << bg.loss << " (nll " << bg.nll
         << ", lr " << train_config.lr << ")";
      throw TrainingDiverged(os.str());
    }
    optimizer.step(current.params, bg.grads);
    window_loss += bg.loss;
    ++window_steps;
    if (step % train_config.eval_every == 0 || step == train_config.max_steps) record(step);
  }
  result.final = current;
  return result;
}

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::ostringstream os;
  os.precision(9);
  os << "step,split,loss,nll,accuracy,mcc\n";
  for (const MetricsRow& r : rows) {
    os << r.step << ',' << to_string(r.split) << ',' << r.loss << ',' << r.nll << ','
       << r.accuracy << ',' << r.mcc << '\n';
  }
  return os.str();
}

void write_metrics_csv(std::span<const MetricsRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << metrics_csv(rows);
}

}  // namespace bayesformer
