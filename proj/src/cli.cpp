#include "bayesformer/cli.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "bayesformer/checkpoint.hpp"
#include "bayesformer/error.hpp"
#include "bayesformer/uncertainty.hpp"

namespace bayesformer {
namespace {

using Entry = RunConfig::Entry;

std::string where(const std::string& key, const Entry& e) {
  return (e.line ? "line " + std::to_string(e.line) + ": " : std::string()) + "key '" + key + "': ";
}

[[noreturn]] void bad_value(const std::string& key, const Entry& e, const char* expected) {
  throw ParseError(where(key, e) + "expected " + expected + ", got '" + e.value + "'", e.line);
}

void check(bool ok, const std::string& key, const Entry& e, const std::string& what) {
  if (!ok) throw ContractError(where(key, e) + what + ", got " + e.value);
}

std::uint64_t to_u64(const std::string& key, const Entry& e) {
  std::uint64_t v = 0;
  const char* end = e.value.data() + e.value.size();
  auto [ptr, ec] = std::from_chars(e.value.data(), end, v);
  if (ec != std::errc() || ptr != end || e.value.empty()) bad_value(key, e, "a non-negative integer");
  return v;
}

std::size_t to_count(const std::string& key, const Entry& e) {
  return static_cast<std::size_t>(to_u64(key, e));
}

double to_double(const std::string& key, const Entry& e) {
  std::istringstream in(e.value);
  in.imbue(std::locale::classic());
  double v = 0.0;
  if (!(in >> v) || !(in >> std::ws).eof() || !std::isfinite(v)) bad_value(key, e, "a number");
  return v;
}

std::vector<std::string> to_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    const auto a = item.find_first_not_of(" \t");
    const auto b = item.find_last_not_of(" \t");
    if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
  }
  return out;
}

std::vector<double> to_doubles(const std::string& key, const Entry& e) {
  std::vector<double> out;
  for (const std::string& item : to_list(e.value)) out.push_back(to_double(key, {item, e.line}));
  if (out.empty()) bad_value(key, e, "a comma-separated list of numbers");
  return out;
}

template <typename Fn>
auto to_enum(const std::string& key, const Entry& e, Fn parse) {
  try {
    return parse(e.value);
  } catch (const ContractError& err) {
    throw ParseError(where(key, e) + err.what(), e.line);
  }
}

using Apply = void (*)(RunConfig&, const std::string&, const Entry&);

struct Field {
  const char* key;
  const char* fallback;
  Apply apply;
};

// Schema, in echo order.
const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      {"run.seed", "0", [](RunConfig& c, const std::string& k, const Entry& e) { c.seed = to_u64(k, e); }},
      {"run.out", "run", [](RunConfig& c, const std::string&, const Entry& e) { c.out = e.value; }},
      {"run.checkpoint", "", [](RunConfig& c, const std::string&, const Entry& e) { c.checkpoint = e.value; }},

      {"model.n_layers", "2", [](RunConfig& c, const std::string& k, const Entry& e) { c.model.n_layers = to_count(k, e); }},
      {"model.n_heads", "2", [](RunConfig& c, const std::string& k, const Entry& e) { c.model.n_heads = to_count(k, e); }},
      {"model.d_model", "16", [](RunConfig& c, const std::string& k, const Entry& e) { c.model.d_model = to_count(k, e); }},
      {"model.d_ffn", "32", [](RunConfig& c, const std::string& k, const Entry& e) { c.model.d_ffn = to_count(k, e); }},
      {"model.vocab_size", "8", [](RunConfig& c, const std::string& k, const Entry& e) { c.model.vocab_size = to_count(k, e); }},
      {"model.max_positions", "16", [](RunConfig& c, const std::string& k, const Entry& e) { c.model.max_positions = to_count(k, e); }},
      {"model.n_classes", "2", [](RunConfig& c, const std::string& k, const Entry& e) { c.model.n_classes = to_count(k, e); }},
      {"model.p_drop", "0.1",
       [](RunConfig& c, const std::string& k, const Entry& e) {
         const double p = to_double(k, e);
         check(p >= 0.0 && p < 1.0, k, e, "p_drop must lie in [0, 1)");
         c.model.p_drop = static_cast<float>(p);
       }},
      {"model.ffn_activation", "relu",
       [](RunConfig& c, const std::string& k, const Entry& e) {
         c.model.ffn_activation = to_enum(k, e, parse_activation);
       }},
      {"model.variant", "bayesformer",
       [](RunConfig& c, const std::string& k, const Entry& e) { c.model.variant = to_enum(k, e, parse_variant); }},

      {"train.lr", "0.001",
       [](RunConfig& c, const std::string& k, const Entry& e) {
         const double v = to_double(k, e);
         check(v > 0.0, k, e, "lr must be positive");
         c.train.lr = static_cast<float>(v);
       }},
      {"train.batch_size", "32",
       [](RunConfig& c, const std::string& k, const Entry& e) {
         c.train.batch_size = to_count(k, e);
         check(c.train.batch_size >= 1, k, e, "batch_size must be >= 1");
       }},
      {"train.max_steps", "1000", [](RunConfig& c, const std::string& k, const Entry& e) { c.train.max_steps = to_count(k, e); }},
      {"train.lambda", "auto",
       [](RunConfig& c, const std::string& k, const Entry& e) {
         if (e.value == "auto") {
           c.train.lambda.reset();
           return;
         }
         const double v = to_double(k, e);
         check(v >= 0.0, k, e, "lambda must be >= 0");
         c.train.lambda = static_cast<float>(v);
       }},
      {"train.sigma_prior", "1",
       [](RunConfig& c, const std::string& k, const Entry& e) {
         const double v = to_double(k, e);
         check(v > 0.0, k, e, "sigma_prior must be positive");
         c.train.sigma_prior = static_cast<float>(v);
       }},
      {"train.eval_every", "100",
       [](RunConfig& c, const std::string& k, const Entry& e) {
         c.train.eval_every = to_count(k, e);
         check(c.train.eval_every >= 1, k, e, "eval_every must be >= 1");
       }},
      {"train.optimizer", "adam",
       [](RunConfig& c, const std::string& k, const Entry& e) { c.train.optimizer = to_enum(k, e, parse_optimizer); }},
      {"train.beta1", "0.9", [](RunConfig& c, const std::string& k, const Entry& e) { c.train.beta1 = static_cast<float>(to_double(k, e)); }},
      {"train.beta2", "0.999", [](RunConfig& c, const std::string& k, const Entry& e) { c.train.beta2 = static_cast<float>(to_double(k, e)); }},
      {"train.adam_eps", "1e-08", [](RunConfig& c, const std::string& k, const Entry& e) { c.train.adam_eps = static_cast<float>(to_double(k, e)); }},
      {"train.workers", "1", [](RunConfig& c, const std::string& k, const Entry& e) { c.train.workers = to_count(k, e); }},

      {"data.task", "majority",
       [](RunConfig& c, const std::string& k, const Entry& e) { c.data.task.kind = to_enum(k, e, parse_task); }},
      {"data.n_examples", "1000", [](RunConfig& c, const std::string& k, const Entry& e) { c.data.task.n_examples = to_count(k, e); }},
      {"data.seq_len", "8", [](RunConfig& c, const std::string& k, const Entry& e) { c.data.task.seq_len = to_count(k, e); }},
      {"data.flip_prob", "0",
       [](RunConfig& c, const std::string& k, const Entry& e) {
         c.data.task.flip_prob = to_double(k, e);
         check(c.data.task.flip_prob >= 0.0 && c.data.task.flip_prob <= 1.0, k, e,
               "flip_prob must lie in [0, 1]");
       }},
      {"data.split", "0.8, 0.1, 0.1",
       [](RunConfig& c, const std::string& k, const Entry& e) {
         const auto f = to_doubles(k, e);
         if (f.size() != 3) bad_value(k, e, "three fractions (train, valid, test)");
         c.data.split = {f[0], f[1], f[2]};
       }},
      {"data.train", "", [](RunConfig& c, const std::string&, const Entry& e) { c.data.train = e.value; }},
      {"data.valid", "", [](RunConfig& c, const std::string&, const Entry& e) { c.data.valid = e.value; }},
      {"data.test", "", [](RunConfig& c, const std::string&, const Entry& e) { c.data.test = e.value; }},
      {"data.input", "", [](RunConfig& c, const std::string&, const Entry& e) { c.data.input = e.value; }},

      {"uncertainty.passes", "11",
       [](RunConfig& c, const std::string& k, const Entry& e) {
         c.uncertainty.passes = to_count(k, e);
         check(c.uncertainty.passes >= 1, k, e, "passes must be >= 1");
       }},
      {"uncertainty.alpha", "0.05",
       [](RunConfig& c, const std::string& k, const Entry& e) {
         c.uncertainty.alpha = to_double(k, e);
         check(c.uncertainty.alpha > 0.0 && c.uncertainty.alpha < 1.0, k, e, "alpha must lie in (0, 1)");
       }},
      {"uncertainty.resamples", "1000",
       [](RunConfig& c, const std::string& k, const Entry& e) {
         c.uncertainty.resamples = to_count(k, e);
         check(c.uncertainty.resamples >= 1, k, e, "resamples must be >= 1");
       }},

      {"active.strategy", "mc_bald, random",
       [](RunConfig& c, const std::string& k, const Entry& e) {
         c.active.strategies.clear();
         for (const std::string& s : to_list(e.value))
           c.active.strategies.push_back(to_enum(k, {s, e.line}, parse_strategy));
         if (c.active.strategies.empty()) bad_value(k, e, "mc_bald and/or random");
       }},
      {"active.budget", "0.05, 0.1, 0.2, 0.4, 0.8",
       [](RunConfig& c, const std::string& k, const Entry& e) {
         c.active.budgets = to_doubles(k, e);
         for (double b : c.active.budgets) check(b >= 0.0 && b <= 1.0, k, e, "budgets must lie in [0, 1]");
       }},
      {"active.warm_fraction", "0.1",
       [](RunConfig& c, const std::string& k, const Entry& e) {
         c.active.warm_fraction = to_double(k, e);
         check(c.active.warm_fraction > 0.0 && c.active.warm_fraction < 1.0, k, e,
               "warm_fraction must lie in (0, 1)");
       }},
      {"active.trials", "1",
       [](RunConfig& c, const std::string& k, const Entry& e) {
         c.trials = to_count(k, e);
         check(c.trials >= 1, k, e, "trials must be >= 1");
       }},
  };
  return fields;
}

const Field* find_field(const std::string& key) {
  for (const Field& f : schema())
    if (key == f.key) return &f;
  return nullptr;
}

bool known_section(const std::string& section) {
  for (const Field& f : schema())
    if (std::string(f.key).starts_with(section + ".")) return true;
  return false;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

RunConfig resolve(std::map<std::string, Entry> values) {
  RunConfig c;
  for (const Field& f : schema()) values.try_emplace(f.key, Entry{f.fallback, 0});
  for (const Field& f : schema()) f.apply(c, f.key, values.at(f.key));
  c.values = std::move(values);

  c.model.validate();
  c.train.seed = c.seed;
  c.train.validate();
  c.data.task.vocab_size = c.model.vocab_size;
  c.data.task.seed = c.seed;
  require(c.data.task.seq_len + 1 <= c.model.max_positions,
          "data.seq_len + 1 (BOS) exceeds model.max_positions");
  c.active.passes = c.uncertainty.passes;
  c.active.workers = c.train.workers;
  c.active.seeds.clear();
  for (std::size_t t = 0; t < c.trials; ++t) c.active.seeds.push_back(c.seed + t);
  return c;
}

}  // namespace

RunConfig parse_config_text(const std::string& text,
                            const std::map<std::string, std::string>& overrides) {
  std::map<std::string, Entry> values;
  std::istringstream in(text);
  std::string raw;
  std::string section = "run";
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("line " + std::to_string(line_no) + ": unterminated section header", line_no);
      section = trim(line.substr(1, line.size() - 2));
      if (!known_section(section))
        throw ParseError("line " + std::to_string(line_no) + ": unknown section [" + section + "]", line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("line " + std::to_string(line_no) + ": expected 'key = value'", line_no);
    const std::string key = section + "." + trim(line.substr(0, eq));
    if (!find_field(key))
      throw ParseError("line " + std::to_string(line_no) + ": unknown key '" + key + "'", line_no);
    if (values.contains(key))
      throw ParseError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'", line_no);
    values[key] = Entry{trim(line.substr(eq + 1)), line_no};
  }
  for (const auto& [key, value] : overrides) {
    if (!find_field(key)) throw ContractError("unknown override key '" + key + "'");
    values[key] = Entry{value, 0};
  }
  return resolve(std::move(values));
}

RunConfig parse_config(const std::optional<std::filesystem::path>& path,
                       const std::map<std::string, std::string>& overrides) {
  std::string text;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw std::runtime_error("cannot open config " + path->string());
    std::ostringstream buf;
    buf << in.rdbuf();
    text = buf.str();
  }
  return parse_config_text(text, overrides);
}

std::string resolved_config_text(const RunConfig& config) {
  std::ostringstream os;
  std::string section;
  for (const Field& f : schema()) {
    const std::string key = f.key;
    const auto dot = key.find('.');
    if (key.substr(0, dot) != section) {
      if (!section.empty()) os << '\n';
      section = key.substr(0, dot);
      os << '[' << section << "]\n";
    }
    os << key.substr(dot + 1) << " = " << config.values.at(key).value << '\n';
  }
  return os.str();
}

namespace {

struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::string variant;
  std::size_t passes = kDefaultPasses;
  std::string strategy;
  std::string budget;
};

struct Command {
  RunConfig config;
  std::ostream& out;
};

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
}

std::filesystem::path prepare_run_dir(const RunConfig& c) {
  std::filesystem::create_directories(c.out);
  write_text(c.out / "config.resolved", resolved_config_text(c));
  return c.out;
}

Splits load_splits(const RunConfig& c) {
  if (c.data.train.empty()) return split(generate(c.data.task), c.data.split, c.seed);
  require(!c.data.valid.empty(), "data.valid is required when data.train is given");
  Splits s;
  s.train = load_jsonl(c.data.train);
  s.valid = load_jsonl(c.data.valid);
  if (!c.data.test.empty()) s.test = load_jsonl(c.data.test);
  return s;
}

Dataset evaluation_set(const RunConfig& c, const std::filesystem::path& preferred) {
  if (!preferred.empty()) return load_jsonl(preferred);
  if (!c.data.test.empty()) return load_jsonl(c.data.test);
  return load_splits(c).test;
}

Checkpoint require_checkpoint(const RunConfig& c, const char* command) {
  require(!c.checkpoint.empty(), std::string(command) + ": run.checkpoint is required");
  return load_checkpoint(c.checkpoint);
}

void gen_data(Command& cmd) {
  const auto dir = prepare_run_dir(cmd.config);
  const Splits s = split(generate(cmd.config.data.task), cmd.config.data.split, cmd.config.seed);
  save_jsonl(s.train, dir / "train.jsonl");
  save_jsonl(s.valid, dir / "valid.jsonl");
  save_jsonl(s.test, dir / "test.jsonl");
  cmd.out << "wrote " << s.train.size() << "/" << s.valid.size() << "/" << s.test.size()
          << " train/valid/test examples to " << dir.string() << "\n";
}

void train_cmd(Command& cmd) {
  const RunConfig& c = cmd.config;
  const auto dir = prepare_run_dir(c);
  const Splits s = load_splits(c);
  const TrainResult r = train(c.model, c.train, s.train, s.valid);
  save_checkpoint(r.best, dir / "best.ckpt");
  save_checkpoint(r.final, dir / "final.ckpt");
  write_metrics_csv(r.metrics, dir / "metrics.csv");
  const MetricsRow& last = r.metrics.back();
  cmd.out << "best step " << r.best_step << "; final valid nll " << last.nll << ", accuracy "
          << last.accuracy << ", mcc " << last.mcc << "\n";
}

void eval_cmd(Command& cmd) {
  const RunConfig& c = cmd.config;
  const auto dir = prepare_run_dir(c);
  const Checkpoint ck = require_checkpoint(c, "eval");
  const Dataset data = evaluation_set(c, {});
  require(!data.empty(), "eval: no evaluation data");
  validate_dataset(data, ck.config.vocab_size, ck.config.n_classes, ck.config.max_positions);
  const MetricsRow m = evaluate(ck, data);
  std::ostringstream csv;
  csv.precision(9);
  csv << "examples,accuracy,mcc,nll\n"
      << data.size() << ',' << m.accuracy << ',' << m.mcc << ',' << m.nll << '\n';
  write_text(dir / "eval.csv", csv.str());
  cmd.out << csv.str();
}

void predict_cmd(Command& cmd) {
  const RunConfig& c = cmd.config;
  const auto dir = prepare_run_dir(c);
  const Checkpoint ck = require_checkpoint(c, "predict");
  const Dataset data = evaluation_set(c, c.data.input);
  std::ofstream out(dir / "predictions.jsonl", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write predictions");
  for (std::size_t i = 0; i < data.size(); ++i) {
    McOptions o;
    o.alpha = c.uncertainty.alpha;
    o.resamples = c.uncertainty.resamples;
    o.example = i;
    o.workers = c.train.workers;
    out << to_json_line(mc_predict(ck, data[i].tokens, c.uncertainty.passes, c.seed, o)) << '\n';
  }
  cmd.out << "wrote " << data.size() << " predictions (" << c.uncertainty.passes
          << " passes) to " << (dir / "predictions.jsonl").string() << "\n";
}

void active_cmd(Command& cmd) {
  const RunConfig& c = cmd.config;
  const auto dir = prepare_run_dir(c);
  Checkpoint base = c.checkpoint.empty() ? Checkpoint{c.model, initial_params(c.model, c.seed)}
                                         : load_checkpoint(c.checkpoint);
  save_checkpoint(base, dir / "base.ckpt");
  const Splits s = load_splits(c);
  const Dataset& eval_data = s.test.empty() ? s.valid : s.test;
  const auto rows = run_single_round(base, s.train, s.valid, eval_data, c.active, c.train);
  write_curve_csv(rows, dir / "curve.csv");
  cmd.out << curve_csv(rows);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"BayesFormer encoder: training, MC-dropout uncertainty and active learning"};
  app.require_subcommand(1);
  Flags flags;
  struct Sub {
    const char* name;
    const char* help;
    void (*run)(Command&);
  };
  const Sub subs[] = {
      {"gen-data", "generate a synthetic task and write train/valid/test JSONL", gen_data},
      {"train", "train an encoder; writes checkpoints and metrics.csv", train_cmd},
      {"eval", "deterministic accuracy / MCC / NLL of run.checkpoint", eval_cmd},
      {"predict", "MC-dropout predictive summaries as JSON lines", predict_cmd},
      {"active", "single-round active-learning curve", active_cmd},
  };
  std::vector<CLI::App*> apps;
  for (const Sub& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", flags.config, "config file (key = value, [sections])");
    sub->add_option("--seed", flags.seed, "master seed for all randomness");
    sub->add_option("--out", flags.out, "run directory");
    sub->add_option("--variant", flags.variant, "bayesformer | baseline");
    sub->add_option("--passes", flags.passes, "MC forward passes (default 11)");
    sub->add_option("--strategy", flags.strategy, "mc_bald | random (comma list)");
    sub->add_option("--budget", flags.budget, "budget fraction(s) of the pool (comma list)");
    apps.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  std::size_t which = 0;
  while (!apps[which]->parsed()) ++which;
  CLI::App* sub = apps[which];
  std::map<std::string, std::string> overrides;
  if (sub->count("--seed")) overrides["run.seed"] = std::to_string(flags.seed);
  if (sub->count("--out")) overrides["run.out"] = flags.out;
  if (sub->count("--variant")) overrides["model.variant"] = flags.variant;
  if (sub->count("--passes")) overrides["uncertainty.passes"] = std::to_string(flags.passes);
  if (sub->count("--strategy")) overrides["active.strategy"] = flags.strategy;
  if (sub->count("--budget")) overrides["active.budget"] = flags.budget;

  try {
    std::optional<std::filesystem::path> path;
    if (sub->count("--config")) path = flags.config;
    Command cmd{parse_config(path, overrides), out};
    subs[which].run(cmd);
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace bayesformer
