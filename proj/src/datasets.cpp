#include "bayesformer/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include <json.hpp>

#include "bayesformer/error.hpp"
#include "bayesformer/rng.hpp"

namespace bayesformer {

TaskKind parse_task(std::string_view name) {
  if (name == "majority") return TaskKind::Majority;
  if (name == "parity") return TaskKind::Parity;
  if (name == "noisy_majority") return TaskKind::NoisyMajority;
  throw ContractError("unknown task '" + std::string(name) +
                      "' (expected majority|parity|noisy_majority)");
}

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Majority: return "majority";
    case TaskKind::Parity: return "parity";
    case TaskKind::NoisyMajority: return "noisy_majority";
  }
  return "?";
}

int majority_label(std::span<const int> content) {
  const auto a = std::count(content.begin(), content.end(), kMajorityClass0Token);
  const auto b = std::count(content.begin(), content.end(), kMajorityClass1Token);
  return a >= b ? 0 : 1;
}

int parity_label(std::span<const int> bits) {
  int acc = 0;
  for (int b : bits) {
    require(b == 0 || b == 1, "parity_label: non-binary value " + std::to_string(b));
    acc ^= b;
  }
  return acc;
}

Dataset generate(const TaskSpec& spec) {
  require(spec.seq_len >= 1, "generate: seq_len must be >= 1");
  require(spec.vocab_size >= 3, "generate: vocab_size must be >= 3 (BOS + two content tokens)");
  require(spec.flip_prob >= 0.0 && spec.flip_prob <= 1.0, "generate: flip_prob outside [0, 1]");
  Dataset out;
  out.reserve(spec.n_examples);
  const auto content_ids = static_cast<std::uint64_t>(spec.vocab_size - 1);
  for (std::size_t i = 0; i < spec.n_examples; ++i) {
    Stream stream = Stream::derive(spec.seed, i, 0, site::kGenerate);
    Example ex;
    ex.tokens.assign(spec.seq_len + 1, kBosToken);
    auto content = std::span<int>(ex.tokens).subspan(1);
    if (spec.kind == TaskKind::Parity) {
      std::vector<int> bits(spec.seq_len);
      for (std::size_t t = 0; t < spec.seq_len; ++t) {
        bits[t] = static_cast<int>(stream.below(2));
        content[t] = 1 + bits[t];
      }
      ex.label = parity_label(bits);
    } else {
      for (;;) {
        for (int& tok : content) tok = 1 + static_cast<int>(stream.below(content_ids));
        const auto a = std::count(content.begin(), content.end(), kMajorityClass0Token);
        const auto b = std::count(content.begin(), content.end(), kMajorityClass1Token);
        if (a != b) break;
      }
      ex.label = majority_label(content);
      if (spec.kind == TaskKind::NoisyMajority && stream.uniform() < spec.flip_prob) {
        ex.label = 1 - ex.label;
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

Splits split(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    require(f > 0.0, "split: fractions must be positive");
    total += f;
  }
  require(std::abs(total - 1.0) <= 1e-9, "split: fractions must sum to 1");
  const std::size_t n = data.size();
  const auto n_train = static_cast<std::size_t>(std::floor(fractions[0] * n + 1e-9));
  const auto n_valid = static_cast<std::size_t>(std::floor(fractions[1] * n + 1e-9));
  require(n_train > 0 && n_valid > 0 && n_train + n_valid < n,
          "split: a split would be empty for " + std::to_string(n) + " examples");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Stream stream = Stream::derive(seed, 0, 0, site::kSplit);
  std::shuffle(order.begin(), order.end(), stream);

  Splits out;
  for (std::size_t i = 0; i < n; ++i) {
    Dataset& dst = i < n_train ? out.train : i < n_train + n_valid ? out.valid : out.test;
    dst.push_back(data[order[i]]);
  }
  return out;
}

Dataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Dataset out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto where = [&] { return path.string() + ":" + std::to_string(line_no) + ": "; };
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where() + "malformed JSON (" + e.what() + ")", line_no);
    }
    if (!obj.is_object()) throw ParseError(where() + "expected a JSON object", line_no);
    if (!obj.contains("tokens")) throw ParseError(where() + "missing \"tokens\"", line_no);
    if (!obj.contains("label")) throw ParseError(where() + "missing \"label\"", line_no);
    const auto& tokens = obj["tokens"];
    const auto& label = obj["label"];
    if (!tokens.is_array()) throw ParseError(where() + "\"tokens\" must be an array", line_no);
    if (!label.is_number_integer()) throw ParseError(where() + "\"label\" must be an integer", line_no);
    Example ex;
    for (const auto& t : tokens) {
      if (!t.is_number_integer()) throw ParseError(where() + "non-integer token", line_no);
      ex.tokens.push_back(t.get<int>());
    }
    ex.label = label.get<int>();
    out.push_back(std::move(ex));
  }
  return out;
}

void save_jsonl(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const Example& ex : data) {
    out << nlohmann::json{{"tokens", ex.tokens}, {"label", ex.label}}.dump() << '\n';
  }
}

void validate_dataset(const Dataset& data, std::size_t vocab_size, std::size_t n_classes,
                      std::size_t max_len) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Example& ex = data[i];
    const std::string which = "example " + std::to_string(i) + ": ";
    require(!ex.tokens.empty() && ex.tokens.size() <= max_len,
            which + "length " + std::to_string(ex.tokens.size()) + " outside [1, " +
                std::to_string(max_len) + "]");
    require(ex.label >= 0 && static_cast<std::size_t>(ex.label) < n_classes,
            which + "label " + std::to_string(ex.label) + " outside " + std::to_string(n_classes) +
                " classes");
    for (int t : ex.tokens) {
      require(t >= 0 && static_cast<std::size_t>(t) < vocab_size,
              which + "token " + std::to_string(t) + " outside vocabulary of " +
                  std::to_string(vocab_size));
    }
  }
}

}  // namespace bayesformer
