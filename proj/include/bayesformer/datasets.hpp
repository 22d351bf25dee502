#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace bayesformer {

// Token 0 is the reserved BOS token every sequence starts with; the encoder
// classifies from its position. Generators emit content tokens from id 1.
inline constexpr int kBosToken = 0;

struct Example {
  std::vector<int> tokens;
  int label = 0;
  friend bool operator==(const Example&, const Example&) = default;
};

using Dataset = std::vector<Example>;

enum class TaskKind { Majority, Parity, NoisyMajority };

TaskKind parse_task(std::string_view name);
std::string_view to_string(TaskKind kind);

struct TaskSpec {
  TaskKind kind = TaskKind::Majority;
  std::size_t n_examples = 1000;
  std::size_t seq_len = 8;  // content tokens, excluding BOS
  std::size_t vocab_size = 8;
  double flip_prob = 0.0;   // NoisyMajority only
  std::uint64_t seed = 0;
};

// Tokens 1 and 2 are the designated content tokens of the majority task:
// class 0 when token 1 occurs at least as often as token 2, else class 1.
inline constexpr int kMajorityClass0Token = 1;
inline constexpr int kMajorityClass1Token = 2;
int majority_label(std::span<const int> content);
// XOR of the bits; the generator writes bit b as token 1 + b.
int parity_label(std::span<const int> bits);

// Majority sequences draw content uniformly from [1, vocab_size) and reject
// ties, so both classes are equally likely.
Dataset generate(const TaskSpec& spec);

struct Splits {
  Dataset train;
  Dataset valid;
  Dataset test;
};

// Seeded shuffle, then contiguous cuts of floor(fraction * n) for train and
// valid; test receives the remainder.
Splits split(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed);

// One {"tokens":[...],"label":k} object per line.
Dataset load_jsonl(const std::filesystem::path& path);
void save_jsonl(const Dataset& data, const std::filesystem::path& path);

// Throws ContractError naming the first example that breaks the limits.
void validate_dataset(const Dataset& data, std::size_t vocab_size, std::size_t n_classes,
                      std::size_t max_len);

}  // namespace bayesformer
