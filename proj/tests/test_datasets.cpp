#include <algorithm>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "bayesformer/datasets.hpp"
#include "bayesformer/error.hpp"

using namespace bayesformer;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "bayesformer_data_test";
  fs::create_directories(dir);
  return dir / name;
}

TaskSpec spec(TaskKind kind, std::size_t n, std::uint64_t seed = 0) {
  TaskSpec s;
  s.kind = kind;
  s.n_examples = n;
  s.seed = seed;
  return s;
}

bool by_content(const Example& a, const Example& b) {
  return std::tie(a.tokens, a.label) < std::tie(b.tokens, b.label);
}

}  // namespace

TEST(Labels, ParityIsXor) {
  EXPECT_EQ(parity_label(std::vector<int>{1, 0, 1}), 0);
  EXPECT_EQ(parity_label(std::vector<int>{1, 0, 0}), 1);
  EXPECT_EQ(parity_label(std::vector<int>{0}), 0);
}

TEST(Labels, MajorityOfDesignatedTokens) {
  // [1,1,0]: token 1 dominates -> its class
  EXPECT_EQ(majority_label(std::vector<int>{1, 1, 0}), 0);
  EXPECT_EQ(majority_label(std::vector<int>{2, 2, 1, 5}), 1);
  EXPECT_EQ(majority_label(std::vector<int>{1, 2, 3}), 0);  // tie -> class 0
}

TEST(Generate, MajorityClassBalance) {
  const Dataset d = generate(spec(TaskKind::Majority, 10000, 3));
  const auto ones = std::count_if(d.begin(), d.end(), [](const Example& e) { return e.label == 1; });
  EXPECT_NEAR(static_cast<double>(ones) / 1e4, 0.5, 0.02);
}

TEST(Generate, LabelsFollowTheirRule) {
  for (auto kind : {TaskKind::Majority, TaskKind::Parity}) {
    for (const Example& e : generate(spec(kind, 500, 1))) {
      ASSERT_EQ(e.tokens.front(), kBosToken);
      const std::span<const int> content(e.tokens.begin() + 1, e.tokens.end());
      if (kind == TaskKind::Majority) {
        EXPECT_EQ(e.label, majority_label(content));
      } else {
        std::vector<int> bits;
        for (int t : content) bits.push_back(t - 1);
        EXPECT_EQ(e.label, parity_label(bits));
      }
    }
  }
}

TEST(Generate, NoisyMajorityFlipsAtRate) {
  TaskSpec s = spec(TaskKind::NoisyMajority, 20000, 5);
  s.flip_prob = 0.15;
  std::size_t flipped = 0;
  const Dataset d = generate(s);
  for (const Example& e : d) {
    const std::span<const int> content(e.tokens.begin() + 1, e.tokens.end());
    flipped += e.label != majority_label(content);
  }
  // binomial standard error is about 0.0025
  EXPECT_NEAR(static_cast<double>(flipped) / static_cast<double>(d.size()), 0.15, 0.01);
}

TEST(Generate, EveryExampleSatisfiesInvariants) {
  for (auto kind : {TaskKind::Majority, TaskKind::Parity, TaskKind::NoisyMajority}) {
    TaskSpec s = spec(kind, 300, 11);
    s.seq_len = 5;
    s.vocab_size = 6;
    s.flip_prob = 0.3;
    const Dataset d = generate(s);
    ASSERT_EQ(d.size(), 300u);
    EXPECT_NO_THROW(validate_dataset(d, 6, 2, 6));
    for (const Example& e : d) EXPECT_EQ(e.tokens.size(), 6u);
  }
}

TEST(Generate, PureFunctionOfSpec) {
  EXPECT_EQ(generate(spec(TaskKind::Parity, 200, 9)), generate(spec(TaskKind::Parity, 200, 9)));
  EXPECT_NE(generate(spec(TaskKind::Parity, 200, 9)), generate(spec(TaskKind::Parity, 200, 10)));
}

TEST(Generate, InvalidParametersRejected) {
  TaskSpec s = spec(TaskKind::Majority, 10);
  s.seq_len = 0;
  EXPECT_THROW(generate(s), ContractError);
  s = spec(TaskKind::Majority, 10);
  s.vocab_size = 2;  // needs BOS plus both designated tokens
  EXPECT_THROW(generate(s), ContractError);
  s = spec(TaskKind::NoisyMajority, 10);
  s.flip_prob = 1.5;
  EXPECT_THROW(generate(s), ContractError);
  EXPECT_THROW(parse_task("sorting"), ContractError);
}

TEST(Split, SizesOfTenExamples) {
  const Splits s = split(generate(spec(TaskKind::Majority, 10)), {0.8, 0.1, 0.1}, 1);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.valid.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
}

TEST(Split, PartitionsTheDataset) {
  const Dataset d = generate(spec(TaskKind::Parity, 137, 2));
  const Splits s = split(d, {0.6, 0.25, 0.15}, 4);
  Dataset all = s.train;
  all.insert(all.end(), s.valid.begin(), s.valid.end());
  all.insert(all.end(), s.test.begin(), s.test.end());
  Dataset original = d;
  std::sort(all.begin(), all.end(), by_content);
  std::sort(original.begin(), original.end(), by_content);
  EXPECT_EQ(all, original);
}

TEST(Split, SeededAndDeterministic) {
  const Dataset d = generate(spec(TaskKind::Majority, 50, 2));
  const Splits a = split(d, {0.8, 0.1, 0.1}, 6), b = split(d, {0.8, 0.1, 0.1}, 6);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.valid, b.valid);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(split(d, {0.8, 0.1, 0.1}, 7).train, a.train);
}

TEST(Split, BadFractionsOrEmptySplitRejected) {
  const Dataset d = generate(spec(TaskKind::Majority, 10));
  EXPECT_THROW(split(d, {0.8, 0.1, 0.2}, 0), ContractError);
  EXPECT_THROW(split(d, {1.0, 0.0, 0.0}, 0), ContractError);
  EXPECT_THROW(split(generate(spec(TaskKind::Majority, 4)), {0.8, 0.1, 0.1}, 0), ContractError);
}

TEST(Jsonl, RoundTrip) {
  const Dataset d = generate(spec(TaskKind::Parity, 40, 8));
  const fs::path p = temp_file("rt.jsonl");
  save_jsonl(d, p);
  EXPECT_EQ(load_jsonl(p), d);
}

TEST(Jsonl, EmptyFileGivesEmptyDataset) {
  const fs::path p = temp_file("empty.jsonl");
  std::ofstream{p};
  EXPECT_TRUE(load_jsonl(p).empty());
}

TEST(Jsonl, MissingLabelNamesLine) {
  const fs::path p = temp_file("nolabel.jsonl");
  std::ofstream(p) << "{\"tokens\":[0,1],\"label\":0}\n{\"tokens\":[0,2]}\n";
  try {
    load_jsonl(p);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("label"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
}

TEST(Jsonl, MalformedJsonNamesLine) {
  const fs::path p = temp_file("bad.jsonl");
  std::ofstream(p) << "{\"tokens\":[0,1],\"label\":0}\n\n{\"tokens\":[0,\n";
  try {
    load_jsonl(p);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Validate, NamesOffendingExample) {
  Dataset d = {{{0, 1, 2}, 0}, {{0, 9}, 1}};
  try {
    validate_dataset(d, 8, 2, 4);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("1"), std::string::npos);
  }
  d[1].tokens = {0, 1};
  d[1].label = 2;
  EXPECT_THROW(validate_dataset(d, 8, 2, 4), ContractError);
  d[1].label = 1;
  d[1].tokens = {0, 1, 1, 1, 1};
  EXPECT_THROW(validate_dataset(d, 8, 2, 4), ContractError);
}
