#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bayesformer/active.hpp"
#include "bayesformer/datasets.hpp"
#include "bayesformer/model.hpp"
#include "bayesformer/training.hpp"

namespace bayesformer {

struct DataConfig {
  TaskSpec task;
  std::array<double, 3> split = {0.8, 0.1, 0.1};
  std::filesystem::path train, valid, test, input;  // empty: generate from `task`
};

struct UncertaintyConfig {
  std::size_t passes = kDefaultPasses;
  double alpha = kDefaultAlpha;
  std::size_t resamples = kDefaultResamples;
};

struct RunConfig {
  struct Entry {
    std::string value;
    std::size_t line = 0;  // 0: default or flag
  };
  std::map<std::string, Entry> values;  // "section.key"

  std::uint64_t seed = 0;
  std::filesystem::path out;
  std::filesystem::path checkpoint;
  EncoderConfig model;
  TrainConfig train;
  DataConfig data;
  UncertaintyConfig uncertainty;
  ActiveConfig active;
  std::size_t trials = 1;
};

// `key = value` lines, `#` comments, `[section]` headers. Overrides use the
// same "section.key" names and win over the file. Unknown keys and malformed
// values throw ParseError naming the key and line; out-of-range values throw
// ContractError.
RunConfig parse_config(const std::optional<std::filesystem::path>& path,
                       const std::map<std::string, std::string>& overrides = {});
RunConfig parse_config_text(const std::string& text,
                            const std::map<std::string, std::string>& overrides = {});

// Every known key with its resolved value; parses back to the same RunConfig.
std::string resolved_config_text(const RunConfig& config);

// Subcommands gen-data, train, eval, predict, active. Returns the exit code:
// 0 success, 1 contract/input error, 2 usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bayesformer
