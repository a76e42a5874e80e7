#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "rkt/data.hpp"
#include "rkt/localizer.hpp"
#include "rkt/rectifier.hpp"
#include "rkt/trainer.hpp"

namespace rkt {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out = "out";

  DataSpec data;
  CorruptionKind corruption_kind = CorruptionKind::trojan;
  PatternKind pattern = PatternKind::glyph;
  double visibility = 0.5;
  Location location = Location::BR;
  double rate = 0.01;
  std::size_t target = 0;
  std::size_t affected_class = 0;

  TrainConfig train;
  EditConfig edit;
  ScoreConfig score;
  RectifyBudget budget;
  std::size_t pairs = 1;
  std::size_t reference_samples = 200;

  /// Corruption spec with the built-in pattern and a full mask.
  CorruptionSpec corruption() const;
  /// Throws ConfigError naming the offending key.
  void validate() const;
};

/// Parses `section.key = value` lines; '#' starts a comment. Unknown keys,
/// duplicate keys and malformed values are rejected with the line number.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Every key in a fixed order; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

/// Named sub-seed derived from the global seed ("data", "corruption",
/// "training", "editing", ...).
std::uint64_t sub_seed(std::uint64_t seed, const std::string& name);

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace rkt
