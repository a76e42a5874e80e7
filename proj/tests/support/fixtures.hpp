#pragma once

// Trained-model cache shared by the test binaries. Models are keyed by the
// serialized experiment config, so a cached file is exactly what training
// that config would produce.

#include <filesystem>
#include <functional>
#include <string>
#include <unistd.h>

#include "rkt/checkpoint.hpp"
#include "rkt/pipeline.hpp"

namespace rkt::testkit {

inline std::filesystem::path fixture_dir() { return RKT_FIXTURE_DIR; }

inline ExperimentConfig trojan_config(std::uint64_t seed) {
  ExperimentConfig c;
  c.seed = seed;
  c.data.distractor = 0.0;
  c.rate = 0.03;
  return c;
}

inline ExperimentConfig spurious_config(std::uint64_t seed) {
  ExperimentConfig c;
  c.seed = seed;
  c.data.distractor = 0.6;
  c.corruption_kind = CorruptionKind::spurious;
  c.pattern = PatternKind::stripe;
  c.location = Location::TL;
  c.rate = 0.5;
  c.budget.epsilon = 0.07;
  c.pairs = 20;
  return c;
}

inline ExperimentConfig leakage_config(std::uint64_t seed) {
  ExperimentConfig c;
  c.seed = seed;
  c.data.distractor = 0.2;
  c.corruption_kind = CorruptionKind::leakage;
  c.rate = 1.0;
  c.budget.delta = 0.0;
  c.pairs = 5;
  return c;
}

/// Small, fast setup for unit tests.
inline ExperimentConfig quick_trojan_config(std::uint64_t seed) {
  ExperimentConfig c = trojan_config(seed);
  c.data.per_class = 100;
  c.train.epochs = 12;
  c.train.milestones = {8, 10};
  c.rate = 0.05;
  return c;
}

inline Model cached_model(const ExperimentConfig& cfg, const ExperimentData& data) {
  ExperimentConfig key = cfg;
  key.out = "";
  const std::string name = "model-" + std::to_string(std::hash<std::string>{}(serialize_config(key))) + ".rkt";
  const auto path = fixture_dir() / name;
  if (std::filesystem::exists(path)) return load_checkpoint(path).model;
  std::filesystem::create_directories(fixture_dir());
  const Model m = train_experiment_model(cfg, data).model;
  const auto tmp = fixture_dir() / (name + "." + std::to_string(::getpid()) + ".tmp");
  save_checkpoint(tmp, m, experiment_metadata(cfg, "fixture"));
  std::filesystem::rename(tmp, path);
  return load_checkpoint(path).model;
}

}  // namespace rkt::testkit
