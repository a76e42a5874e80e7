#pragma once

#include <optional>
#include <vector>

#include "rkt/checkpoint.hpp"
#include "rkt/config.hpp"
#include "rkt/metrics.hpp"

namespace rkt {

/// Every dataset an experiment needs, derived deterministically from the config.
struct ExperimentData {
  Dataset clean_train;            // before corruption
  Corrupted train;                // training set the model sees
  Dataset test;                   // evaluation set for accuracy
  std::vector<SamplePair> pairs;  // cleansed pairs used for editing
  std::vector<Tensor> reference;  // samples for key statistics
  std::optional<Dataset> triggered;                         // trojan
  std::optional<std::pair<Dataset, Dataset>> spurious_sets; // spurious: clean, patched
  std::vector<SamplePair> leakage_eval;                     // leakage
};

/// trojan: pairs are the first test samples with y != target; spurious: the
/// first test samples of the affected class; leakage: the first corrupted
/// training pairs, with their clean counterparts as reference samples.
ExperimentData prepare_experiment(const ExperimentConfig& cfg);

/// Input shape of the experiment's images (leakage doubles the height).
Shape experiment_input_shape(const ExperimentConfig& cfg);

TrainResult train_experiment_model(const ExperimentConfig& cfg, const ExperimentData& data);

CheckpointMetadata experiment_metadata(const ExperimentConfig& cfg, const std::string& note);

/// Metrics that apply to the experiment's corruption kind.
MetricsReport evaluate_experiment(const Model& model, const ExperimentData& data, const ExperimentConfig& cfg,
                                  std::size_t ig_steps = 64);

RectifyOptions rectify_options(const ExperimentConfig& cfg);

/// Budget with T taken from edit.steps.
RectifyBudget rectify_budget(const ExperimentConfig& cfg);

}  // namespace rkt
