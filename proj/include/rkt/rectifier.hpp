#pragma once

#include <span>
#include <string>
#include <vector>

#include "rkt/localizer.hpp"

namespace rkt {

struct RectifyBudget {
  double epsilon = 0.03;  // tolerated accuracy drop, as a fraction
  double delta = 0.1;     // target mean head gap
  std::size_t steps = 200;
  std::size_t max_rounds = 8;

  void validate() const;
};

enum class Termination { gap_met, budget_exceeded, rounds_exhausted, edit_failed };
std::string to_string(Termination t);

struct RoundRecord {
  std::size_t round = 0;
  std::size_t layer = 0;
  double delta_star = 0.0;    // candidate mean head gap
  double epsilon_star = 0.0;  // accuracy drop of the candidate vs the original model
  bool accepted = false;
  double loss_before = 0.0;
  double loss_after = 0.0;
  std::vector<double> scores;  // per editable layer; empty in static mode
  std::string message;
};

struct RectifyReport {
  std::string mode;
  std::vector<RoundRecord> rounds;
  Termination termination = Termination::rounds_exhausted;
  double initial_delta = 0.0;
  double final_delta = 0.0;
  double initial_accuracy = 0.0;
  double final_accuracy = 0.0;
  std::vector<std::size_t> editable_layers;
  std::string final_digest;

  std::size_t accepted_rounds() const;
  std::string to_json() const;
  /// round,layer,delta_star,epsilon_star,accepted,loss_before,loss_after
  std::string rounds_csv() const;
};

struct RectifyOptions {
  ScoreConfig score;
  EditConfig edit;  // edit.steps is replaced by budget.steps
};

struct RectifyResult {
  Model model;
  RectifyReport report;
};

/// Budgeted loop: each round locates a layer on the current model, edits it
/// with statistics recomputed on `reference`, and accepts the candidate only
/// when its accuracy drop against the original model on `eval_set` stays
/// within epsilon and the mean head gap (heads fixed on the original model)
/// decreases.
RectifyResult rectify(const Model& model, std::span<const SamplePair> pairs, const Dataset& eval_set,
                      std::span<const Tensor> reference, const RectifyBudget& budget, const RectifyOptions& opts = {});

/// Same loop with the layer fixed to the last editable layer.
RectifyResult static_rectify(const Model& model, std::span<const SamplePair> pairs, const Dataset& eval_set,
                             std::span<const Tensor> reference, const RectifyBudget& budget,
                             const RectifyOptions& opts = {});

}  // namespace rkt
