#pragma once

#include <optional>
#include <span>
#include <string>

#include "rkt/attribution.hpp"
#include "rkt/data.hpp"
#include "rkt/model.hpp"

namespace rkt {

/// Logits of every sample, [N, classes], evaluated in batches.
Tensor batch_logits(const Model& model, std::span<const Tensor> samples, std::size_t batch_size = 128);

/// Fraction of samples predicted as their label. Throws on an empty set.
double accuracy(const Model& model, const Dataset& ds);

/// Fraction of triggered samples classified as `target`. Throws on an empty
/// set or when a sample is labelled `target`.
double attack_success_rate(const Model& model, const Dataset& triggered, std::size_t target);

/// Mean softmax probability of `target` over the triggered set.
double false_confidence(const Model& model, const Dataset& triggered, std::size_t target);

struct SpuriousAccuracy {
  double clean = 0.0;
  double spurious = 0.0;
  double gap() const { return spurious - clean; }
};

SpuriousAccuracy spurious_accuracy(const Model& model, const Dataset& clean_set, const Dataset& spurious_set);

/// Share of |input attribution| that falls inside the null block, for one
/// leakage sample (x_tilde), with an all-zeros baseline and the true-label
/// logit as head. Returns 0 for an all-zero attribution.
double leakage_share(const Model& model, const SamplePair& sample, std::size_t n_steps = 64);

/// Mean leakage_share over the samples. Throws when a sample has no region.
double leakage_ratio(const Model& model, std::span<const SamplePair> samples, std::size_t n_steps = 64);

/// Pearson correlation of two flattened maps; 0 when either is constant.
double pcc(const Tensor& a, const Tensor& b);

struct MetricsReport {
  std::optional<double> overall_accuracy;
  std::optional<double> attack_success_rate;
  std::optional<double> false_confidence;
  std::optional<double> clean_set_accuracy;
  std::optional<double> spurious_set_accuracy;
  std::optional<double> leakage_ratio;
  std::optional<double> pcc;

  std::optional<double> spurious_gap() const;
  /// Fixed column order of csv_row(); missing values are empty cells.
  static std::string csv_header();
  std::string csv_row(const std::string& label) const;
};

}  // namespace rkt
