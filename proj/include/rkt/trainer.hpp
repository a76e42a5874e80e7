#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rkt/data.hpp"
#include "rkt/model.hpp"

namespace rkt {

struct TrainConfig {
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  std::vector<std::size_t> milestones = {20, 30};
  double decay = 0.1;
  std::uint64_t seed = 0;

  /// lr > 0, batch_size > 0, milestones strictly increasing and < epochs.
  void validate() const;
  double lr_at(std::size_t epoch) const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double clean_acc = 0.0;
  std::optional<double> asr;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  /// epoch,loss,clean_acc,asr (asr left empty when not monitored)
  std::string to_csv() const;
};

/// Optional held-out sets evaluated after every epoch. Without a clean set,
/// clean_acc is the running training accuracy of that epoch.
struct TrainMonitor {
  const Dataset* clean = nullptr;
  const Dataset* triggered = nullptr;
  std::size_t target = 0;
};

class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, Model last_finite, std::size_t epoch)
      : NumericError(what), last_finite_(std::move(last_finite)), epoch_(epoch) {}
  const Model& last_finite() const { return last_finite_; }
  std::size_t epoch() const { return epoch_; }

 private:
  Model last_finite_;
  std::size_t epoch_;
};

struct TrainResult {
  Model model;
  TrainHistory history;
};

/// Minibatch SGD with momentum on softmax cross-entropy. Deterministic in
/// (model, data, cfg); returned parameters lie on the float32 storage grid.
/// Throws DivergenceError carrying the last finite model if the loss stops
/// being finite.
TrainResult train(const Model& model, const Dataset& data, const TrainConfig& cfg, const TrainMonitor& monitor = {});

/// Index of the last conv2d layer.
std::size_t last_conv_layer(const Model& model);

/// Retrains only the last conv layer on x and x~ of every cleansed pair,
/// both labelled y. cfg.epochs passes over the set.
Model fine_tune_last(const Model& model, std::span<const SamplePair> cleansed, const TrainConfig& cfg);

/// Mean softmax cross-entropy and accuracy of `model` on `data`.
std::pair<double, double> evaluate_loss(const Model& model, const Dataset& data);

}  // namespace rkt
