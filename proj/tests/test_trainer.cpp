#include <gtest/gtest.h>

#include <random>

#include "rkt/metrics.hpp"
#include "rkt/trainer.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace rkt;

namespace {

// Two classes split by which half of a 4x4 image is bright.
Dataset halves(std::size_t per_class, std::uint64_t seed) {
  Dataset ds;
  ds.classes = 2;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 0.3);
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    Tensor img({1, 4, 4});
    const std::size_t y = i % 2;
    for (std::size_t k = 0; k < 16; ++k) img[k] = u(rng) + ((k < 8) == (y == 0) ? 0.7 : 0.0);
    ds.images.push_back(img);
    ds.labels.push_back(y);
  }
  return ds;
}

Model linear_2x16(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.1);
  Tensor w({2, 16});
  for (double& v : w.data()) v = g(rng);
  return testkit::linear_model({1, 4, 4}, w, Tensor({2}));
}

TrainConfig short_run(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.milestones = {};
  c.seed = 3;
  return c;
}

}  // namespace

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.milestones = {30, 20};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.milestones = {40};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(TrainConfig, StepSchedule) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(c.lr_at(0), 0.05);
  EXPECT_DOUBLE_EQ(c.lr_at(19), 0.05);
  EXPECT_NEAR(c.lr_at(20), 0.005, 1e-15);
  EXPECT_NEAR(c.lr_at(35), 0.0005, 1e-15);
}

TEST(Train, ZeroEpochsLeavesParameters) {
  const Model m = linear_2x16(1);
  const TrainResult r = train(m, halves(20, 1), short_run(0));
  EXPECT_EQ(r.model, m);
  EXPECT_TRUE(r.history.epochs.empty());
}

TEST(Train, SeparableToySetIsLearned) {
  const Dataset ds = halves(50, 2);
  const TrainResult r = train(linear_2x16(2), ds, short_run(20));
  EXPECT_GE(accuracy(r.model, ds), 0.99);
  ASSERT_EQ(r.history.epochs.size(), 20u);
  EXPECT_LT(r.history.epochs.back().loss, r.history.epochs.front().loss);
}

TEST(Train, Reproducible) {
  const Dataset ds = halves(30, 4);
  const TrainResult a = train(linear_2x16(4), ds, short_run(5)), b = train(linear_2x16(4), ds, short_run(5));
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.history.to_csv(), b.history.to_csv());
}

TEST(Train, ParametersOnStorageGrid) {
  const TrainResult r = train(linear_2x16(5), halves(20, 5), short_run(3));
  EXPECT_EQ(r.model, round_to_storage(r.model));
}

TEST(Train, DivergenceReportsLastFiniteModel) {
  // Huge inputs: the first update makes the next logits overflow.
  Dataset ds = halves(30, 6);
  for (auto& img : ds.images)
    for (double& v : img.data()) v *= 1e200;
  TrainConfig c = short_run(3);
  c.batch_size = 4;
  try {
    train(linear_2x16(6), ds, c);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    for (const auto& layer : e.last_finite().layers())
      for (double v : layer.weight.data()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Train, HistoryCsvHeader) {
  const TrainResult r = train(linear_2x16(7), halves(10, 7), short_run(2));
  EXPECT_EQ(r.history.to_csv().substr(0, r.history.to_csv().find('\n')), "epoch,loss,clean_acc,asr");
}

TEST(FineTune, ZeroEpochsUnchanged) {
  const Model m = round_to_storage(Model::small_cnn({1, 16, 16}, 4, 8));
  const Dataset ds = generate(DataSpec{4, 5}, 8);
  CorruptionSpec s;
  s.target = 0;
  std::vector<SamplePair> pairs = {make_pair(ds.images[1], ds.labels[1], s)};
  TrainConfig c = short_run(0);
  EXPECT_EQ(fine_tune_last(m, pairs, c), m);
}

TEST(FineTune, OnlyLastConvChanges) {
  const Model m = round_to_storage(Model::small_cnn({1, 16, 16}, 4, 9));
  const Dataset ds = generate(DataSpec{4, 5}, 9);
  CorruptionSpec s;
  s.target = 0;
  std::vector<SamplePair> pairs = {make_pair(ds.images[1], ds.labels[1], s)};
  const Model ft = fine_tune_last(m, pairs, short_run(3));
  EXPECT_EQ(last_conv_layer(m), 6u);
  for (std::size_t l = 1; l <= m.depth(); ++l)
    if (l != 6) EXPECT_EQ(ft.layer(l).weight, m.layer(l).weight) << "layer " << l;
  EXPECT_NE(ft.layer(6).weight, m.layer(6).weight);
}

TEST(EndToEnd, TrojanModelIsAccurateAndBackdoored) {
  const ExperimentConfig cfg = testkit::trojan_config(1);
  const ExperimentData data = prepare_experiment(cfg);
  const Model m = testkit::cached_model(cfg, data);
  EXPECT_GE(accuracy(m, data.test), 0.90);
  EXPECT_GE(attack_success_rate(m, *data.triggered, cfg.target), 0.90);
}
