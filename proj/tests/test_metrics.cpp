#include <gtest/gtest.h>

#include "rkt/metrics.hpp"
#include "support/gradcheck.hpp"

using namespace rkt;

namespace {

// Three classes over a [1, 1, 2] input: class 0 wins when x0 > x1, class 1 otherwise.
Model two_pixel_model() {
  Tensor w({3, 2}, {1, -1, -1, 1, 0, 0});
  return testkit::linear_model({1, 1, 2}, w, Tensor({3}, {0, 0, -1}));
}

Dataset samples(const std::vector<std::pair<double, double>>& xs, std::size_t label) {
  Dataset ds;
  ds.classes = 3;
  for (auto [a, b] : xs) {
    ds.images.push_back(Tensor({1, 1, 2}, {a, b}));
    ds.labels.push_back(label);
  }
  return ds;
}

Model constant_model(const Tensor& bias) {
  return testkit::linear_model({1, 1, 2}, Tensor({bias.size(), 2}), bias);
}

SamplePair half_block_pair(const Tensor& x_tilde) {
  SamplePair p;
  p.x = x_tilde;
  p.x_tilde = x_tilde;
  p.y = 0;
  p.region = {0, 0, 2, 2};
  p.mask = Tensor(x_tilde.shape());
  for (std::size_t i = 0; i < 4; ++i) p.mask[i] = 1.0;
  return p;
}

}  // namespace

TEST(AttackSuccess, Counting) {
  const Model m = two_pixel_model();
  EXPECT_EQ(attack_success_rate(m, samples({{1, 0}, {2, 0}}, 1), 0), 1.0);
  EXPECT_EQ(attack_success_rate(m, samples({{0, 1}, {0, 2}}, 1), 0), 0.0);
  EXPECT_EQ(attack_success_rate(m, samples({{1, 0}, {2, 0}, {3, 1}, {0, 1}}, 2), 0), 0.75);
}

TEST(AttackSuccess, RejectsBadSets) {
  const Model m = two_pixel_model();
  EXPECT_THROW(attack_success_rate(m, Dataset{}, 0), std::invalid_argument);
  EXPECT_THROW(attack_success_rate(m, samples({{1, 0}}, 0), 0), std::invalid_argument);
}

TEST(FalseConfidence, UniformAndSaturated) {
  EXPECT_NEAR(false_confidence(constant_model(Tensor({3})), samples({{1, 0}, {0, 1}}, 1), 0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(false_confidence(constant_model(Tensor({4})), samples({{1, 0}}, 1), 2), 0.25, 1e-15);
  EXPECT_NEAR(false_confidence(constant_model(Tensor({3}, {50, 0, 0})), samples({{1, 0}}, 1), 0), 1.0, 1e-15);
}

TEST(Accuracy, CountsAgreement) {
  const Model m = two_pixel_model();
  Dataset ds = samples({{1, 0}, {2, 0}, {0, 1}}, 0);
  EXPECT_NEAR(accuracy(m, ds), 2.0 / 3.0, 1e-15);
  const SpuriousAccuracy sa = spurious_accuracy(m, samples({{0, 1}}, 0), samples({{1, 0}}, 0));
  EXPECT_EQ(sa.clean, 0.0);
  EXPECT_EQ(sa.spurious, 1.0);
  EXPECT_EQ(sa.gap(), 1.0);
  EXPECT_THROW(accuracy(m, Dataset{}), std::invalid_argument);
}

TEST(Leakage, ZeroAttributionInBlock) {
  // Weights vanish on the block (top half), so its attribution is exactly zero.
  Tensor w({2, 8}, {0, 0, 0, 0, 1, 1, 1, 1, 0, 0, 0, 0, -1, -1, -1, -1});
  const Model m = testkit::linear_model({1, 4, 2}, w, Tensor({2}));
  const SamplePair p = half_block_pair(Tensor({1, 4, 2}, 1.0));
  EXPECT_EQ(leakage_share(m, p), 0.0);
}

TEST(Leakage, UniformAttributionOverHalfTheImage) {
  const Model m = testkit::linear_model({1, 4, 2}, Tensor({2, 8}, 1.0), Tensor({2}));
  const SamplePair p = half_block_pair(Tensor({1, 4, 2}, 1.0));
  EXPECT_NEAR(leakage_share(m, p), 0.5, 1e-12);
  EXPECT_NEAR(leakage_ratio(m, std::vector<SamplePair>{p, p}), 0.5, 1e-12);
  SamplePair missing = p;
  missing.region = {};
  EXPECT_THROW(leakage_ratio(m, std::vector<SamplePair>{missing}), std::invalid_argument);
}

TEST(Pcc, IdentityNegationSymmetry) {
  const Tensor a({2, 3}, {0.1, 2, -1, 4, 0.5, 3});
  Tensor neg = a, b({2, 3}, {1, 0, 2, 3, -1, 5});
  for (double& v : neg.data()) v = -v;
  EXPECT_NEAR(pcc(a, a), 1.0, 1e-15);
  EXPECT_NEAR(pcc(a, neg), -1.0, 1e-15);
  EXPECT_EQ(pcc(a, b), pcc(b, a));
  EXPECT_EQ(pcc(a, Tensor({2, 3}, 7.0)), 0.0);
  EXPECT_THROW(pcc(a, Tensor({3})), ShapeError);
}

TEST(Report, CsvWithMissingCells) {
  MetricsReport r;
  r.overall_accuracy = 0.5;
  r.clean_set_accuracy = 0.25;
  r.spurious_set_accuracy = 0.75;
  EXPECT_EQ(MetricsReport::csv_header(),
            "label,overall_accuracy,attack_success_rate,false_confidence,clean_set_accuracy,spurious_set_accuracy,"
            "spurious_gap,leakage_ratio,pcc");
  EXPECT_EQ(r.csv_row("x"), "x,0.5,,,0.25,0.75,0.5,,");
  EXPECT_FALSE(MetricsReport{}.spurious_gap().has_value());
}
