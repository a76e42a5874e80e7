#include <gtest/gtest.h>

#include <json.hpp>

#include "rkt/rectifier.hpp"
#include "support/fixtures.hpp"

using namespace rkt;

namespace {

struct Trained {
  ExperimentConfig cfg = testkit::quick_trojan_config(11);
  ExperimentData data = prepare_experiment(cfg);
  Model model = testkit::cached_model(cfg, data);
  RectifyOptions opts = rectify_options(cfg);
  RectifyBudget budget = rectify_budget(cfg);
};

const Trained& setup() {
  static const Trained s;
  return s;
}

}  // namespace

TEST(Budget, Validation) {
  RectifyBudget b;
  EXPECT_NO_THROW(b.validate());
  b.epsilon = -0.1;
  EXPECT_THROW(b.validate(), std::invalid_argument);
  b = RectifyBudget{};
  b.max_rounds = 0;
  EXPECT_THROW(b.validate(), std::invalid_argument);
}

TEST(Rectify, CompliantModelIsReturnedUnchanged) {
  const Trained& s = setup();
  RectifyBudget b = s.budget;
  b.delta = 1e9;
  const RectifyResult r = rectify(s.model, s.data.pairs, s.data.test, s.data.reference, b, s.opts);
  EXPECT_TRUE(r.report.rounds.empty());
  EXPECT_EQ(r.report.termination, Termination::gap_met);
  EXPECT_EQ(r.model, s.model);
  EXPECT_EQ(r.model.parameter_digest(), s.model.parameter_digest());
}

TEST(Rectify, ZeroToleranceRejectsAccuracyLoss) {
  const Trained& s = setup();
  // Relabel the triggered set with the target: removing the trojan now costs accuracy.
  Dataset eval = *s.data.triggered;
  for (auto& y : eval.labels) y = s.cfg.target;
  RectifyBudget b = s.budget;
  b.epsilon = 0.0;
  b.delta = 0.0;
  const RectifyResult r = rectify(s.model, s.data.pairs, eval, s.data.reference, b, s.opts);
  EXPECT_EQ(r.report.termination, Termination::budget_exceeded);
  EXPECT_EQ(r.model, s.model);
  ASSERT_FALSE(r.report.rounds.empty());
  EXPECT_FALSE(r.report.rounds.back().accepted);
  EXPECT_GT(r.report.rounds.back().epsilon_star, 0.0);
}

TEST(Rectify, BudgetAndMonotoneGap) {
  const Trained& s = setup();
  const RectifyResult r = rectify(s.model, s.data.pairs, s.data.test, s.data.reference, s.budget, s.opts);
  EXPECT_LE(r.report.initial_accuracy - r.report.final_accuracy, s.budget.epsilon + 1e-12);
  EXPECT_LE(r.report.final_delta, r.report.initial_delta);
  EXPECT_LE(r.report.rounds.size(), s.budget.max_rounds);
  double gap = r.report.initial_delta;
  for (const auto& round : r.report.rounds) {
    if (!round.accepted) continue;
    EXPECT_LT(round.delta_star, gap);
    EXPECT_LE(round.epsilon_star, s.budget.epsilon);
    gap = round.delta_star;
    EXPECT_EQ(round.scores.size(), 4u);
  }
  EXPECT_EQ(r.report.final_digest, r.model.parameter_digest());
  EXPECT_EQ(r.report.mode, "dynamic");
}

TEST(Rectify, Deterministic) {
  const Trained& s = setup();
  const RectifyResult a = rectify(s.model, s.data.pairs, s.data.test, s.data.reference, s.budget, s.opts);
  const RectifyResult b = rectify(s.model, s.data.pairs, s.data.test, s.data.reference, s.budget, s.opts);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.report.to_json(), b.report.to_json());
}

TEST(StaticRectify, FixedLastLayer) {
  const Trained& s = setup();
  const RectifyResult r = static_rectify(s.model, s.data.pairs, s.data.test, s.data.reference, s.budget, s.opts);
  EXPECT_EQ(r.report.mode, "static");
  for (const auto& round : r.report.rounds) {
    EXPECT_EQ(round.layer, 9u);
    EXPECT_TRUE(round.scores.empty());
  }
}

TEST(StaticRectify, MatchesDynamicWithOneEditableLayer) {
  const Trained& s = setup();
  Model one = s.model;
  one.set_editable_layers({9});
  const RectifyResult d = rectify(one, s.data.pairs, s.data.test, s.data.reference, s.budget, s.opts);
  const RectifyResult st = static_rectify(one, s.data.pairs, s.data.test, s.data.reference, s.budget, s.opts);
  EXPECT_EQ(d.model, st.model);
  EXPECT_EQ(d.report.termination, st.report.termination);
  EXPECT_EQ(d.report.rounds.size(), st.report.rounds.size());
}

TEST(Report, JsonAndCsv) {
  const Trained& s = setup();
  const RectifyResult r = rectify(s.model, s.data.pairs, s.data.test, s.data.reference, s.budget, s.opts);
  const auto j = nlohmann::json::parse(r.report.to_json());
  EXPECT_EQ(j.at("termination").get<std::string>(), to_string(r.report.termination));
  EXPECT_EQ(j.at("rounds").size(), r.report.rounds.size());
  const std::string csv = r.report.rounds_csv();
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), r.report.rounds.size() + 1);
  EXPECT_EQ(to_string(Termination::gap_met), "gap-met");
  EXPECT_EQ(to_string(Termination::budget_exceeded), "budget-exceeded");
}

TEST(Rectify, RejectsEmptyInputs) {
  const Trained& s = setup();
  EXPECT_THROW(rectify(s.model, std::span<const SamplePair>{}, s.data.test, s.data.reference, s.budget, s.opts),
               std::invalid_argument);
}
