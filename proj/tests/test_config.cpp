#include <gtest/gtest.h>

#include <set>

#include "rkt/config.hpp"

using namespace rkt;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultRoundTrip) {
  const ExperimentConfig c;
  EXPECT_EQ(parse_config(serialize_config(c)), c);
  EXPECT_EQ(serialize_config(parse_config(serialize_config(c))), serialize_config(c));
}

TEST(Config, NonDefaultRoundTrip) {
  ExperimentConfig c;
  c.seed = 42;
  c.out = "runs/a";
  c.data.distractor = 0.35;
  c.corruption_kind = CorruptionKind::spurious;
  c.location = Location::TL;
  c.train.milestones = {3, 7};
  c.train.epochs = 9;
  c.edit.lr = 3.3e-5;
  c.edit.direction = DirectionMode::zca;
  c.score.mode = RemapMode::zca;
  c.score.path = IgPath::input;
  c.budget.epsilon = 0.1;
  c.pairs = 7;
  const ExperimentConfig back = parse_config(serialize_config(c));
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.edit.lr, 3.3e-5);
  EXPECT_EQ(back.train.milestones, (std::vector<std::size_t>{3, 7}));
}

TEST(Config, ShortestDecimalForm) {
  ExperimentConfig c;
  c.visibility = 0.05;
  EXPECT_NE(serialize_config(c).find("corruption.visibility = 0.05\n"), std::string::npos);
}

TEST(Config, CommentsAndBlankLines) {
  const ExperimentConfig c = parse_config("# header\n\nrun.seed = 9   # inline\n  data.noise=0.1\n");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.data.noise, 0.1);
}

TEST(Config, RejectsUnknownKeyWithLine) {
  const std::string e = error_of("run.seed = 1\nrun.sede = 2\n");
  EXPECT_NE(e.find("line 2"), std::string::npos) << e;
  EXPECT_NE(e.find("run.sede"), std::string::npos) << e;
}

TEST(Config, RejectsDuplicatesAndBadValues) {
  EXPECT_NE(error_of("run.seed = 1\nrun.seed = 2\n").find("duplicate"), std::string::npos);
  EXPECT_NE(error_of("edit.lr = fast\n").find("edit.lr"), std::string::npos);
  EXPECT_NE(error_of("corruption.location = middle\n").find("line 1"), std::string::npos);
  EXPECT_NE(error_of("run.seed 1\n").find("section.key = value"), std::string::npos);
  EXPECT_FALSE(error_of("train.milestones = 5,x\n").empty());
}

TEST(Config, ValidateNamesKey) {
  ExperimentConfig c;
  c.train.milestones = {50};
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train"), std::string::npos) << e.what();
  }
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* name : {"default", "trojan", "spurious", "leakage"}) {
    const auto path = std::filesystem::path(RKT_SOURCE_DIR) / "configs" / (std::string(name) + ".cfg");
    ExperimentConfig c;
    ASSERT_NO_THROW(c = load_config(path)) << name;
    EXPECT_NO_THROW(c.validate()) << name;
  }
  EXPECT_THROW(load_config("/nonexistent/x.cfg"), ConfigError);
}

TEST(SubSeed, DeterministicAndDistinct) {
  EXPECT_EQ(sub_seed(1, "data"), sub_seed(1, "data"));
  std::set<std::uint64_t> seen;
  for (std::uint64_t s : {1, 2, 3})
    for (const char* n : {"data", "corruption", "training", "init"}) seen.insert(sub_seed(s, n));
  EXPECT_EQ(seen.size(), 12u);
}
