#include <gtest/gtest.h>

#include "rkt/model.hpp"
#include "support/gradcheck.hpp"

using namespace rkt;

TEST(Model, ZeroFinalLayerWithBiasPredictsBiasArgmax) {
  Model m = Model::small_cnn({1, 16, 16}, 3, 5);
  Layer& last = m.mutable_layer(m.depth());
  for (double& v : last.weight.data()) v = 0.0;
  last.bias = Tensor({3}, {0, 1, 0});
  std::mt19937_64 rng(5);
  for (int i = 0; i < 5; ++i) {
    Tensor x = testkit::random_batch(m.input_shape(), 1, rng).reshaped(m.input_shape());
    EXPECT_EQ(m.predict(x).label, 1u);
  }
}

TEST(Model, PredictIsDeterministicAndArgmax) {
  Model m = Model::small_cnn({1, 16, 16}, 4, 6);
  std::mt19937_64 rng(6);
  Tensor x = testkit::random_batch(m.input_shape(), 1, rng).reshaped(m.input_shape());
  Prediction a = m.predict(x), b = m.predict(x);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(a.logits.size(), 4u);
  auto it = std::max_element(a.logits.data().begin(), a.logits.data().end());
  EXPECT_EQ(a.label, static_cast<std::size_t>(it - a.logits.data().begin()));
}

TEST(Model, PredictRejectsWrongShape) { EXPECT_THROW(Model::small_cnn({1, 16, 16}, 4, 0).predict(Tensor({1, 8, 8})), ShapeError); }

TEST(Model, SmallCnnEditableLayers) {
  Model m = Model::small_cnn({1, 16, 16}, 4, 0);
  EXPECT_EQ(m.editable_layers(), (std::vector<std::size_t>{1, 3, 6, 9}));
  EXPECT_EQ(m.activation_shape(9), (Shape{4}));
}

TEST(Model, EditableListValidation) {
  Model m = Model::small_cnn({1, 16, 16}, 4, 0);
  EXPECT_THROW(m.set_editable_layers({3, 1}), std::invalid_argument);
  EXPECT_THROW(m.set_editable_layers({2}), std::invalid_argument);
  m.set_editable_layers({6, 9});
  EXPECT_FALSE(m.is_editable(1));
}

TEST(Model, ShapeChainIsChecked) {
  LayerSpec d = LayerSpec::dense(3, 2);
  std::vector<Layer> layers = {Layer{d, Tensor(d.weight_shape()), Tensor(d.bias_shape())}};
  EXPECT_THROW(Model({4}, layers, 2), ShapeError);
  EXPECT_THROW(Model({3}, layers, 5), ShapeError);
}

TEST(Capture, FirstLayerInputIsSample) {
  Model m = Model::small_cnn({1, 16, 16}, 4, 7);
  std::mt19937_64 rng(7);
  Tensor x = testkit::random_batch(m.input_shape(), 1, rng).reshaped(m.input_shape());
  EXPECT_EQ(m.capture(x, 1).input_features, x);
  EXPECT_THROW(m.capture(x, 2), std::invalid_argument);
}

TEST(Capture, IdentityDenseInputEqualsOutput) {
  LayerSpec d = LayerSpec::dense(3, 3);
  Layer id{d, Tensor(d.weight_shape(), {1, 0, 0, 0, 1, 0, 0, 0, 1}), Tensor(d.bias_shape())};
  Model m({3}, {id}, 3);
  Capture c = m.capture(Tensor({3}, {0.5, -1, 2}), 1);
  EXPECT_EQ(c.input_features, c.output_features);
}

TEST(Capture, MatchesTapedForwardBitExactly) {
  Model m = Model::small_cnn({1, 16, 16}, 4, 8);
  std::mt19937_64 rng(8);
  Tensor x = testkit::random_batch(m.input_shape(), 1, rng).reshaped(m.input_shape());
  Tape tape;
  m.forward(batch_of_one(x), &tape);
  for (std::size_t l : m.editable_layers()) {
    Capture c = m.capture(x, l);
    EXPECT_EQ(c.input_features.storage(), tape.activation(l - 1).storage()) << "layer " << l;
    EXPECT_EQ(c.output_features.storage(), tape.activation(l).storage()) << "layer " << l;
  }
}

TEST(Model, BatchedForwardMatchesPerSample) {
  Model m = Model::small_cnn({1, 16, 16}, 4, 9);
  std::mt19937_64 rng(9);
  Tensor batch = testkit::random_batch(m.input_shape(), 5, rng);
  Tensor out = m.forward(batch);
  for (std::size_t b = 0; b < 5; ++b) {
    Tensor single = m.forward(batch_of_one(batch.slice(b)));
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out[b * 4 + c], single[c], 1e-12);
  }
}

TEST(Model, WithLayerChangesOnlyThatLayer) {
  Model m = Model::small_cnn({1, 16, 16}, 4, 10);
  Layer l6 = m.layer(6);
  l6.weight[0] += 1.0;
  Model e = m.with_layer(6, l6);
  for (std::size_t l = 1; l <= m.depth(); ++l)
    if (l != 6 && m.layer(l).spec.parameterized()) EXPECT_EQ(m.layer(l).weight, e.layer(l).weight);
  EXPECT_NE(m.parameter_digest(), e.parameter_digest());
}

TEST(Model, RoundToStorageIsIdempotent) {
  Model m = Model::small_cnn({1, 16, 16}, 4, 12);
  Model r = round_to_storage(m);
  EXPECT_EQ(r, m);  // small_cnn initializes on the float32 grid
  EXPECT_EQ(round_to_storage(r), r);
}
