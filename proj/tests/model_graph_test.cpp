#include <gtest/gtest.h>

#include <random>

#include "nanolens/model.hpp"
#include "test_support.hpp"

namespace nanolens {
namespace {

using test::random_tensor;

TEST(BuildAutoencoder, DefaultBottleneckIsEightByEightByEight) {
  const auto m = build_autoencoder<float>(AutoencoderConfig{});
  const auto shapes = propagate_shapes(m);
  EXPECT_EQ(m.layers.size(), 13u);
  EXPECT_EQ(m.encoder_len, 6u);
  EXPECT_EQ(shapes[m.encoder_len - 1], (Shape{1, 8, 8, 8}));
  EXPECT_EQ(shapes[m.encoder_len - 1].sample(), 512u);
  EXPECT_EQ(shapes.back(), (Shape{1, 1, 64, 64}));
  EXPECT_EQ(m.layers.back().activation, Activation::kSigmoid);
  EXPECT_EQ(m.layers[m.encoder_len - 1].kind, LayerKind::kMaxPool2x2);
}

TEST(BuildAutoencoder, SingleStageHalvesOnce) {
  AutoencoderConfig cfg;
  cfg.input_size = 2;
  cfg.channel_schedule = {1};
  const auto m = build_autoencoder<float>(cfg);
  EXPECT_EQ(propagate_shapes(m)[m.encoder_len - 1], (Shape{1, 1, 1, 1}));
}

TEST(BuildAutoencoder, RejectsIndivisibleInput) {
  AutoencoderConfig cfg;
  cfg.input_size = 63;
  EXPECT_THROW(build_autoencoder<float>(cfg), ConfigError);
  cfg.input_size = 64;
  cfg.channel_schedule.clear();
  EXPECT_THROW(build_autoencoder<float>(cfg), ConfigError);
}

TEST(BuildAutoencoder, LatentSizeFollowsSchedule) {
  AutoencoderConfig cfg;
  cfg.input_size = 32;
  cfg.channel_schedule = {8, 4};
  const auto m = build_autoencoder<float>(cfg);
  EXPECT_EQ(propagate_shapes(m)[m.encoder_len - 1], (Shape{1, 4, 8, 8}));
}

std::size_t closed_form_classifier_params(const ClassifierConfig& cfg) {
  // k^2 * c_in * c_out + c_out per conv, plus two dense layers
  std::size_t total = 0;
  std::size_t c_in = cfg.input_channels;
  for (std::size_t c : cfg.conv_channels) {
    total += cfg.kernel_size * cfg.kernel_size * c_in * c + c;
    c_in = c;
  }
  const std::size_t side = cfg.input_size >> cfg.conv_channels.size();
  const std::size_t features = c_in * side * side;
  total += features * cfg.hidden_units + cfg.hidden_units;
  total += cfg.hidden_units * cfg.num_classes + cfg.num_classes;
  return total;
}

TEST(BuildClassifier, DefaultsMatchClosedFormParameterCount) {
  ClassifierConfig cfg;
  const auto m = build_classifier<float>(cfg);
  EXPECT_EQ(m.layers.back().units, 2u);
  EXPECT_EQ(m.layers.size(), 9u);
  EXPECT_EQ(m.param_count(), closed_form_classifier_params(cfg));
  EXPECT_EQ(m.param_count(), 285634u);
  EXPECT_EQ(propagate_shapes(m).back(), (Shape{1, 2, 1, 1}));
}

TEST(BuildClassifier, RejectsDegenerateConfigs) {
  ClassifierConfig cfg;
  cfg.num_classes = 1;
  EXPECT_THROW(build_classifier<float>(cfg), ConfigError);
  cfg.num_classes = 3;
  cfg.input_size = 36;
  EXPECT_THROW(build_classifier<float>(cfg), ConfigError);
}

TEST(Init, GlorotBoundsAndZeroBias) {
  const auto m = build_classifier<double>(ClassifierConfig{});
  for (const auto& l : m.layers) {
    if (!l.has_params()) continue;
    const Shape ws = l.weight.shape();
    const double limit = std::sqrt(6.0 / static_cast<double>((ws.c + ws.n) * ws.h * ws.w));
    for (double w : l.weight.data()) EXPECT_LE(std::abs(w), limit);
    for (double b : l.bias) EXPECT_EQ(b, 0.0);
  }
}

TEST(Init, SeedDeterminesWeights) {
  AutoencoderConfig a, b;
  a.seed = b.seed = 11;
  EXPECT_EQ(build_autoencoder<float>(a), build_autoencoder<float>(b));
  b.seed = 12;
  EXPECT_NE(build_autoencoder<float>(a), build_autoencoder<float>(b));
}

TEST(Truncate, DepthRangeIsValidated) {
  const auto ae = build_autoencoder<float>(AutoencoderConfig{});
  EXPECT_THROW(truncate(ae, 0), RangeError);
  EXPECT_THROW(truncate(ae, ae.encoder_len + 1), RangeError);
  try {
    truncate(ae, 99);
  } catch (const RangeError& e) {
    EXPECT_NE(std::string(e.what()).find("[1, 6]"), std::string::npos) << e.what();
  }
  const auto cls = build_classifier<float>(ClassifierConfig{});
  EXPECT_NO_THROW(truncate(cls, cls.layers.size()));
  EXPECT_THROW(truncate(cls, cls.layers.size() + 1), RangeError);
}

TEST(Truncate, EncoderDepthYieldsLatent) {
  const auto ae = build_autoencoder<float>(AutoencoderConfig{});
  const auto enc = truncate(ae, ae.encoder_len);
  EXPECT_EQ(propagate_shapes(enc).back(), (Shape{1, 8, 8, 8}));
}

TEST(Truncate, EveryDepthMatchesFullForwardBitwise) {
  std::mt19937_64 rng(21);
  AutoencoderConfig ac;
  ac.input_size = 32;
  ac.seed = 3;
  ClassifierConfig cc;
  cc.input_size = 32;
  cc.seed = 4;
  for (const auto& model : {build_autoencoder<float>(ac), build_classifier<float>(cc)}) {
    const auto x = random_tensor<float>(model.input_shape.batch(2), rng, 0.0, 1.0);
    const auto acts = forward_model(model, x);
    ASSERT_EQ(acts.size(), model.layers.size());
    for (std::size_t d = 1; d <= model.max_depth(); ++d) {
      EXPECT_EQ(forward_model(truncate(model, d), x).back(), acts[d - 1]) << "depth " << d;
    }
  }
}

TEST(ForwardModel, FullClassifierTruncationIsNoOp) {
  std::mt19937_64 rng(22);
  ClassifierConfig cc;
  cc.input_size = 16;
  const auto m = build_classifier<float>(cc);
  const auto x = random_tensor<float>(m.input_shape.batch(1), rng, 0.0, 1.0);
  EXPECT_EQ(forward_model(truncate(m, m.layers.size()), x).back(), forward_model(m, x).back());
}

TEST(ForwardModel, UntrainedAutoencoderIsFiniteAndInSigmoidRange) {
  std::mt19937_64 rng(23);
  const auto m = build_autoencoder<float>(AutoencoderConfig{});
  const auto x = random_tensor<float>(m.input_shape.batch(2), rng, -5.0, 5.0);
  const auto acts = forward_model(m, x);
  for (const auto& a : acts) EXPECT_TRUE(a.all_finite());
  for (float v : acts.back().data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(ForwardModel, ShapePropagationAgreesWithExecution) {
  std::mt19937_64 rng(24);
  ClassifierConfig cc;
  cc.input_size = 32;
  cc.num_classes = 5;
  AutoencoderConfig ac;
  ac.input_size = 16;
  ac.channel_schedule = {4, 2};
  for (const auto& model : {build_autoencoder<float>(ac), build_classifier<float>(cc)}) {
    const auto shapes = propagate_shapes(model);
    const auto acts = forward_model(model, random_tensor<float>(model.input_shape.batch(1), rng));
    for (std::size_t i = 0; i < shapes.size(); ++i) EXPECT_EQ(acts[i].shape(), shapes[i]);
  }
}

TEST(ForwardModel, RejectsWrongInputShape) {
  const auto m = build_autoencoder<float>(AutoencoderConfig{});
  EXPECT_THROW(forward_model(m, Tensor<float>(Shape{1, 1, 32, 32})), ShapeError);
}

TEST(BackwardModel, MatchesChainOfLayerBackwards) {
  std::mt19937_64 rng(25);
  AutoencoderConfig ac;
  ac.input_size = 8;
  ac.channel_schedule = {3};
  const auto m = build_autoencoder<double>(ac);
  const auto x = random_tensor<double>(m.input_shape.batch(2), rng);
  const auto caches = forward_train(m, x);
  const auto g = random_tensor<double>(caches.back().output.shape(), rng);
  const auto grads = backward_model(m, caches, g);
  EXPECT_EQ(grads.grad_input.shape(), x.shape());
  EXPECT_EQ(grads.layers[0].grad_weight.shape(), m.layers[0].weight.shape());
  EXPECT_TRUE(grads.layers[1].grad_weight.empty());
}

}  // namespace
}  // namespace nanolens
