#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "doppel/error.hpp"
#include "doppel/model.hpp"
#include "doppel/random.hpp"
#include "test_util.hpp"

namespace doppel {
namespace {

using model::ArchConfig;
using model::Classifier;
using model::LossConfig;
using model::TrainConfig;

ArchConfig small_arch(raster::InputConfig channels = {}) {
  ArchConfig a;
  a.channels = channels;
  a.stem_channels = 8;
  a.widths = {8, 16, 16};
  return a;
}

nn::Tensor random_batch(int n, int c, int s, Rng& rng) {
  nn::Tensor x(n, c, s, s);
  for (float& v : x.data) v = static_cast<float>(rng.uniform());
  return x;
}

// Direct transcription of the closed form, used as the oracle.
double focal_reference(double p_true, bool positive, double alpha, double gamma) {
  const double pt = std::max(p_true, 1e-7);
  const double at = positive ? alpha : 1.0 - alpha;
  return -at * std::pow(1.0 - pt, gamma) * std::log(pt);
}

TEST(FocalLoss, HandComputedSingleSample) {
  const std::vector<double> probs{0.6};
  const std::vector<int> labels{1};
  EXPECT_NEAR(model::focal_loss(probs, labels), 0.5 * 0.16 * -std::log(0.6), 1e-12);
  EXPECT_NEAR(model::focal_loss(probs, labels), 0.040866, 1e-6);
  // Negative sample with p(positive) = 0.4 has p_t = 0.6 as well.
  EXPECT_NEAR(model::focal_loss(std::vector<double>{0.4}, std::vector<int>{0}), 0.040866, 1e-6);
}

TEST(FocalLoss, PerfectPredictionIsZero) {
  EXPECT_EQ(model::focal_loss(std::vector<double>{1.0, 0.0, 1.0}, std::vector<int>{1, 0, 1}), 0.0);
}

TEST(FocalLoss, GammaZeroIsHalfCrossEntropy) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> probs(17);
    std::vector<int> labels(17);
    double bce = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      probs[i] = rng.uniform(0.01, 0.99);
      labels[i] = rng.bernoulli(0.5) ? 1 : 0;
      bce += -(labels[i] ? std::log(probs[i]) : std::log(1.0 - probs[i]));
    }
    bce /= static_cast<double>(probs.size());
    EXPECT_NEAR(model::focal_loss(probs, labels, {0.5, 0.0}), 0.5 * bce, 1e-6);
  }
}

TEST(FocalLoss, ClampPreventsInfinity) {
  const double loss = model::focal_loss(std::vector<double>{0.0}, std::vector<int>{1});
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NEAR(loss, focal_reference(0.0, true, 0.5, 2.0), 1e-9);
}

TEST(FocalLoss, PermutationInvariant) {
  Rng rng(2);
  std::vector<double> probs(32);
  std::vector<int> labels(32);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    probs[i] = rng.uniform();
    labels[i] = rng.bernoulli(0.5) ? 1 : 0;
  }
  const double base = model::focal_loss(probs, labels, {0.3, 1.5});
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<double> p2;
  std::vector<int> l2;
  for (std::size_t i : order) {
    p2.push_back(probs[i]);
    l2.push_back(labels[i]);
  }
  EXPECT_NEAR(model::focal_loss(p2, l2, {0.3, 1.5}), base, 1e-12);
}

TEST(FocalLoss, LogitFormMatchesProbabilityForm) {
  Rng rng(3);
  std::vector<double> logits(20);
  std::vector<int> labels(10);
  std::vector<double> probs(10);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    logits[2 * i] = rng.normal() * 2;
    logits[2 * i + 1] = rng.normal() * 2;
    labels[i] = rng.bernoulli(0.5) ? 1 : 0;
    const double e0 = std::exp(logits[2 * i]), e1 = std::exp(logits[2 * i + 1]);
    probs[i] = e1 / (e0 + e1);
    EXPECT_NEAR(e0 / (e0 + e1) + probs[i], 1.0, 1e-12);
  }
  const LossConfig cfg{0.25, 2.0};
  EXPECT_NEAR(model::focal_loss_with_grad(logits, labels, cfg).loss,
              model::focal_loss(probs, labels, cfg), 1e-9);
}

TEST(FocalLoss, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  for (double gamma : {0.0, 1.0, 2.0, 3.5}) {
    const LossConfig cfg{rng.uniform(0.1, 0.9), gamma};
    std::vector<double> logits(16);
    std::vector<int> labels(8);
    for (double& z : logits) z = rng.normal() * 1.5;
    for (int& l : labels) l = rng.bernoulli(0.5) ? 1 : 0;
    const auto lg = model::focal_loss_with_grad(logits, labels, cfg);
    const double h = 1e-5;
    for (std::size_t k = 0; k < logits.size(); ++k) {
      std::vector<double> up = logits, down = logits;
      up[k] += h;
      down[k] -= h;
      const double numeric = (model::focal_loss_with_grad(up, labels, cfg).loss -
                              model::focal_loss_with_grad(down, labels, cfg).loss) /
                             (2 * h);
      const double denom = std::max(std::abs(numeric), 1e-8);
      EXPECT_LT(std::abs(lg.grad[k] - numeric) / denom, 1e-4) << "gamma " << gamma << " k " << k;
    }
  }
}

TEST(FocalLoss, ShapeErrors) {
  EXPECT_THROW(model::focal_loss(std::vector<double>{0.5}, std::vector<int>{}), Error);
  EXPECT_THROW(model::focal_loss_with_grad(std::vector<double>{0.5}, std::vector<int>{1}), Error);
}

TEST(LearningRate, Schedule) {
  const TrainConfig cfg;
  for (int e = 1; e <= 5; ++e) EXPECT_EQ(model::learning_rate(cfg, e), 5e-4);
  EXPECT_NEAR(model::learning_rate(cfg, 10), 5e-6, 1e-15);
  for (int e = 1; e < 10; ++e) EXPECT_GE(model::learning_rate(cfg, e), model::learning_rate(cfg, e + 1));
  // Linear between the anchors.
  EXPECT_NEAR(model::learning_rate(cfg, 6), 5e-4 + (5e-6 - 5e-4) * 0.2, 1e-15);
}

TEST(Classifier, DefaultArchitectureShape) {
  Classifier m;
  EXPECT_EQ(m.arch().in_channels(), 10);
  EXPECT_EQ(m.pooled_features(), 512);
  // Oracle: parameter count summed by hand from the layer list.
  // Convolutions carry no bias; the following normalization supplies the shift.
  auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k; };
  auto bn = [](std::size_t c) { return 2 * c; };
  std::size_t expected = conv(10, 64, 7) + bn(64);
  std::size_t in = 64;
  for (std::size_t out : {128u, 256u, 512u}) {
    expected += bn(in) + conv(in, out, 3) + bn(out) + conv(out, out, 3) + conv(in, out, 1);
    in = out;
  }
  expected += bn(512) + 512 * 2 + 2;
  EXPECT_EQ(m.num_parameters(), expected);
  EXPECT_EQ(m.num_parameters(), 4853122u);
  bool found_fc = false;
  for (const nn::ParamRef& p : m.parameters()) {
    if (p.name == "head.fc.weight") {
      found_fc = true;
      EXPECT_EQ(p.value->size(), 1024u);
    }
  }
  EXPECT_TRUE(found_fc);
}

TEST(Classifier, InitializationStatistics) {
  Classifier m(ArchConfig{}, 3);
  for (const nn::ParamRef& p : m.parameters()) {
    const std::vector<float>& w = *p.value;
    if (p.name == "stem.conv.weight") {
      // Kaiming fan-out: variance 2 / (64 * 7 * 7).
      double ss = 0.0;
      for (float v : w) ss += static_cast<double>(v) * v;
      EXPECT_NEAR(ss / static_cast<double>(w.size()), 2.0 / (64 * 49), 0.1 * 2.0 / (64 * 49));
    }
    if (p.name == "head.fc.weight") {
      const float bound = 1.0f / std::sqrt(512.0f);
      for (float v : w) EXPECT_LE(std::abs(v), bound);
    }
    if (p.name == "head.fc.bias") {
      for (float v : w) EXPECT_EQ(v, 0.0f);
    }
  }
}

TEST(Classifier, ForwardRangeAndSoftmax) {
  Rng rng(5);
  Classifier m(small_arch(), 1);
  const nn::Tensor x = random_batch(3, 10, 32, rng);
  const std::vector<float> z = m.logits(x);
  ASSERT_EQ(z.size(), 6u);
  const std::vector<double> p = m.forward(x);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(std::isfinite(p[i]));
    EXPECT_GE(p[i], 0.0);
    EXPECT_LE(p[i], 1.0);
    const double neg = model::positive_probability(z[2 * i + 1], z[2 * i]);
    EXPECT_NEAR(neg + p[i], 1.0, 1e-6);
  }
}

TEST(Classifier, EvalModeBatchInvariance) {
  Rng rng(6);
  Classifier m(small_arch(), 2);
  nn::Tensor x = random_batch(4, 10, 32, rng);
  std::copy(x.sample(0), x.sample(0) + x.sample_size(), x.sample(2));  // duplicate row
  const std::vector<double> p = m.forward(x);
  EXPECT_EQ(p[0], p[2]);
  for (int i = 0; i < 4; ++i) {
    nn::Tensor one(1, 10, 32, 32);
    std::copy(x.sample(i), x.sample(i) + x.sample_size(), one.sample(0));
    EXPECT_NEAR(m.forward(one)[0], p[static_cast<std::size_t>(i)], 1e-5);
  }
  EXPECT_EQ(m.forward(x), p);
}

TEST(Classifier, ChannelMismatch) {
  Rng rng(7);
  Classifier m(small_arch({true, false}), 0);
  EXPECT_EQ(m.arch().in_channels(), 6);
  try {
    m.forward(random_batch(1, 10, 32, rng));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
  EXPECT_NO_THROW(m.forward(random_batch(1, 6, 32, rng)));
  EXPECT_EQ(Classifier(small_arch({false, true}), 0).arch().in_channels(), 4);
}

TEST(Classifier, PredictPairUntrained) {
  Rng rng(8);
  raster::PairArtifacts art;
  art.rgb_a = Image(32, 32, 3, 0.3f);
  art.rgb_b = Image(32, 32, 3, 0.6f);
  art.masks.keypoint_a = art.masks.keypoint_b = art.masks.match_a = art.masks.match_b = Mask(32, 32);
  const double p = model::predict_pair(Classifier(small_arch(), 4), art);
  EXPECT_GE(p, 0.0);
  EXPECT_LE(p, 1.0);
}

// Positives: two identical noise images; negatives: independent noise.
model::InMemoryDataset separable_dataset(int n, int s, std::uint64_t seed) {
  Rng rng(seed);
  model::InMemoryDataset data;
  for (int i = 0; i < n; ++i) {
    raster::PairArtifacts art;
    art.rgb_a = Image(s, s, 3);
    for (float& v : art.rgb_a.data) v = static_cast<float>(rng.uniform());
    const bool positive = i % 2 == 0;
    if (positive) {
      art.rgb_b = art.rgb_a;
    } else {
      art.rgb_b = Image(s, s, 3);
      for (float& v : art.rgb_b.data) v = static_cast<float>(rng.uniform());
    }
    art.masks.keypoint_a = art.masks.keypoint_b = art.masks.match_a = art.masks.match_b = Mask(s, s);
    data.add(raster::pack(art), positive ? 1 : 0);
  }
  return data;
}

TEST(Train, SameSeedSameLossCurve) {
  const auto data = separable_dataset(24, 32, 1);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.input_size = 32;
  cfg.seed = 11;
  const auto a = model::train(data, small_arch(), cfg);
  const auto b = model::train(data, small_arch(), cfg);
  ASSERT_EQ(a.history.size(), 2u);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_NEAR(a.history[i].loss, b.history[i].loss, 1e-4);
    EXPECT_EQ(a.history[i].learning_rate, model::learning_rate(cfg, static_cast<int>(i) + 1));
  }
}

TEST(Train, Errors) {
  TrainConfig cfg;
  cfg.input_size = 32;
  try {
    model::train(model::InMemoryDataset{}, small_arch(), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyDataset);
  }
  const auto data = separable_dataset(4, 16, 2);
  EXPECT_THROW(model::train(data, small_arch(), cfg), Error);  // 16 px data, 32 px config
}

TEST(Train, DivergedLossNamesBatch) {
  const auto data = separable_dataset(8, 32, 3);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.input_size = 32;
  cfg.lr_start = std::numeric_limits<double>::infinity();
  try {
    model::train(data, small_arch(), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDivergedLoss);
    EXPECT_NE(std::string(e.what()).find("batch 1"), std::string::npos) << e.what();
  }
}

TEST(Train, TriviallySeparablePairs) {
  const auto data = separable_dataset(200, 128, 4);
  TrainConfig cfg;
  cfg.input_size = 128;
  cfg.seed = 5;
  ArchConfig arch = small_arch();
  arch.stem_channels = 16;
  arch.widths = {16, 32, 64};
  const auto result = model::train(data, arch, cfg);
  ASSERT_EQ(result.history.size(), 10u);
  double best = 0.0;
  for (const auto& rec : result.history) best = std::max(best, rec.ap.value_or(0.0));
  EXPECT_GE(best, 0.99);
  // Evaluation-mode scores on the training pairs separate too.
  const std::vector<double> p = model::predict(result.model, data);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < p.size(); ++i) correct += (p[i] > 0.5) == (data.label(i) == 1);
  EXPECT_GE(correct, 190u);
}

TEST(Checkpoint, RoundTrip) {
  const auto dir = testing::scratch_dir("ckpt");
  const auto data = separable_dataset(8, 32, 6);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.input_size = 32;
  auto trained = model::train(data, small_arch({true, false}), cfg, {0.3, 1.0});
  model::save_checkpoint(dir / "m.ckpt", trained.model, {cfg, {0.3, 1.0}, 1});
  const auto loaded = model::load_checkpoint(dir / "m.ckpt", raster::InputConfig{true, false});
  EXPECT_EQ(loaded.model.arch(), trained.model.arch());
  EXPECT_EQ(loaded.meta.train, cfg);
  EXPECT_EQ(loaded.meta.loss, (LossConfig{0.3, 1.0}));
  EXPECT_EQ(loaded.meta.epoch, 1);
  EXPECT_EQ(model::predict(loaded.model, data), model::predict(trained.model, data));

  try {
    model::load_checkpoint(dir / "m.ckpt", raster::InputConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

TEST(Checkpoint, CorruptFiles) {
  const auto dir = testing::scratch_dir("ckpt_bad");
  {
    std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  }
  try {
    model::load_checkpoint(dir / "junk.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParseError);
  }
  Classifier m(small_arch(), 0);
  model::save_checkpoint(dir / "v.ckpt", m, {});
  std::string bytes = testing::read_file(dir / "v.ckpt");
  bytes[6] = 9;  // version field
  {
    std::ofstream(dir / "v.ckpt", std::ios::binary) << bytes;
  }
  try {
    model::load_checkpoint(dir / "v.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kVersionMismatch);
  }
}

}  // namespace
}  // namespace doppel
