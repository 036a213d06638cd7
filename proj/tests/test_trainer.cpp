// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "vfd/trainer.hpp"

namespace vfd {
namespace {

NetworkConfig tiny_net(Variant v = Variant::k3D) {
  return NetworkConfig::with_channels(v, {2, 2, 3, 3, 3, 3, 4, 4}, {8});
}

// Bright ball labelled normal with a brighter flattened core labelled fracture.
TrainingCase ball_case(const std::string& id, std::uint64_t seed, int n = 30) {
  TrainingCase tc;
  tc.case_id = id;
  tc.image = Volume({n, n, n});
  tc.labels = LabelVolume({n, n, n});
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.0f, 0.2f);
  const double c = (n - 1) / 2.0;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double r = std::hypot(x - c, y - c, z - c);
        std::uint8_t cls = 0;
        if (r < 8) cls = 1;
        if (r < 8 && std::abs(z - c) < 2.5) cls = 2;
        tc.labels(x, y, z) = cls;
        tc.image(x, y, z) = static_cast<float>(cls) + noise(rng);
      }
  return tc;
}

TrainingConfig quick_config() {
  TrainingConfig cfg;
  cfg.epochs = 4;
  cfg.segment_batch = 2;
  cfg.batches_per_epoch = 2;
  cfg.segment_output = {3, 3, 3};
  cfg.validation_segments = 4;
  cfg.seed = 5;
  return cfg;
}

TEST(Sampling, ForcedClassWeights) {
  const TrainingCase tc = ball_case("a", 1);
  const auto layout = SegmentLayout::make(tiny_net(), {3, 3, 3});
  std::mt19937_64 rng(1);
  for (int cls = 0; cls < 3; ++cls) {
    std::array<double, 3> w{0, 0, 0};
    w[cls] = 1.0;
    for (const auto& s : sample_segments(tc.image, tc.labels, layout, w, 50, rng)) {
      EXPECT_EQ(static_cast<int>(s.center_class), cls);
      EXPECT_EQ(tc.labels(s.center[0], s.center[1], s.center[2]), cls);
    }
  }
}

TEST(Sampling, FrequenciesFollowWeights) {
  const TrainingCase tc = ball_case("a", 1);
  const auto layout = SegmentLayout::make(NetworkConfig::with_channels(Variant::k3D, {2}, {}), {3, 3, 3});
  std::mt19937_64 rng(2);
  const int n = 10000;
  const auto segs = sample_segments(tc.image, tc.labels, layout, {0.5, 0.25, 0.25}, n, rng);
  std::array<int, 3> count{0, 0, 0};
  for (const auto& s : segs) ++count[static_cast<int>(s.center_class)];
  EXPECT_NEAR(count[0] / double(n), 0.50, 0.02);
  EXPECT_NEAR(count[1] / double(n), 0.25, 0.02);
  EXPECT_NEAR(count[2] / double(n), 0.25, 0.02);
}

TEST(Sampling, AbsentClassWeightIsRedistributed) {
  TrainingCase tc = ball_case("a", 1);
  for (auto& v : tc.labels.storage())
    if (v == 2) v = 1;
  const auto layout = SegmentLayout::make(NetworkConfig::with_channels(Variant::k3D, {2}, {}), {3, 3, 3});
  std::mt19937_64 rng(3);
  std::vector<std::string> logs;
  const int n = 10000;
  const auto segs = sample_segments(tc.image, tc.labels, layout, {0.5, 0.25, 0.25}, n, rng,
                                    [&](const std::string& m) { logs.push_back(m); });
  int bg = 0;
  for (const auto& s : segs) {
    EXPECT_NE(s.center_class, VoxelClass::kFracture);
    bg += s.center_class == VoxelClass::kBackground;
  }
  EXPECT_NEAR(bg / double(n), 0.5 / 0.75, 0.02);
  EXPECT_EQ(logs.size(), 1u);
}

TEST(Sampling, SegmentContentsMatchVolume) {
  const TrainingCase tc = ball_case("a", 4);
  const auto layout = SegmentLayout::make(tiny_net(), {3, 3, 3});
  EXPECT_EQ(layout.block, (Dims3{3 + 2 * 3 * 8, 3 + 2 * 3 * 8, 3 + 2 * 3 * 8}));
  std::mt19937_64 rng(4);
  for (const auto& s : sample_segments(tc.image, tc.labels, layout, {0.4, 0.3, 0.3}, 20, rng)) {
    // The output center is the sampled voxel.
    EXPECT_EQ(s.target[13], tc.labels(s.center[0], s.center[1], s.center[2]));
    const int bx = s.center[0] - 1 - 24, by = s.center[1] - 1 - 24, bz = s.center[2] - 1 - 24;
    for (int z = 0; z < layout.block[2]; z += 7)
      for (int y = 0; y < layout.block[1]; y += 5)
        for (int x = 0; x < layout.block[0]; x += 3) {
          const float want = tc.image.contains(bx + x, by + y, bz + z)
                                 ? tc.image(bx + x, by + y, bz + z)
                                 : 0.0f;
          ASSERT_EQ(s.block.at(0, x, y, z), want);
        }
  }
}

TEST(Sampling, OutputMustDivideBySubsampleFactor) {
  EXPECT_THROW(SegmentLayout::make(tiny_net(), {4, 3, 3}), Error);
  // Single-slice axis is never subsampled.
  EXPECT_NO_THROW(SegmentLayout::make(tiny_net(Variant::kOneSlice), {1, 3, 3}));
}

TEST(Augment, FlipIsInvolution) {
  const TrainingCase tc = ball_case("a", 5);
  const auto layout = SegmentLayout::make(tiny_net(), {3, 3, 3});
  std::mt19937_64 rng(5);
  const auto s = sample_segments(tc.image, tc.labels, layout, {0.4, 0.3, 0.3}, 1, rng)[0];
  for (int axis = 0; axis < 3; ++axis) {
    auto t = s;
    flip_segment(t, axis);
    EXPECT_NE(t.block.data, s.block.data);
    flip_segment(t, axis);
    EXPECT_EQ(t.block.data, s.block.data);
    EXPECT_EQ(t.target, s.target);
  }
}

TEST(Augment, FlipRateAndNoiseStatistics) {
  const TrainingCase tc = ball_case("a", 6);
  const auto layout = SegmentLayout::make(tiny_net(), {3, 3, 3});
  std::mt19937_64 rng(6);
  const auto s = sample_segments(tc.image, tc.labels, layout, {0.4, 0.3, 0.3}, 1, rng)[0];
  AugmentationConfig cfg;
  cfg.intensity_noise_std = 0.0;
  std::array<int, 3> flips{0, 0, 0};
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    auto t = s;
    const auto f = augment(t, cfg, rng);
    for (int a = 0; a < 3; ++a) flips[a] += f[a];
  }
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(flips[a] / double(n), 0.5, 0.03);

  cfg.intensity_noise_std = 0.3;
  cfg.flip_axes = {false, false, false};
  auto t = s;
  augment(t, cfg, rng);
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < t.block.data.size(); ++i) {
    const double d = t.block.data[i] - s.block.data[i];
    sum += d;
    sq += d * d;
  }
  const double m = sum / static_cast<double>(t.block.data.size());
  EXPECT_NEAR(m, 0.0, 0.01);
  EXPECT_NEAR(std::sqrt(sq / static_cast<double>(t.block.data.size()) - m * m), 0.3, 0.01);
  EXPECT_EQ(t.target, s.target);
}

TEST(Train, ZeroLearningRateLeavesWeightsUnchanged) {
  auto cfg = quick_config();
  cfg.initial_lr = 0.0;
  Network<float> init(tiny_net());
  init.init(42);
  const auto r = train({ball_case("a", 1)}, {ball_case("v", 2)}, tiny_net(), cfg, {}, &init);
  EXPECT_TRUE(std::equal(init.params().begin(), init.params().end(), r.network.params().begin()));
}

TEST(Train, DeterministicAndIndependentOfWorkers) {
  auto cfg = quick_config();
  const std::vector<TrainingCase> tr{ball_case("a", 1), ball_case("b", 3)}, va{ball_case("v", 2)};
  const auto r1 = train(tr, va, tiny_net(), cfg);
  const auto r2 = train(tr, va, tiny_net(), cfg);
  cfg.workers = 2;
  const auto r3 = train(tr, va, tiny_net(), cfg);
  EXPECT_TRUE(std::equal(r1.network.params().begin(), r1.network.params().end(), r2.network.params().begin()));
  EXPECT_TRUE(std::equal(r1.network.params().begin(), r1.network.params().end(), r3.network.params().begin()));
  ASSERT_EQ(r1.log.size(), r3.log.size());
  for (std::size_t i = 0; i < r1.log.size(); ++i) EXPECT_EQ(r1.log[i].train_loss, r3.log[i].train_loss);
  cfg.workers = 1;
  cfg.seed = 6;
  const auto r4 = train(tr, va, tiny_net(), cfg);
  EXPECT_FALSE(std::equal(r1.network.params().begin(), r1.network.params().end(), r4.network.params().begin()));
}

TEST(Train, LogHasOneEntryPerEpochAndLrNeverIncreases) {
  auto cfg = quick_config();
  cfg.epochs = 35;
  cfg.batches_per_epoch = 1;
  cfg.segment_batch = 1;
  cfg.lr_anneal.patience = 1;
  int callbacks = 0;
  const auto r = train({ball_case("a", 1)}, {ball_case("v", 2)}, tiny_net(), cfg,
                       [&](const EpochLog&) { ++callbacks; });
  ASSERT_EQ(r.log.size(), 35u);
  EXPECT_EQ(callbacks, 35);
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    EXPECT_EQ(r.log[i].epoch, static_cast<int>(i) + 1);
    if (i > 0) {
      EXPECT_LE(r.log[i].learning_rate, r.log[i - 1].learning_rate);
      EXPECT_GE(r.log[i].wall_seconds, r.log[i - 1].wall_seconds);
    }
  }
  EXPECT_LT(r.log.back().learning_rate, cfg.initial_lr);
  const std::string line = format_epoch_log(r.log[0]);
  EXPECT_EQ(line.front(), '{');
  EXPECT_NE(line.find("\"epoch\":1"), std::string::npos);
}

TEST(Train, ConfigErrors) {
  auto cfg = quick_config();
  auto code = [&](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return static_cast<ErrorCode>(0);
  };
  EXPECT_EQ(code([&] { train({ball_case("a", 1)}, {}, tiny_net(), cfg); }), ErrorCode::kConfig);
  EXPECT_EQ(code([&] { train({}, {ball_case("v", 2)}, tiny_net(), cfg); }), ErrorCode::kConfig);
  EXPECT_EQ(code([&] { train({ball_case("a", 1)}, {ball_case("a", 1)}, tiny_net(), cfg); }),
            ErrorCode::kConfig);
  cfg.epochs = 0;
  EXPECT_EQ(code([&] { cfg.validate(); }), ErrorCode::kConfig);
  cfg = quick_config();
  cfg.sampling_weights = {0.5, 0.5, 0.5};
  EXPECT_EQ(code([&] { cfg.validate(); }), ErrorCode::kConfig);
  // Without annealing an empty validation set is allowed.
  cfg = quick_config();
  cfg.lr_anneal.enabled = false;
  EXPECT_NO_THROW(train({ball_case("a", 1)}, {}, tiny_net(), cfg));
}

TEST(Train, LossDecreases) {
  auto cfg = quick_config();
  cfg.epochs = 12;
  cfg.batches_per_epoch = 4;
  cfg.segment_batch = 4;
  cfg.initial_lr = 0.003;
  const auto r = train({ball_case("a", 1), ball_case("b", 3)}, {ball_case("v", 2)}, tiny_net(), cfg);
  const double first = (r.log[0].train_loss + r.log[1].train_loss) / 2;
  const double last = (r.log[10].train_loss + r.log[11].train_loss) / 2;
  EXPECT_LT(last, 0.8 * first) << first << " -> " << last;
  EXPECT_GT(r.log.back().val_metric, 0.6);
}

TEST(Infer, ResultDoesNotDependOnTiling) {
  Network<float> net(tiny_net());
  net.init(8);
  Volume image = ball_case("a", 9, 23).image;
  const auto a = infer_volume(image, net, {25, 25, 25});
  const auto b = infer_volume(image, net, {41, 41, 41});
  const auto c = infer_volume(image, net, {19, 29, 37}, 2);
  ASSERT_TRUE(a.channel(0).same_geometry(image));
  for (int k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < a.size(); ++i) {
      ASSERT_NEAR(a.channel(k)[i], b.channel(k)[i], 1e-5);
      ASSERT_NEAR(a.channel(k)[i], c.channel(k)[i], 1e-5);
    }
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_NEAR(a.channel(0)[i] + a.channel(1)[i] + a.channel(2)[i], 1.0, 1e-5);
  EXPECT_THROW(infer_volume(image, net, {15, 25, 25}), Error);
}

TEST(Infer, ZeroClassifierGivesUniformMap) {
  Network<float> net(tiny_net());
  net.init(8);
  for (const char* name : {"cls.weight", "cls.bias"}) {
    const auto& b = net.block(name);
    std::fill_n(net.params().begin() + static_cast<std::ptrdiff_t>(b.offset), b.size, 0.0f);
  }
  const auto m = infer_volume(ball_case("a", 9, 20).image, net, {25, 25, 25});
  for (int k = 0; k < 3; ++k)
    for (float p : m.channel(k).data()) ASSERT_NEAR(p, 1.0f / 3.0f, 1e-6f);
}

}  // namespace
}  // namespace vfd
