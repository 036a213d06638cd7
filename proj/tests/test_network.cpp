// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "vfd/checkpoint.hpp"
#include "vfd/network.hpp"

namespace vfd {
namespace {

template <typename T>
SegmentInput<T> random_input(const Network<T>& net, const Dims3& out, const Dims3& phase,
                             std::mt19937_64& rng) {
  const auto geo = net.geometry(out, phase);
  std::normal_distribution<double> nd(0.0, 1.0);
  SegmentInput<T> in;
  in.phase = phase;
  in.normal = Tensor<T>(1, geo.normal_input);
  in.low = Tensor<T>(1, geo.low_input);
  for (auto& v : in.normal.data) v = static_cast<T>(nd(rng));
  for (auto& v : in.low.data) v = static_cast<T>(nd(rng));
  return in;
}

TEST(ReceptiveField, VariantsMatchArchitecture) {
  const auto rf3 = receptive_field(NetworkConfig::for_variant(Variant::k3D));
  EXPECT_EQ(rf3.normal, (Dims3{17, 17, 17}));
  EXPECT_EQ(rf3.subsampled_effective, (Dims3{51, 51, 51}));
  const auto rf1 = receptive_field(NetworkConfig::for_variant(Variant::kOneSlice));
  EXPECT_EQ(rf1.normal, (Dims3{1, 17, 17}));
  EXPECT_EQ(rf1.subsampled_effective, (Dims3{1, 51, 51}));
  const auto rf5 = receptive_field(NetworkConfig::for_variant(Variant::kFiveSlices));
  EXPECT_EQ(rf5.normal, (Dims3{5, 17, 17}));
  EXPECT_EQ(rf5.subsampled_effective, (Dims3{15, 51, 51}));
}

TEST(ReceptiveField, GeneralFormula) {
  // 1 + sum(filter - 1) with a 5x3x1 first layer and 3x1x3 later layers.
  NetworkConfig cfg = NetworkConfig::with_channels(Variant::k3D, {2, 2, 2, 2}, {});
  cfg.conv1_filter = {5, 3, 1};
  cfg.conv_rest_filter = {3, 1, 3};
  const auto rf = receptive_field(cfg);
  EXPECT_EQ(rf.normal, (Dims3{1 + 4 + 3 * 2, 1 + 2, 1 + 3 * 2}));
  EXPECT_EQ(subsample_factors(cfg), (Dims3{3, 3, 3}));
}

TEST(Parameters, SingleConvLayer) {
  // 1 input channel, 1 output, 3x3x3 filter, bias: 27 + 1.
  EXPECT_EQ(count_conv_parameters(1, 1, {3, 3, 3}, true, false), 28u);
  EXPECT_EQ(count_conv_parameters(4, 5, {1, 3, 3}, true, true), 4u * 5 * 9 + 5 + 5);
}

TEST(Parameters, CountMatchesAllocatedBlocks) {
  for (Variant v : {Variant::kOneSlice, Variant::kFiveSlices, Variant::k3D}) {
    const auto cfg = NetworkConfig::for_variant(v);
    Network<float> net(cfg);
    EXPECT_EQ(net.params().size(), count_parameters(cfg)) << variant_name(v);
    std::size_t sum = 0;
    for (const auto& b : net.blocks()) sum += b.size;
    EXPECT_EQ(sum, net.params().size());
  }
}

TEST(Parameters, BudgetNear230KAndBalanced) {
  const double p3 = static_cast<double>(count_parameters(NetworkConfig::for_variant(Variant::k3D)));
  const double p1 =
      static_cast<double>(count_parameters(NetworkConfig::for_variant(Variant::kOneSlice)));
  const double p5 =
      static_cast<double>(count_parameters(NetworkConfig::for_variant(Variant::kFiveSlices)));
  EXPECT_LE(std::abs(p3 - 230000.0) / 230000.0, 0.10) << p3;
  for (auto [a, b] : {std::pair{p1, p3}, std::pair{p1, p5}, std::pair{p3, p5}})
    EXPECT_LE(std::abs(a - b) / std::max(a, b), 0.01) << a << " vs " << b;
}

TEST(Network, OutputDimsFromInput) {
  Network<float> net(NetworkConfig::for_variant(Variant::k3D));
  EXPECT_EQ(net.output_dims_for({25, 25, 25}), (Dims3{9, 9, 9}));
  EXPECT_EQ(net.geometry({9, 9, 9}).normal_input, (Dims3{25, 25, 25}));
  try {
    net.output_dims_for({16, 25, 25});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShape);
  }
  Network<float> one(NetworkConfig::for_variant(Variant::kOneSlice));
  EXPECT_EQ(one.output_dims_for({1, 25, 25}), (Dims3{1, 9, 9}));
}

TEST(Network, RejectsInvalidConfig) {
  auto cfg = NetworkConfig::with_channels(Variant::k3D, {}, {4});
  EXPECT_THROW(cfg.validate(), Error);
  cfg = NetworkConfig::with_channels(Variant::k3D, {2, 0}, {4});
  EXPECT_THROW(cfg.validate(), Error);
  cfg = NetworkConfig::with_channels(Variant::k3D, {2, 2}, {4});
  cfg.conv1_filter = {2, 3, 3};
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_THROW(parse_variant("2.5D"), Error);
}

TEST(Network, ProbabilitiesSumToOne) {
  Network<float> net(NetworkConfig::with_channels(Variant::k3D, {3, 3, 4, 4, 4, 4, 5, 5}, {8}));
  net.init(3);
  std::mt19937_64 rng(1);
  const auto in = random_input(net, {5, 4, 6}, {1, 2, 0}, rng);
  Tensor<float> probs;
  Workspace<float> ws;
  net.forward(in, probs, ws);
  ASSERT_EQ(probs.channels, 3);
  ASSERT_EQ(probs.dims, (Dims3{5, 4, 6}));
  for (std::size_t v = 0; v < probs.spatial(); ++v) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
      const float p = probs.data[c * probs.spatial() + v];
      EXPECT_GE(p, 0.0f);
      EXPECT_LE(p, 1.0f);
      s += p;
    }
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(Network, GradientMatchesFiniteDifferences) {
  Network<double> net(NetworkConfig::with_channels(Variant::k3D, {2, 2, 3, 3, 3, 3, 2, 2}, {4, 4}));
  net.init(7);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 0.05);
  for (auto& p : net.params()) p += nd(rng);  // move slopes and biases off their init
  const auto in = random_input(net, {3, 3, 3}, {1, 0, 2}, rng);
  std::vector<std::uint8_t> target(27);
  for (auto& t : target) t = static_cast<std::uint8_t>(rng() % 3);
  Workspace<double> ws;
  std::vector<double> grad(net.params().size(), 0.0), scratch(grad.size());
  net.loss_and_gradient(in, target, 1.0, grad, ws);
  double worst = 0.0;
  for (int k = 0; k < 60; ++k) {
    const std::size_t i = rng() % grad.size();
    const double w = net.params()[i], h = 1e-5;
    net.params()[i] = w + h;
    const double lp = net.loss_and_gradient(in, target, 1.0, scratch, ws);
    net.params()[i] = w - h;
    const double lm = net.loss_and_gradient(in, target, 1.0, scratch, ws);
    net.params()[i] = w;
    const double fd = (lp - lm) / (2 * h);
    worst = std::max(worst, std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-8}));
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(Network, GradientScaleIsLinear) {
  Network<double> net(NetworkConfig::with_channels(Variant::kFiveSlices, {2, 2, 2, 2}, {3}));
  net.init(1);
  std::mt19937_64 rng(2);
  const auto in = random_input(net, {1, 2, 3}, {0, 1, 1}, rng);
  const std::vector<std::uint8_t> target(6, 2);
  Workspace<double> ws;
  std::vector<double> g1(net.params().size(), 0.0), g3(g1.size(), 0.0);
  const double l1 = net.loss_and_gradient(in, target, 1.0, g1, ws);
  const double l3 = net.loss_and_gradient(in, target, 3.0, g3, ws);
  EXPECT_DOUBLE_EQ(l1, l3);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g3[i], 3.0 * g1[i], 1e-12 + 1e-9 * std::abs(g1[i]));
}

TEST(Network, OneSliceSeesOnlyItsSlice) {
  // Changing one sagittal slice of the input leaves every other slice's output unchanged.
  Network<float> net(NetworkConfig::with_channels(Variant::kOneSlice, {3, 3, 3, 3, 3, 3, 3, 3}, {6}));
  net.init(5);
  std::mt19937_64 rng(9);
  auto in = random_input(net, {4, 3, 3}, {0, 0, 0}, rng);
  EXPECT_EQ(in.normal.dims[0], 4);
  EXPECT_EQ(in.low.dims[0], 4);
  Workspace<float> ws;
  Tensor<float> a, b;
  net.forward(in, a, ws);
  for (int z = 0; z < in.normal.dims[2]; ++z)
    for (int y = 0; y < in.normal.dims[1]; ++y) in.normal.at(0, 2, y, z) += 1.5f;
  for (int z = 0; z < in.low.dims[2]; ++z)
    for (int y = 0; y < in.low.dims[1]; ++y) in.low.at(0, 2, y, z) -= 0.7f;
  net.forward(in, b, ws);
  int changed = 0;
  for (int c = 0; c < 3; ++c)
    for (int z = 0; z < 3; ++z)
      for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 4; ++x) {
          if (x == 2) {
            changed += a.at(c, x, y, z) != b.at(c, x, y, z);
          } else {
            EXPECT_EQ(a.at(c, x, y, z), b.at(c, x, y, z));
          }
        }
  EXPECT_GT(changed, 0);
}

TEST(Network, ZeroClassifierGivesUniformProbabilities) {
  Network<float> net(NetworkConfig::with_channels(Variant::k3D, {2, 2, 2, 2}, {4}));
  net.init(2);
  for (const char* name : {"cls.weight", "cls.bias"}) {
    const auto& b = net.block(name);
    std::fill_n(net.params().begin() + static_cast<std::ptrdiff_t>(b.offset), b.size, 0.0f);
  }
  std::mt19937_64 rng(4);
  const auto in = random_input(net, {3, 3, 3}, {0, 0, 0}, rng);
  Tensor<float> probs;
  Workspace<float> ws;
  net.forward(in, probs, ws);
  for (float p : probs.data) EXPECT_NEAR(p, 1.0f / 3.0f, 1e-6f);
}

TEST(Network, InitIsDeterministic) {
  const auto cfg = NetworkConfig::with_channels(Variant::k3D, {3, 3}, {4});
  Network<float> a(cfg), b(cfg), c(cfg);
  a.init(11);
  b.init(11);
  c.init(12);
  EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
  EXPECT_FALSE(std::equal(a.params().begin(), a.params().end(), c.params().begin()));
}

TEST(Network, AverageDownsample) {
  Tensor<double> t(1, {4, 3, 1});
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x) t.at(0, x, y, 0) = x + 10 * y;
  const auto d = average_downsample(t, {3, 3, 1});
  ASSERT_EQ(d.dims, (Dims3{2, 1, 1}));
  EXPECT_DOUBLE_EQ(d.at(0, 0, 0, 0), (0 + 1 + 2) / 3.0 + 10.0);
  // Zero padding beyond the edge.
  EXPECT_DOUBLE_EQ(d.at(0, 1, 0, 0), (3 + 13 + 23) / 9.0);
}

TEST(Checkpoint, RoundTripIsExact) {
  testing::TempDir dir;
  for (Variant v : {Variant::kOneSlice, Variant::k3D}) {
    Network<float> net(NetworkConfig::with_channels(v, {2, 3, 2}, {5, 4}));
    net.init(99);
    save_checkpoint(net, dir.file("n.ckpt"));
    const Network<float> back = load_checkpoint(dir.file("n.ckpt"));
    EXPECT_EQ(back.config(), net.config());
    ASSERT_EQ(back.params().size(), net.params().size());
    EXPECT_TRUE(std::equal(net.params().begin(), net.params().end(), back.params().begin()));
  }
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  testing::TempDir dir;
  Network<float> net(NetworkConfig::with_channels(Variant::k3D, {2, 2}, {3}));
  net.init(1);
  save_checkpoint(net, dir.file("n.ckpt"));
  std::ifstream in(dir.file("n.ckpt"), std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});

  auto expect_code = [&](const std::string& content, ErrorCode code) {
    std::ofstream(dir.file("bad.ckpt"), std::ios::binary) << content;
    try {
      load_checkpoint(dir.file("bad.ckpt"));
      ADD_FAILURE() << "loaded a corrupt checkpoint";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), code) << e.what();
    }
  };
  std::string wrong_version = bytes;
  wrong_version[8] = 9;
  expect_code(wrong_version, ErrorCode::kFormat);
  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  expect_code(wrong_magic, ErrorCode::kFormat);
  expect_code(bytes.substr(0, bytes.size() - 3), ErrorCode::kIo);
}

}  // namespace
}  // namespace vfd
