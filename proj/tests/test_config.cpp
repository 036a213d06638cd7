// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#include <functional>

#include <gtest/gtest.h>

#include "vfd/config.hpp"

namespace vfd {
namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return static_cast<ErrorCode>(0);
}

TEST(Config, EmptyDocumentGivesDefaults) {
  ExperimentConfig want;
  want.finalize();
  EXPECT_EQ(parse_experiment_config("{}"), want);
  EXPECT_EQ(want.network, NetworkConfig::for_variant(Variant::k3D));
  EXPECT_EQ(want.training.epochs, 35);
  EXPECT_EQ(want.evaluation.folds, 5);
  EXPECT_EQ(want.evaluation.min_negatives, 2);
  EXPECT_EQ(want.aggregation.cube_size, 10);
  EXPECT_EQ(want.aggregation.centroid_noise_mm, 3.0);
}

TEST(Config, UnknownKeysNameTheirPath) {
  for (const char* doc : {R"({"sed": 3})", R"({"training": {"epoch": 3}})",
                          R"({"training": {"lr_anneal": {"patients": 2}}})",
                          R"({"network": {"variant": "3D", "depth": 9}})"}) {
    try {
      parse_experiment_config(doc);
      FAIL() << doc;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kConfig);
      EXPECT_NE(std::string(e.what()).find("unknown config key"), std::string::npos) << e.what();
    }
  }
  try {
    parse_experiment_config(R"({"training": {"lr_anneal": {"patients": 2}}})");
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("training.lr_anneal.patients"), std::string::npos);
  }
}

TEST(Config, InvalidValuesAreConfigErrors) {
  EXPECT_EQ(code_of([] { parse_experiment_config(R"({"training": {"epochs": 0}})"); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([] { parse_experiment_config(R"({"training": {"epochs": "many"}})"); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([] { parse_experiment_config(R"({"network": {"variant": "2D"}})"); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([] { parse_experiment_config(R"({"inference": {"tile": [8, 8, 8]}})"); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([] { parse_experiment_config("{not json"); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([] { load_experiment_config("/nonexistent/cfg.json"); }), ErrorCode::kIo);
}

TEST(Config, VariantSelectsCalibratedPlanThenOverrides) {
  const auto c = parse_experiment_config(R"({"network": {"variant": "1slice", "fc_channels": [7]}})");
  EXPECT_EQ(c.network.variant, Variant::kOneSlice);
  EXPECT_EQ(c.network.conv1_filter, (Dims3{1, 3, 3}));
  EXPECT_EQ(c.network.conv_channels, NetworkConfig::for_variant(Variant::kOneSlice).conv_channels);
  EXPECT_EQ(c.network.fc_channels, std::vector<int>{7});
}

TEST(Config, SeedAndWorkersPropagate) {
  const auto c = parse_experiment_config(R"({"seed": 42, "workers": 3})");
  EXPECT_EQ(c.phantom.seed, 42u);
  EXPECT_EQ(c.training.seed, 42u);
  EXPECT_EQ(c.training.workers, 3);
}

TEST(Config, JsonRoundTrip) {
  auto c = parse_experiment_config(R"({"seed": 9, "network": {"variant": "5slices"},
      "training": {"epochs": 3, "sampling_weights": [0.6, 0.2, 0.2],
                   "augmentation": {"flip_axes": [true, false, true]}},
      "aggregation": {"noise_thresholds": [0, 7]}, "labels": {"flatten": 0.4}})");
  EXPECT_EQ(parse_experiment_config(experiment_config_to_json(c)), c);
  EXPECT_EQ(c.phantom.labels.flatten, 0.4);
  const NetworkConfig n = network_config_from_json(network_config_to_json(c.network));
  EXPECT_EQ(n, c.network);
}

TEST(Config, Overrides) {
  ExperimentConfig c = parse_experiment_config("{}");
  apply_override(c, "training.epochs=4");
  EXPECT_EQ(c.training.epochs, 4);
  apply_override(c, "seed=11");
  EXPECT_EQ(c.training.seed, 11u);
  apply_override(c, "training.segment_output=[6,6,6]");
  EXPECT_EQ(c.training.segment_output, (Dims3{6, 6, 6}));
  apply_override(c, "network.conv_channels=[2,2,2,2,2,2,2,2]");
  apply_override(c, "network.variant=1slice");  // string without quotes
  EXPECT_EQ(c.network, NetworkConfig::for_variant(Variant::kOneSlice));
  EXPECT_EQ(code_of([&] { apply_override(c, "training.epochz=4"); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([&] { apply_override(c, "training.epochs=0"); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([&] { apply_override(c, "no_equals_sign"); }), ErrorCode::kConfig);
  EXPECT_EQ(c.training.epochs, 4);  // failed overrides leave the config untouched
}

}  // namespace
}  // namespace vfd
