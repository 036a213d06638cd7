// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vfd/label_builder.hpp"
#include "vfd/network.hpp"
#include "vfd/phantom.hpp"
#include "vfd/trainer.hpp"

namespace vfd {

struct InferenceConfig {
  Dims3 tile{40, 40, 48};  // normal-pathway input per tile

  bool operator==(const InferenceConfig&) const = default;
};

struct AggregationConfig {
  std::vector<double> probability_thresholds{0.05, 0.1, 0.2, 0.3, 0.4, 0.5,
                                             0.6,  0.7, 0.8, 0.9, 0.95, 0.99};
  std::vector<std::size_t> noise_thresholds{0, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000};
  int cube_size = 10;
  double kernel_sigma_mm = 5.0;
  double centroid_noise_mm = 3.0;

  bool operator==(const AggregationConfig&) const = default;
};

struct EvaluationConfig {
  int folds = 5;
  int min_negatives = 2;
  double validation_fraction = 0.15;
  int bootstrap_resamples = 1000;
  int grid_points = 101;
  double min_specificity = 0.9;  // reported operating point

  bool operator==(const EvaluationConfig&) const = default;
};

/// Everything an experiment needs. One seed drives all randomness; the
/// phantom and training seeds are derived from it.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  int workers = 1;
  double target_spacing_mm = 1.0;
  PhantomSpec phantom;
  EllipsoidParams labels;
  NetworkConfig network = NetworkConfig::for_variant(Variant::k3D);
  TrainingConfig training;
  InferenceConfig inference;
  AggregationConfig aggregation;
  EvaluationConfig evaluation;

  /// Copies seed, workers and label parameters into the sections that use
  /// them, then validates everything. Throws kConfig.
  void finalize();
  bool operator==(const ExperimentConfig&) const = default;
};

/// JSON document; every key optional, unknown keys rejected with the
/// offending dotted path. Within "network", "variant" selects the filters
/// and the calibrated channel plan, which other keys then override.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);
std::string experiment_config_to_json(const ExperimentConfig& cfg);

/// `dotted.key=value`; value parsed as JSON, else taken as a string.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

std::string network_config_to_json(const NetworkConfig& cfg);
NetworkConfig network_config_from_json(const std::string& json_text);
std::string phantom_spec_to_json(const PhantomSpec& spec);

}  // namespace vfd
