// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "vfd/network.hpp"
#include "vfd/probability_map.hpp"
#include "vfd/volume.hpp"

namespace vfd {

struct AugmentationConfig {
  double intensity_noise_std = 0.05;
  std::array<bool, 3> flip_axes{true, true, true};

  bool operator==(const AugmentationConfig&) const = default;
};

/// Learning-rate annealing when the validation metric stops improving.
struct PlateauRule {
  bool enabled = true;
  double factor = 0.5;
  int patience = 3;
  double min_delta = 1e-4;

  bool operator==(const PlateauRule&) const = default;
};

struct TrainingConfig {
  int epochs = 35;
  double initial_lr = 0.001;
  PlateauRule lr_anneal;
  double l1_weight = 1e-6;
  double l2_weight = 1e-4;
  int segment_batch = 8;
  int batches_per_epoch = 20;
  // background, normal, fracture
  std::array<double, 3> sampling_weights{0.5, 0.25, 0.25};
  AugmentationConfig augmentation;
  // Output patch of a training segment; the normal-pathway input adds the
  // receptive field (9^3 output -> 25^3 input for the 3D network).
  Dims3 segment_output{9, 9, 9};
  int validation_segments = 64;
  double rmsprop_rho = 0.9;
  double rmsprop_epsilon = 1e-4;
  std::uint64_t seed = 1;
  int workers = 1;

  /// Throws kConfig.
  void validate() const;

  bool operator==(const TrainingConfig&) const = default;
};

/// Preprocessed image with its dense labels on the same grid.
struct TrainingCase {
  std::string case_id;
  Volume image;
  LabelVolume labels;
};

/// Geometry of a training segment: a full-resolution context block large
/// enough for the subsampled pathway, centered on the output patch.
struct SegmentLayout {
  Dims3 output;
  Dims3 factor;
  Dims3 halo;         // (receptive field - 1) / 2
  Dims3 block;        // output + 2 * factor * halo
  Dims3 normal_offset;

  static SegmentLayout make(const NetworkConfig& cfg, const Dims3& output);
};

struct TrainingSegment {
  Tensor<float> block;
  std::vector<std::uint8_t> target;  // layout of `output`
  Dims3 output{0, 0, 0};
  std::array<int, 3> center{0, 0, 0};
  VoxelClass center_class = VoxelClass::kBackground;
};

using LogSink = std::function<void(const std::string&)>;

/// Class-weighted segment sampling: a class is drawn by `weights` (classes
/// absent from `labels` have their weight redistributed proportionally), then
/// a voxel of that class uniformly. Out-of-bounds context is zero.
std::vector<TrainingSegment> sample_segments(const Volume& image, const LabelVolume& labels,
                                             const SegmentLayout& layout,
                                             const std::array<double, 3>& weights, int n,
                                             std::mt19937_64& rng, const LogSink& log = {});

/// Reverses the block and target along one axis.
void flip_segment(TrainingSegment& seg, int axis);

/// Additive N(0, noise_std) intensity noise and an independent fair-coin flip
/// per enabled axis. Returns the flips applied.
std::array<bool, 3> augment(TrainingSegment& seg, const AugmentationConfig& cfg,
                            std::mt19937_64& rng);

/// Pathway inputs for a segment (phase 0 relative to the output patch).
SegmentInput<float> to_network_input(const TrainingSegment& seg, const SegmentLayout& layout);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_metric = 0.0;  // mean per-class accuracy
  double learning_rate = 0.0;
  double wall_seconds = 0.0;
};

/// One JSON object per line; wall time included.
std::string format_epoch_log(const EpochLog& e);

struct TrainResult {
  Network<float> network;
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

/// Cross-entropy + L1/L2 on weights, RMSProp, plateau annealing, exactly
/// `train_cfg.epochs` epochs. Deterministic given the seed, independent of
/// `workers`.
TrainResult train(const std::vector<TrainingCase>& train_cases,
                  const std::vector<TrainingCase>& val_cases, const NetworkConfig& net_cfg,
                  const TrainingConfig& train_cfg,
                  const std::function<void(const EpochLog&)>& on_epoch = {},
                  const Network<float>* initial = nullptr);

/// Whole-volume prediction by non-overlapping output tiles. `tile` is the
/// normal-pathway input size; results do not depend on it.
ProbabilityMap infer_volume(const Volume& image, const Network<float>& net, const Dims3& tile,
                            int workers = 1);

}  // namespace vfd
