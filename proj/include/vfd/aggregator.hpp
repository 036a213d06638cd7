// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "vfd/probability_map.hpp"
#include "vfd/volume.hpp"

namespace vfd {

struct PatientHyperparams {
  double probability_threshold = 0.5;
  std::size_t noise_threshold = 0;  // minimum component size kept, in voxels

  void validate() const;
  bool operator==(const PatientHyperparams&) const = default;
};

struct Component {
  std::size_t size = 0;
  std::array<int, 3> bbox_min{0, 0, 0};
  std::array<int, 3> bbox_max{0, 0, 0};  // inclusive
};

struct PatientResult {
  std::size_t fracture_voxel_count = 0;
  std::vector<Component> components;  // retained components only
  bool decision = false;
};

/// 26-connected components of the nonzero voxels, in raster order of their
/// first voxel.
std::vector<Component> connected_components(const Grid<std::uint8_t>& mask);

/// Fracture channel >= threshold, components smaller than the noise threshold
/// dropped, decision = any voxel survives.
PatientResult patient_detect(const ProbabilityMap& map, const PatientHyperparams& hp);

struct SweepPoint {
  PatientHyperparams hp;
  double fpr = 0.0;
  double tpr = 0.0;
};

/// decisions[g][c]: patient decision of grid point g on case c.
std::vector<std::vector<bool>> patient_decisions(const std::vector<const ProbabilityMap*>& maps,
                                                 const std::vector<PatientHyperparams>& grid);

/// One (FPR, TPR) per grid point. Throws kEvaluation unless both classes occur.
std::vector<SweepPoint> sweep_hyperparams(const std::vector<const ProbabilityMap*>& maps,
                                          const std::vector<bool>& positive,
                                          const std::vector<PatientHyperparams>& grid);

/// Cartesian product of probability and noise thresholds.
std::vector<PatientHyperparams> hyperparam_grid(const std::vector<double>& probability_thresholds,
                                                const std::vector<std::size_t>& noise_thresholds);

struct VertebraScore {
  std::string name;
  Vec3 centroid{0.0, 0.0, 0.0};
  double score = 0.0;
};

/// Gaussian-weighted mean fracture probability over an axis-aligned cube of
/// `cube_size` voxels centered on the voxel nearest the centroid. For even
/// sizes the cube spans [c - size/2, c + size/2 - 1]. Weights use physical
/// distance to the centroid and are renormalized over in-volume voxels.
VertebraScore vertebra_score(const ProbabilityMap& map, const Vec3& centroid, int cube_size,
                             double sigma_mm, std::string name = {});

/// Zero-mean Gaussian offset per axis, clamped into the grid's bounds.
std::vector<Vec3> perturb_centroids(const std::vector<Vec3>& centroids, double sigma_mm,
                                    std::mt19937_64& rng, const Dims3& dims, const Vec3& spacing,
                                    const Vec3& origin);

}  // namespace vfd
