// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>

#include "vfd/volume.hpp"

namespace vfd {

enum class VoxelClass : std::uint8_t { kBackground = 0, kNormal = 1, kFracture = 2 };

inline constexpr int kNumClasses = 3;

/// Per-voxel probabilities over (background, normal, fracture), one channel
/// per class, on the preprocessed image grid.
class ProbabilityMap {
 public:
  ProbabilityMap() = default;
  ProbabilityMap(Dims3 dims, Vec3 spacing, Vec3 origin)
      : channels_{Volume(dims, spacing, origin), Volume(dims, spacing, origin),
                  Volume(dims, spacing, origin)} {}

  const Dims3& dims() const noexcept { return channels_[0].dims(); }
  const Vec3& spacing() const noexcept { return channels_[0].spacing(); }
  const Vec3& origin() const noexcept { return channels_[0].origin(); }
  std::size_t size() const noexcept { return channels_[0].size(); }

  Volume& channel(VoxelClass c) noexcept { return channels_[static_cast<int>(c)]; }
  const Volume& channel(VoxelClass c) const noexcept {
    return channels_[static_cast<int>(c)];
  }
  Volume& channel(int c) noexcept { return channels_[c]; }
  const Volume& channel(int c) const noexcept { return channels_[c]; }

  const Volume& fracture() const noexcept { return channels_[2]; }

  bool operator==(const ProbabilityMap&) const = default;

 private:
  std::array<Volume, kNumClasses> channels_;
};

}  // namespace vfd
