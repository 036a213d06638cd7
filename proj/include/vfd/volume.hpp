// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vfd/error.hpp"

namespace vfd {

using Dims3 = std::array<int, 3>;
using Vec3 = std::array<double, 3>;

// Array axis convention used throughout: x is the sagittal-plane normal
// (left-right), y is anterior-posterior and z is longitudinal (head-foot).
// Memory order is x fastest.
inline constexpr int kSagittalNormalAxis = 0;
inline constexpr int kAnteriorPosteriorAxis = 1;
inline constexpr int kLongitudinalAxis = 2;

/// 3D scalar grid with physical spacing (mm per voxel) and origin (mm of
/// voxel (0,0,0)). Voxel i sits at origin + i * spacing on each axis.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  explicit Grid(Dims3 dims, Vec3 spacing = {1.0, 1.0, 1.0},
                Vec3 origin = {0.0, 0.0, 0.0}, T fill = T{})
      : dims_(dims), spacing_(spacing), origin_(origin) {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] <= 0) fail(ErrorCode::kShape, "volume dims must be positive");
      if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
        fail(ErrorCode::kArgument, "volume spacing must be positive");
    }
    data_.assign(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2], fill);
  }

  const Dims3& dims() const noexcept { return dims_; }
  const Vec3& spacing() const noexcept { return spacing_; }
  const Vec3& origin() const noexcept { return origin_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t index(int x, int y, int z) const noexcept {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims_[0]) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(dims_[1]) * static_cast<std::size_t>(z));
  }
  T& operator()(int x, int y, int z) noexcept { return data_[index(x, y, z)]; }
  const T& operator()(int x, int y, int z) const noexcept {
    return data_[index(x, y, z)];
  }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  bool contains(int x, int y, int z) const noexcept {
    return x >= 0 && y >= 0 && z >= 0 && x < dims_[0] && y < dims_[1] &&
           z < dims_[2];
  }

  Vec3 physical(int x, int y, int z) const noexcept {
    return {origin_[0] + x * spacing_[0], origin_[1] + y * spacing_[1],
            origin_[2] + z * spacing_[2]};
  }
  Vec3 continuous_index(const Vec3& mm) const noexcept {
    return {(mm[0] - origin_[0]) / spacing_[0], (mm[1] - origin_[1]) / spacing_[1],
            (mm[2] - origin_[2]) / spacing_[2]};
  }
  /// Nearest voxel to a physical point; may be outside the grid.
  std::array<int, 3> nearest_voxel(const Vec3& mm) const noexcept {
    const Vec3 c = continuous_index(mm);
    return {static_cast<int>(std::lround(c[0])), static_cast<int>(std::lround(c[1])),
            static_cast<int>(std::lround(c[2]))};
  }
  /// True when the point lies within the voxel-center bounding box.
  bool contains_point(const Vec3& mm) const noexcept {
    const Vec3 c = continuous_index(mm);
    for (int a = 0; a < 3; ++a)
      if (!(c[a] >= 0.0 && c[a] <= dims_[a] - 1)) return false;
    return true;
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }

  void set_origin(const Vec3& origin) noexcept { origin_ = origin; }

  template <typename U>
  bool same_geometry(const Grid<U>& other) const noexcept {
    return dims_ == other.dims() && spacing_ == other.spacing() &&
           origin_ == other.origin();
  }

  bool operator==(const Grid& other) const = default;

 private:
  Dims3 dims_{0, 0, 0};
  Vec3 spacing_{1.0, 1.0, 1.0};
  Vec3 origin_{0.0, 0.0, 0.0};
  std::vector<T> data_;
};

using Volume = Grid<float>;
using LabelVolume = Grid<std::uint8_t>;

enum class Interpolation { kTrilinear, kNearest };

struct VolumeStats {
  double mean = 0.0;
  double std = 0.0;
  std::size_t voxel_count = 0;
};

VolumeStats compute_stats(const Volume& vol);

/// Output dims = round(dim * spacing / target) per axis; grid anchored at the
/// input origin; out-of-range samples clamp to the edge.
Dims3 resampled_dims(const Dims3& dims, const Vec3& spacing, double target);
Volume resample_isotropic(const Volume& vol, double target,
                          Interpolation mode = Interpolation::kTrilinear);
LabelVolume resample_isotropic(const LabelVolume& labels, double target);

/// Zero mean, unit (population) std over all voxels. Throws kDegenerate on a
/// constant volume.
Volume normalize(const Volume& vol);

/// Resample to `target` mm then normalize.
Volume preprocess(const Volume& vol, double target);

}  // namespace vfd
