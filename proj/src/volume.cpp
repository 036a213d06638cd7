// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#include "vfd/volume.hpp"

#include <algorithm>
#include <cmath>

namespace vfd {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kIo: return "io";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kArgument: return "argument";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kDegenerate: return "degenerate";
    case ErrorCode::kEvaluation: return "evaluation";
    case ErrorCode::kInternal: return "internal";
  }
  return "unknown";
}

VolumeStats compute_stats(const Volume& vol) {
  VolumeStats s;
  s.voxel_count = vol.size();
  if (vol.empty()) return s;
  double sum = 0.0;
  for (float v : vol.data()) sum += v;
  s.mean = sum / static_cast<double>(vol.size());
  double sq = 0.0;
  for (float v : vol.data()) {
    const double d = v - s.mean;
    sq += d * d;
  }
  s.std = std::sqrt(sq / static_cast<double>(vol.size()));
  return s;
}

Dims3 resampled_dims(const Dims3& dims, const Vec3& spacing, double target) {
  if (!(target > 0.0)) fail(ErrorCode::kArgument, "resampling target must be positive");
  Dims3 out{};
  for (int a = 0; a < 3; ++a)
    out[a] = std::max(1, static_cast<int>(std::lround(dims[a] * spacing[a] / target)));
  return out;
}

namespace {

struct AxisSample {
  int lo;
  int hi;
  double frac;
};

std::vector<AxisSample> axis_samples(int out_dim, int in_dim, double in_spacing,
                                     double target) {
  std::vector<AxisSample> s(static_cast<std::size_t>(out_dim));
  for (int i = 0; i < out_dim; ++i) {
    double c = i * target / in_spacing;
    c = std::clamp(c, 0.0, static_cast<double>(in_dim - 1));
    const int lo = static_cast<int>(std::floor(c));
    s[static_cast<std::size_t>(i)] = {lo, std::min(lo + 1, in_dim - 1), c - lo};
  }
  return s;
}

std::vector<int> axis_nearest(int out_dim, int in_dim, double in_spacing, double target) {
  std::vector<int> s(static_cast<std::size_t>(out_dim));
  for (int i = 0; i < out_dim; ++i) {
    const long n = std::lround(i * target / in_spacing);
    s[static_cast<std::size_t>(i)] = static_cast<int>(std::clamp<long>(n, 0, in_dim - 1));
  }
  return s;
}

template <typename T>
Grid<T> resample_nearest(const Grid<T>& in, double target) {
  const Dims3 od = resampled_dims(in.dims(), in.spacing(), target);
  Grid<T> out(od, {target, target, target}, in.origin());
  std::array<std::vector<int>, 3> idx;
  for (int a = 0; a < 3; ++a)
    idx[a] = axis_nearest(od[a], in.dims()[a], in.spacing()[a], target);
  for (int z = 0; z < od[2]; ++z)
    for (int y = 0; y < od[1]; ++y)
      for (int x = 0; x < od[0]; ++x)
        out(x, y, z) = in(idx[0][x], idx[1][y], idx[2][z]);
  return out;
}

}  // namespace

Volume resample_isotropic(const Volume& vol, double target, Interpolation mode) {
  if (!(target > 0.0)) fail(ErrorCode::kArgument, "resampling target must be positive");
  if (mode == Interpolation::kNearest) return resample_nearest(vol, target);

  const Dims3 od = resampled_dims(vol.dims(), vol.spacing(), target);
  Volume out(od, {target, target, target}, vol.origin());
  const auto sx = axis_samples(od[0], vol.dims()[0], vol.spacing()[0], target);
  const auto sy = axis_samples(od[1], vol.dims()[1], vol.spacing()[1], target);
  const auto sz = axis_samples(od[2], vol.dims()[2], vol.spacing()[2], target);
  for (int z = 0; z < od[2]; ++z) {
    const auto& cz = sz[static_cast<std::size_t>(z)];
    for (int y = 0; y < od[1]; ++y) {
      const auto& cy = sy[static_cast<std::size_t>(y)];
      for (int x = 0; x < od[0]; ++x) {
        const auto& cx = sx[static_cast<std::size_t>(x)];
        auto lerp_x = [&](int yy, int zz) {
          return vol(cx.lo, yy, zz) * (1.0 - cx.frac) + vol(cx.hi, yy, zz) * cx.frac;
        };
        const double c00 = lerp_x(cy.lo, cz.lo), c10 = lerp_x(cy.hi, cz.lo);
        const double c01 = lerp_x(cy.lo, cz.hi), c11 = lerp_x(cy.hi, cz.hi);
        const double c0 = c00 * (1.0 - cy.frac) + c10 * cy.frac;
        const double c1 = c01 * (1.0 - cy.frac) + c11 * cy.frac;
        out(x, y, z) = static_cast<float>(c0 * (1.0 - cz.frac) + c1 * cz.frac);
      }
    }
  }
  return out;
}

LabelVolume resample_isotropic(const LabelVolume& labels, double target) {
  return resample_nearest(labels, target);
}

Volume normalize(const Volume& vol) {
  if (vol.size() < 2) fail(ErrorCode::kDegenerate, "normalize needs at least two voxels");
  const VolumeStats s = compute_stats(vol);
  if (!(s.std > 0.0)) fail(ErrorCode::kDegenerate, "cannot normalize a constant volume");
  Volume out = vol;
  for (float& v : out.data()) v = static_cast<float>((v - s.mean) / s.std);
  return out;
}

Volume preprocess(const Volume& vol, double target) {
  return normalize(resample_isotropic(vol, target, Interpolation::kTrilinear));
}

}  // namespace vfd
