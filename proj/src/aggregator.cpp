// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#include "vfd/aggregator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vfd {

void PatientHyperparams::validate() const {
  if (!(probability_threshold >= 0.0 && probability_threshold <= 1.0))
    fail(ErrorCode::kArgument, "probability threshold must lie in [0, 1]");
}

namespace {

// Union-find over provisional labels.
struct DisjointSet {
  std::vector<std::uint32_t> parent;

  std::uint32_t make() {
    parent.push_back(static_cast<std::uint32_t>(parent.size()));
    return parent.back();
  }
  std::uint32_t find(std::uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent[a] = b;
  }
};

}  // namespace

std::vector<Component> connected_components(const Grid<std::uint8_t>& mask) {
  const auto& d = mask.dims();
  constexpr std::uint32_t kNone = 0xffffffffu;
  std::vector<std::uint32_t> label(mask.size(), kNone);
  DisjointSet sets;

  // First pass: the 13 already-visited neighbours of the 26-neighbourhood.
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x) {
        const std::size_t i = mask.index(x, y, z);
        if (!mask[i]) continue;
        std::uint32_t current = kNone;
        for (int dz = -1; dz <= 0; ++dz)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
              const int nx = x + dx, ny = y + dy, nz = z + dz;
              if (!mask.contains(nx, ny, nz)) continue;
              const std::uint32_t l = label[mask.index(nx, ny, nz)];
              if (l == kNone) continue;
              if (current == kNone) {
                current = l;
              } else {
                sets.unite(current, l);
              }
            }
        label[i] = current == kNone ? sets.make() : current;
      }

  // Second pass: resolve roots, collect statistics in first-voxel order.
  std::vector<std::int64_t> slot(sets.parent.size(), -1);
  std::vector<Component> out;
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x) {
        const std::uint32_t l = label[mask.index(x, y, z)];
        if (l == kNone) continue;
        const std::uint32_t root = sets.find(l);
        if (slot[root] < 0) {
          slot[root] = static_cast<std::int64_t>(out.size());
          out.push_back({0, {x, y, z}, {x, y, z}});
        }
        Component& c = out[static_cast<std::size_t>(slot[root])];
        ++c.size;
        const std::array<int, 3> p{x, y, z};
        for (int a = 0; a < 3; ++a) {
          c.bbox_min[a] = std::min(c.bbox_min[a], p[a]);
          c.bbox_max[a] = std::max(c.bbox_max[a], p[a]);
        }
      }
  return out;
}

namespace {

Grid<std::uint8_t> threshold_fracture(const ProbabilityMap& map, double threshold) {
  Grid<std::uint8_t> mask(map.dims(), map.spacing(), map.origin(), 0);
  const auto& f = map.fracture();
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = f[i] >= threshold ? 1 : 0;
  return mask;
}

}  // namespace

PatientResult patient_detect(const ProbabilityMap& map, const PatientHyperparams& hp) {
  hp.validate();
  PatientResult r;
  for (const auto& c : connected_components(threshold_fracture(map, hp.probability_threshold))) {
    if (c.size < hp.noise_threshold) continue;
    r.fracture_voxel_count += c.size;
    r.components.push_back(c);
  }
  r.decision = r.fracture_voxel_count > 0;
  return r;
}

std::vector<PatientHyperparams> hyperparam_grid(const std::vector<double>& probability_thresholds,
                                                const std::vector<std::size_t>& noise_thresholds) {
  std::vector<PatientHyperparams> grid;
  for (double p : probability_thresholds)
    for (std::size_t n : noise_thresholds) grid.push_back({p, n});
  return grid;
}

std::vector<std::vector<bool>> patient_decisions(const std::vector<const ProbabilityMap*>& maps,
                                                 const std::vector<PatientHyperparams>& grid) {
  for (const auto& hp : grid) hp.validate();
  // Decision is "largest component >= noise threshold" (and non-empty), so one
  // labeling per (map, probability threshold) serves every noise threshold.
  std::vector<double> thresholds;
  for (const auto& hp : grid) thresholds.push_back(hp.probability_threshold);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  std::vector<std::vector<std::size_t>> largest(maps.size(),
                                                std::vector<std::size_t>(thresholds.size(), 0));
  for (std::size_t m = 0; m < maps.size(); ++m)
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      std::size_t best = 0;
      for (const auto& c : connected_components(threshold_fracture(*maps[m], thresholds[t])))
        best = std::max(best, c.size);
      largest[m][t] = best;
    }

  std::vector<std::vector<bool>> decisions(grid.size(), std::vector<bool>(maps.size(), false));
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const auto t = static_cast<std::size_t>(
        std::lower_bound(thresholds.begin(), thresholds.end(), grid[g].probability_threshold) -
        thresholds.begin());
    for (std::size_t m = 0; m < maps.size(); ++m) {
      const std::size_t big = largest[m][t];
      decisions[g][m] = big > 0 && big >= grid[g].noise_threshold;
    }
  }
  return decisions;
}

std::vector<SweepPoint> sweep_hyperparams(const std::vector<const ProbabilityMap*>& maps,
                                          const std::vector<bool>& positive,
                                          const std::vector<PatientHyperparams>& grid) {
  if (maps.size() != positive.size())
    fail(ErrorCode::kArgument, "one ground-truth label per map required");
  const auto pos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  const auto neg = static_cast<double>(positive.size()) - pos;
  if (pos == 0 || neg == 0)
    fail(ErrorCode::kEvaluation, "hyperparameter sweep needs positive and negative cases");
  const auto decisions = patient_decisions(maps, grid);
  std::vector<SweepPoint> out;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double tp = 0, fp = 0;
    for (std::size_t m = 0; m < maps.size(); ++m)
      if (decisions[g][m]) (positive[m] ? tp : fp) += 1;
    out.push_back({grid[g], fp / neg, tp / pos});
  }
  return out;
}

VertebraScore vertebra_score(const ProbabilityMap& map, const Vec3& centroid, int cube_size,
                             double sigma_mm, std::string name) {
  if (cube_size < 1) fail(ErrorCode::kArgument, "cube size must be >= 1");
  if (!(sigma_mm > 0.0)) fail(ErrorCode::kArgument, "kernel sigma must be positive");
  const Volume& f = map.fracture();
  if (!f.contains_point(centroid))
    fail(ErrorCode::kArgument, "centroid outside the probability map");
  const auto c = f.nearest_voxel(centroid);
  const int lo_off = -(cube_size / 2);
  const int hi_off = lo_off + cube_size - 1;
  const double inv_two_sigma2 = 1.0 / (2.0 * sigma_mm * sigma_mm);

  double num = 0.0, den = 0.0;
  for (int z = std::max(0, c[2] + lo_off); z <= std::min(f.dims()[2] - 1, c[2] + hi_off); ++z)
    for (int y = std::max(0, c[1] + lo_off); y <= std::min(f.dims()[1] - 1, c[1] + hi_off); ++y)
      for (int x = std::max(0, c[0] + lo_off); x <= std::min(f.dims()[0] - 1, c[0] + hi_off);
           ++x) {
        const Vec3 p = f.physical(x, y, z);
        const double d2 = (p[0] - centroid[0]) * (p[0] - centroid[0]) +
                          (p[1] - centroid[1]) * (p[1] - centroid[1]) +
                          (p[2] - centroid[2]) * (p[2] - centroid[2]);
        const double w = std::exp(-d2 * inv_two_sigma2);
        num += w * f(x, y, z);
        den += w;
      }
  VertebraScore s;
  s.name = std::move(name);
  s.centroid = centroid;
  s.score = den > 0.0 ? std::clamp(num / den, 0.0, 1.0) : 0.0;
  return s;
}

std::vector<Vec3> perturb_centroids(const std::vector<Vec3>& centroids, double sigma_mm,
                                    std::mt19937_64& rng, const Dims3& dims, const Vec3& spacing,
                                    const Vec3& origin) {
  if (!(sigma_mm >= 0.0)) fail(ErrorCode::kArgument, "centroid noise sigma must be >= 0");
  std::vector<Vec3> out = centroids;
  if (sigma_mm == 0.0) return out;
  std::normal_distribution<double> noise(0.0, sigma_mm);
  for (Vec3& c : out)
    for (int a = 0; a < 3; ++a) {
      const double hi = origin[a] + (dims[a] - 1) * spacing[a];
      c[a] = std::clamp(c[a] + noise(rng), origin[a], hi);
    }
  return out;
}

}  // namespace vfd
