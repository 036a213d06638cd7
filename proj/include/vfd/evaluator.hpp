// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace vfd {

struct CaseLabel {
  std::string case_id;
  bool positive = false;
};

struct Fold {
  std::vector<std::string> test_ids;
  std::vector<std::string> train_ids;       // excludes validation_ids
  std::vector<std::string> validation_ids;  // held out of training for annealing
  int test_negatives = 0;
};

struct FoldPlan {
  std::vector<Fold> folds;
  std::uint64_t seed = 0;
};

/// Stratified k-fold split: negatives and positives are shuffled and dealt
/// round-robin so every fold gets at least `min_negatives` negatives and fold
/// sizes differ by at most one. Each training portion reserves
/// round(validation_fraction * n) of its cases (at least one) for validation.
FoldPlan make_folds(const std::vector<CaseLabel>& cases, int k, int min_negatives,
                    std::uint64_t seed, double validation_fraction = 0.15);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  std::string tag;
};

struct RocCurve {
  std::vector<RocPoint> points;  // sorted by FPR, includes (0,0) and (1,1)
  double auc = 0.0;
};

/// Trapezoid rule over points in the given order.
double trapezoid_auc(const std::vector<RocPoint>& points);

/// Threshold sweep over distinct scores (ties move together).
RocCurve roc_from_scores(std::span<const double> scores, std::span<const int> labels);

/// Upper-left convex hull of the points plus the (0,0) and (1,1) anchors.
RocCurve roc_convex_hull(const std::vector<RocPoint>& points);

/// Points sorted by (FPR, TPR) with anchors added, no hull.
RocCurve roc_polyline(const std::vector<RocPoint>& points);

/// TPR of the curve at `fpr` by linear interpolation; on vertical runs the
/// highest TPR is used.
double interpolate_tpr(const RocCurve& curve, double fpr);

struct BootstrapResult {
  double mean_auc = 0.0;
  double std_auc = 0.0;
  std::vector<double> fpr_grid;
  std::vector<double> mean_tpr;
  int resamples = 0;
};

/// Class-stratified resampling with replacement: every resample keeps the
/// original positive and negative counts.
BootstrapResult bootstrap_roc(std::span<const double> scores, std::span<const int> labels,
                              int n, std::uint64_t seed, int grid_points = 101);

/// Bootstrap of the convex-hull ROC built from per-classifier decisions;
/// decisions[g][c] is classifier g on case c.
BootstrapResult bootstrap_hull_roc(const std::vector<std::vector<bool>>& decisions,
                                   std::span<const int> labels, int n, std::uint64_t seed,
                                   int grid_points = 101);

/// Hull ROC from per-classifier decisions; tags carry the classifier index.
RocCurve hull_from_decisions(const std::vector<std::vector<bool>>& decisions,
                             std::span<const int> labels,
                             const std::vector<std::string>& tags = {});

enum class CriterionKind { kYouden, kMinSpecificity, kMinRecall };

struct OperatingCriterion {
  CriterionKind kind = CriterionKind::kYouden;
  double value = 0.0;
};

struct OperatingPoint {
  double recall = 0.0;
  double specificity = 0.0;
  std::string tag;
  bool feasible = true;
};

OperatingPoint operating_point(const RocCurve& curve, const OperatingCriterion& criterion);

}  // namespace vfd
