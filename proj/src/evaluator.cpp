// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#include "vfd/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "vfd/error.hpp"

namespace vfd {

FoldPlan make_folds(const std::vector<CaseLabel>& cases, int k, int min_negatives,
                    std::uint64_t seed, double validation_fraction) {
  if (k < 2) fail(ErrorCode::kConfig, "need at least 2 folds");
  if (min_negatives < 0) fail(ErrorCode::kConfig, "min_negatives must be >= 0");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    fail(ErrorCode::kConfig, "validation fraction must lie in [0, 1)");
  std::vector<std::size_t> neg, pos;
  for (std::size_t i = 0; i < cases.size(); ++i) (cases[i].positive ? pos : neg).push_back(i);
  const std::size_t required = static_cast<std::size_t>(k) * static_cast<std::size_t>(min_negatives);
  if (neg.size() < required)
    fail(ErrorCode::kConfig, "stratified " + std::to_string(k) + "-fold split needs at least " +
                                 std::to_string(required) + " negative cases, found " +
                                 std::to_string(neg.size()));
  if (cases.size() < static_cast<std::size_t>(k))
    fail(ErrorCode::kConfig, "fewer cases than folds");

  std::mt19937_64 rng(seed);
  std::shuffle(neg.begin(), neg.end(), rng);
  std::shuffle(pos.begin(), pos.end(), rng);

  FoldPlan plan;
  plan.seed = seed;
  plan.folds.resize(static_cast<std::size_t>(k));
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(k));
  std::size_t dealt = 0;
  for (std::size_t i : neg) {
    members[dealt % k].push_back(i);
    ++plan.folds[dealt % k].test_negatives;
    ++dealt;
  }
  for (std::size_t i : pos) members[dealt++ % k].push_back(i);

  for (int f = 0; f < k; ++f) {
    Fold& fold = plan.folds[static_cast<std::size_t>(f)];
    std::sort(members[f].begin(), members[f].end());
    for (std::size_t i : members[f]) fold.test_ids.push_back(cases[i].case_id);

    std::vector<std::size_t> pool;
    for (int g = 0; g < k; ++g)
      if (g != f) pool.insert(pool.end(), members[g].begin(), members[g].end());
    std::sort(pool.begin(), pool.end());
    std::size_t n_val = 0;
    if (validation_fraction > 0.0 && pool.size() > 1) {
      n_val = static_cast<std::size_t>(std::lround(validation_fraction * pool.size()));
      n_val = std::clamp<std::size_t>(n_val, 1, pool.size() - 1);
    }
    std::vector<std::size_t> order = pool;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::sort(val.begin(), val.end());
    for (std::size_t i : pool) {
      if (std::binary_search(val.begin(), val.end(), i))
        fold.validation_ids.push_back(cases[i].case_id);
      else
        fold.train_ids.push_back(cases[i].case_id);
    }
  }
  return plan;
}

double trapezoid_auc(const std::vector<RocPoint>& points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i)
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) * 0.5;
  return area;
}

namespace {

void count_classes(std::span<const int> labels, double& pos, double& neg) {
  pos = neg = 0;
  for (int l : labels) (l ? pos : neg) += 1;
  if (pos == 0 || neg == 0)
    fail(ErrorCode::kEvaluation, "ROC needs at least one positive and one negative label");
}

std::vector<RocPoint> sorted_with_anchors(const std::vector<RocPoint>& points) {
  std::vector<RocPoint> p = points;
  p.push_back({0.0, 0.0, "anchor"});
  p.push_back({1.0, 1.0, "anchor"});
  std::stable_sort(p.begin(), p.end(), [](const RocPoint& a, const RocPoint& b) {
    return a.fpr < b.fpr || (a.fpr == b.fpr && a.tpr < b.tpr);
  });
  return p;
}

double cross(const RocPoint& o, const RocPoint& a, const RocPoint& b) {
  return (a.fpr - o.fpr) * (b.tpr - o.tpr) - (a.tpr - o.tpr) * (b.fpr - o.fpr);
}

std::vector<double> fpr_grid(int n) {
  std::vector<double> g(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
  return g;
}

BootstrapResult summarize(const std::vector<double>& aucs,
                          const std::vector<std::vector<double>>& curves, int grid_points) {
  BootstrapResult r;
  r.resamples = static_cast<int>(aucs.size());
  r.fpr_grid = fpr_grid(grid_points);
  r.mean_tpr.assign(r.fpr_grid.size(), 0.0);
  if (aucs.empty()) return r;
  const double n = static_cast<double>(aucs.size());
  r.mean_auc = std::accumulate(aucs.begin(), aucs.end(), 0.0) / n;
  double sq = 0.0;
  for (double a : aucs) sq += (a - r.mean_auc) * (a - r.mean_auc);
  r.std_auc = aucs.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
  for (const auto& c : curves)
    for (std::size_t i = 0; i < c.size(); ++i) r.mean_tpr[i] += c[i] / n;
  return r;
}

std::vector<double> curve_on_grid(const RocCurve& curve, const std::vector<double>& grid) {
  std::vector<double> out(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) out[i] = interpolate_tpr(curve, grid[i]);
  return out;
}

}  // namespace

RocCurve roc_from_scores(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) fail(ErrorCode::kArgument, "scores/labels size mismatch");
  double pos = 0, neg = 0;
  count_classes(labels, pos, neg);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  RocCurve c;
  c.points.push_back({0.0, 0.0, "anchor"});
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] ? tp : fp) += 1;
      ++i;
    }
    char tag[32];
    std::snprintf(tag, sizeof tag, "%.9g", s);
    c.points.push_back({fp / neg, tp / pos, tag});
  }
  c.auc = trapezoid_auc(c.points);
  return c;
}

RocCurve roc_convex_hull(const std::vector<RocPoint>& points) {
  const auto sorted = sorted_with_anchors(points);
  std::vector<RocPoint> hull;
  for (const auto& p : sorted) {
    if (p.fpr < 0.0 || p.fpr > 1.0 || p.tpr < 0.0 || p.tpr > 1.0)
      fail(ErrorCode::kArgument, "ROC points must lie in the unit square");
    while (hull.size() >= 2 && cross(hull[hull.size() - 2], hull.back(), p) >= 0.0)
      hull.pop_back();
    hull.push_back(p);
  }
  RocCurve c;
  c.points = std::move(hull);
  c.auc = trapezoid_auc(c.points);
  return c;
}

RocCurve roc_polyline(const std::vector<RocPoint>& points) {
  RocCurve c;
  c.points = sorted_with_anchors(points);
  c.auc = trapezoid_auc(c.points);
  return c;
}

double interpolate_tpr(const RocCurve& curve, double fpr) {
  const auto& p = curve.points;
  double best = 0.0;
  bool found = false;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].fpr == fpr) {
      best = found ? std::max(best, p[i].tpr) : p[i].tpr;
      found = true;
    }
    if (i + 1 < p.size() && p[i].fpr < fpr && fpr < p[i + 1].fpr) {
      const double t = (fpr - p[i].fpr) / (p[i + 1].fpr - p[i].fpr);
      const double v = p[i].tpr + t * (p[i + 1].tpr - p[i].tpr);
      best = found ? std::max(best, v) : v;
      found = true;
    }
  }
  return best;
}

BootstrapResult bootstrap_roc(std::span<const double> scores, std::span<const int> labels,
                              int n, std::uint64_t seed, int grid_points) {
  if (scores.size() != labels.size()) fail(ErrorCode::kArgument, "scores/labels size mismatch");
  double npos = 0, nneg = 0;
  count_classes(labels, npos, nneg);
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_pos(0, pos.size() - 1), pick_neg(0, neg.size() - 1);
  const auto grid = fpr_grid(grid_points);
  std::vector<double> aucs;
  std::vector<std::vector<double>> curves;
  std::vector<double> s(labels.size());
  std::vector<int> l(labels.size());
  for (int r = 0; r < n; ++r) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < pos.size(); ++i, ++k) {
      s[k] = scores[pos[pick_pos(rng)]];
      l[k] = 1;
    }
    for (std::size_t i = 0; i < neg.size(); ++i, ++k) {
      s[k] = scores[neg[pick_neg(rng)]];
      l[k] = 0;
    }
    const RocCurve c = roc_from_scores(s, l);
    aucs.push_back(c.auc);
    curves.push_back(curve_on_grid(c, grid));
  }
  return summarize(aucs, curves, grid_points);
}

namespace {

RocCurve hull_weighted(const std::vector<std::vector<bool>>& decisions,
                       std::span<const int> labels, const std::vector<double>& weight,
                       const std::vector<std::string>& tags) {
  double pos = 0, neg = 0;
  for (std::size_t c = 0; c < labels.size(); ++c) (labels[c] ? pos : neg) += weight[c];
  if (pos == 0 || neg == 0)
    fail(ErrorCode::kEvaluation, "ROC needs at least one positive and one negative case");
  std::vector<RocPoint> pts;
  pts.reserve(decisions.size());
  for (std::size_t g = 0; g < decisions.size(); ++g) {
    if (decisions[g].size() != labels.size())
      fail(ErrorCode::kArgument, "decision row length differs from label count");
    double tp = 0, fp = 0;
    for (std::size_t c = 0; c < labels.size(); ++c)
      if (decisions[g][c]) (labels[c] ? tp : fp) += weight[c];
    pts.push_back({fp / neg, tp / pos, g < tags.size() ? tags[g] : std::to_string(g)});
  }
  return roc_convex_hull(pts);
}

}  // namespace

RocCurve hull_from_decisions(const std::vector<std::vector<bool>>& decisions,
                             std::span<const int> labels, const std::vector<std::string>& tags) {
  return hull_weighted(decisions, labels, std::vector<double>(labels.size(), 1.0), tags);
}

BootstrapResult bootstrap_hull_roc(const std::vector<std::vector<bool>>& decisions,
                                   std::span<const int> labels, int n, std::uint64_t seed,
                                   int grid_points) {
  double npos = 0, nneg = 0;
  count_classes(labels, npos, nneg);
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_pos(0, pos.size() - 1), pick_neg(0, neg.size() - 1);
  const auto grid = fpr_grid(grid_points);
  std::vector<double> aucs;
  std::vector<std::vector<double>> curves;
  std::vector<double> weight(labels.size());
  for (int r = 0; r < n; ++r) {
    std::fill(weight.begin(), weight.end(), 0.0);
    for (std::size_t i = 0; i < pos.size(); ++i) weight[pos[pick_pos(rng)]] += 1.0;
    for (std::size_t i = 0; i < neg.size(); ++i) weight[neg[pick_neg(rng)]] += 1.0;
    const RocCurve c = hull_weighted(decisions, labels, weight, {});
    aucs.push_back(c.auc);
    curves.push_back(curve_on_grid(c, grid));
  }
  return summarize(aucs, curves, grid_points);
}

OperatingPoint operating_point(const RocCurve& curve, const OperatingCriterion& criterion) {
  if (curve.points.empty()) fail(ErrorCode::kArgument, "operating point of an empty curve");
  constexpr double kTol = 1e-12;
  const auto& p = curve.points;
  auto make = [](const RocPoint& q, bool feasible) {
    return OperatingPoint{q.tpr, 1.0 - q.fpr, q.tag, feasible};
  };
  std::size_t best = p.size();
  switch (criterion.kind) {
    case CriterionKind::kYouden:
      best = 0;
      for (std::size_t i = 1; i < p.size(); ++i)
        if (p[i].tpr - p[i].fpr > p[best].tpr - p[best].fpr) best = i;
      return make(p[best], true);
    case CriterionKind::kMinSpecificity:
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (1.0 - p[i].fpr < criterion.value - kTol) continue;
        if (best == p.size() || p[i].tpr > p[best].tpr ||
            (p[i].tpr == p[best].tpr && p[i].fpr < p[best].fpr))
          best = i;
      }
      if (best != p.size()) return make(p[best], true);
      best = 0;
      for (std::size_t i = 1; i < p.size(); ++i)
        if (p[i].fpr < p[best].fpr || (p[i].fpr == p[best].fpr && p[i].tpr > p[best].tpr))
          best = i;
      return make(p[best], false);
    case CriterionKind::kMinRecall:
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i].tpr < criterion.value - kTol) continue;
        if (best == p.size() || p[i].fpr < p[best].fpr ||
            (p[i].fpr == p[best].fpr && p[i].tpr > p[best].tpr))
          best = i;
      }
      if (best != p.size()) return make(p[best], true);
      best = 0;
      for (std::size_t i = 1; i < p.size(); ++i)
        if (p[i].tpr > p[best].tpr || (p[i].tpr == p[best].tpr && p[i].fpr < p[best].fpr))
          best = i;
      return make(p[best], false);
  }
  return make(p.front(), false);
}

}  // namespace vfd
