// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <set>

#include <gtest/gtest.h>
#include <json.hpp>

#include "test_util.hpp"
#include "vfd/experiment.hpp"

namespace vfd {
namespace {

// Small volumes and a two-fold, one-epoch regime: checks structure, not accuracy.
ExperimentConfig tiny_experiment() {
  ExperimentConfig cfg = parse_experiment_config(R"({
    "seed": 3,
    "phantom": {"n_cases": 8, "dims": [32, 32, 56], "body_radii_mm": [8, 8, 7],
                "vertebra_spacing_mm": 18, "vertebrae_per_case": [2, 2],
                "fracture_prevalence": 0.5, "min_negative_cases": 4},
    "labels": {"radii_mm": [8, 8, 7]},
    "network": {"variant": "3D", "conv_channels": [2, 2, 2, 2, 2, 2, 2, 2], "fc_channels": [4]},
    "training": {"epochs": 1, "segment_batch": 2, "batches_per_epoch": 1,
                 "segment_output": [3, 3, 3], "validation_segments": 2},
    "inference": {"tile": [32, 32, 40]},
    "aggregation": {"probability_thresholds": [0.2, 0.5], "noise_thresholds": [0, 10]},
    "evaluation": {"folds": 2, "bootstrap_resamples": 20, "grid_points": 11}
  })");
  return cfg;
}

std::vector<ExperimentCase> phantom_cases(const ExperimentConfig& cfg) {
  std::vector<ExperimentCase> out;
  for (const auto& plan : plan_corpus(cfg.phantom)) {
    PhantomCase c = render_case(cfg.phantom, plan);
    out.push_back({c.case_id, std::move(c.image), std::move(c.annotations)});
  }
  return out;
}

TEST(Experiment, PrepareCaseBuildsLabelsOnResampledGrid) {
  ExperimentConfig cfg = tiny_experiment();
  const auto cases = phantom_cases(cfg);
  ExperimentCase c = cases[0];
  // Anisotropic input: every other slice along z at twice the spacing.
  Volume coarse({c.image.dims()[0], c.image.dims()[1], c.image.dims()[2] / 2}, {1.0, 1.0, 2.0});
  for (int z = 0; z < coarse.dims()[2]; ++z)
    for (int y = 0; y < coarse.dims()[1]; ++y)
      for (int x = 0; x < coarse.dims()[0]; ++x) coarse(x, y, z) = c.image(x, y, 2 * z);
  c.image = coarse;
  const TrainingCase t = prepare_case(c, cfg);
  EXPECT_EQ(t.image.spacing(), (Vec3{1.0, 1.0, 1.0}));
  EXPECT_TRUE(t.labels.same_geometry(t.image));
  const auto s = compute_stats(t.image);
  EXPECT_NEAR(s.mean, 0.0, 1e-5);
  EXPECT_NEAR(s.std, 1.0, 1e-5);
}

TEST(Experiment, CrossValidationStructure) {
  ExperimentConfig cfg = tiny_experiment();
  const auto cases = phantom_cases(cfg);
  testing::TempDir ckpt;
  std::vector<std::string> progress;
  const ExperimentReport r = run_cross_validation(
      cases, cfg, [&](const std::string& m) { progress.push_back(m); }, ckpt.path().string());
  ASSERT_EQ(r.folds.size(), 2u);
  ASSERT_EQ(r.cases.size(), cases.size());
  EXPECT_EQ(r.grid.size(), 4u);
  EXPECT_FALSE(progress.empty());

  // Test folds partition the corpus; training never sees its test cases.
  std::multiset<std::string> tested;
  for (const auto& f : r.folds) {
    tested.insert(f.test_ids.begin(), f.test_ids.end());
    std::set<std::string> learn(f.train_ids.begin(), f.train_ids.end());
    learn.insert(f.validation_ids.begin(), f.validation_ids.end());
    for (const auto& id : f.test_ids) EXPECT_FALSE(learn.count(id)) << id;
    EXPECT_EQ(f.log.size(), 1u);
    EXPECT_TRUE(std::filesystem::exists(ckpt.path() / ("fold" + std::to_string(f.fold) + ".ckpt")));
  }
  EXPECT_EQ(tested.size(), cases.size());
  EXPECT_EQ(std::set<std::string>(tested.begin(), tested.end()).size(), cases.size());

  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = r.cases[i];
    EXPECT_EQ(c.case_id, cases[i].case_id);
    EXPECT_EQ(c.positive, case_is_positive(cases[i].annotations));
    EXPECT_EQ(c.decisions.size(), r.grid.size());
    EXPECT_EQ(c.vertebrae.size(), cases[i].annotations.annotations.size());
    for (const auto& v : c.vertebrae) {
      EXPECT_GE(v.score, 0.0);
      EXPECT_LE(v.score, 1.0);
    }
    EXPECT_EQ(c.slice.width, 32);
    EXPECT_EQ(c.slice.height, 56);
  }
  EXPECT_EQ(r.patient_sweep.size(), r.grid.size());
  EXPECT_GE(r.patient_hull.auc, 0.0);
  EXPECT_LE(r.patient_hull.auc, 1.0);
  EXPECT_EQ(r.patient_bootstrap.resamples, 20);
  EXPECT_EQ(r.vertebra_bootstrap.fpr_grid.size(), 11u);

  // Report body, digest and artifacts.
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j.at("digest").get<std::string>(), r.digest());
  EXPECT_EQ(r.digest().size(), 64u);
  EXPECT_FALSE(r.to_json().find("wall_seconds") != std::string::npos);
  testing::TempDir out;
  write_report(r, out.path().string());
  for (const char* f : {"report.json", "training_log.jsonl", "roc_patient.png", "roc_vertebra.png"})
    EXPECT_TRUE(std::filesystem::exists(out.path() / f)) << f;
}

TEST(Experiment, SingleClassCorpusIsEvaluationError) {
  ExperimentConfig cfg = tiny_experiment();
  cfg.phantom.fracture_prevalence = 1.0;
  cfg.phantom.min_negative_cases = 0;
  cfg.phantom.n_cases = 4;
  cfg.evaluation.min_negatives = 0;
  const auto cases = phantom_cases(cfg);
  for (const auto& c : cases) ASSERT_TRUE(case_is_positive(c.annotations));
  try {
    run_cross_validation(cases, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEvaluation) << e.what();
  }
}

TEST(Experiment, TooFewNegativesIsConfigError) {
  ExperimentConfig cfg = tiny_experiment();
  cfg.phantom.min_negative_cases = 1;
  cfg.phantom.fracture_prevalence = 1.0;
  auto cases = phantom_cases(cfg);
  try {
    run_cross_validation(cases, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig) << e.what();
  }
}

TEST(Experiment, DuplicateCaseIdsRejected) {
  ExperimentConfig cfg = tiny_experiment();
  auto cases = phantom_cases(cfg);
  cases[1].case_id = cases[0].case_id;
  EXPECT_THROW(run_cross_validation(cases, cfg), Error);
}

}  // namespace
}  // namespace vfd
