// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vfd/aggregator.hpp"
#include "vfd/config.hpp"
#include "vfd/evaluator.hpp"
#include "vfd/label_builder.hpp"
#include "vfd/phantom.hpp"
#include "vfd/trainer.hpp"

namespace vfd {

/// A case as handed to the experiment: raw image plus sparse annotations.
/// Dense labels are rebuilt on the preprocessed grid.
struct ExperimentCase {
  std::string case_id;
  Volume image;
  AnnotationSet annotations;
};

/// True when any annotation maps to the fracture class.
bool case_is_positive(const AnnotationSet& ann);

struct VertebraResult {
  std::string name;
  Grade grade = Grade::kNormal;
  bool fracture = false;
  Vec3 centroid{0.0, 0.0, 0.0};  // after simulated localization noise
  double score = 0.0;
};

/// Mid-sagittal (constant x) slice of an image and its prediction.
struct SagittalSlice {
  int width = 0;   // y extent
  int height = 0;  // z extent
  std::vector<float> image, normal, fracture;
};

struct CaseResult {
  std::string case_id;
  int fold = 0;
  bool positive = false;
  std::vector<bool> decisions;  // one per aggregation grid point
  std::vector<VertebraResult> vertebrae;
  SagittalSlice slice;
};

struct FoldResult {
  int fold = 0;
  std::vector<std::string> train_ids, validation_ids, test_ids;
  std::vector<EpochLog> log;
  std::optional<RocCurve> patient_hull;   // absent when the fold is single-class
  std::optional<RocCurve> vertebra_roc;
};

struct ExperimentReport {
  std::string config_json;
  std::vector<PatientHyperparams> grid;
  std::vector<FoldResult> folds;
  std::vector<CaseResult> cases;  // in input order
  std::vector<SweepPoint> patient_sweep;
  RocCurve patient_hull;
  BootstrapResult patient_bootstrap;
  OperatingPoint patient_youden, patient_at_specificity;
  RocCurve vertebra_roc;
  BootstrapResult vertebra_bootstrap;
  OperatingPoint vertebra_youden, vertebra_at_specificity;

  /// Canonical JSON without wall-clock times, including the digest.
  std::string to_json() const;
  /// SHA-256 (hex) of the canonical JSON body.
  std::string digest() const;
};

using ProgressSink = std::function<void(const std::string&)>;

/// Stratified k-fold cross-validation: per fold train on the training split
/// minus its validation subset, infer the held-out cases, aggregate; then pool
/// the held-out predictions into a patient-level hull ROC and a vertebra-level
/// score ROC, both bootstrapped. If `checkpoint_dir` is non-empty each fold's
/// network is saved there.
ExperimentReport run_cross_validation(const std::vector<ExperimentCase>& cases,
                                      const ExperimentConfig& cfg,
                                      const ProgressSink& progress = {},
                                      const std::string& checkpoint_dir = {});

/// Preprocessed image and labels rebuilt from the annotations.
TrainingCase prepare_case(const ExperimentCase& c, const ExperimentConfig& cfg);

/// All cases of a phantom corpus (images and annotations).
std::vector<ExperimentCase> load_corpus_cases(const std::string& corpus_dir);

/// Trains one network on all cases, holding out round(validation_fraction *
/// n) of them (at least one) for the annealing signal.
TrainResult train_on_cases(const std::vector<ExperimentCase>& cases, const ExperimentConfig& cfg,
                           const ProgressSink& progress = {});

/// Writes report.json, roc_patient.png, roc_vertebra.png, fold logs and a few
/// mid-sagittal overlays to `dir`.
void write_report(const ExperimentReport& report, const std::string& dir);

}  // namespace vfd
