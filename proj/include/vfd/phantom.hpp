// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vfd/label_builder.hpp"
#include "vfd/volume.hpp"

namespace vfd {

/// Synthetic spine phantoms: ellipsoidal vertebral bodies stacked along z on
/// a gently curved path, fractures flattened along z, additive noise.
struct PhantomSpec {
  int n_cases = 90;
  Dims3 dims{48, 48, 96};
  Vec3 spacing{1.0, 1.0, 1.0};
  std::array<int, 2> vertebrae_per_case{3, 3};
  double vertebra_spacing_mm = 28.0;
  Vec3 body_radii_mm{12.0, 12.0, 11.0};
  double radius_jitter = 0.05;  // relative, uniform +-
  double fracture_prevalence = 0.19;
  std::array<double, 2> flatten_range{0.4, 0.75};
  double background_intensity = 0.0;
  double contrast = 1.0;  // vertebra minus background
  double noise_std = 0.2;
  double curvature_mm = 3.0;
  // Positive cases are converted to negatives (lowest priority first) until
  // this many negatives exist; keeps stratified folds feasible.
  int min_negative_cases = 10;
  EllipsoidParams labels;
  std::uint64_t seed = 1;

  /// Throws kConfig.
  void validate() const;
  bool operator==(const PhantomSpec&) const = default;
};

/// Height-loss ratio to grade: > 0.65 mild, > 0.55 moderate, else severe.
Grade grade_for_ratio(double ratio) noexcept;

struct PhantomVertebra {
  std::string name;
  Vec3 centroid{0.0, 0.0, 0.0};
  Vec3 radii_mm{0.0, 0.0, 0.0};
  double ratio = 1.0;  // longitudinal scale, 1 for intact bodies
  Grade grade = Grade::kNormal;
};

/// Everything random about a case except the intensity noise.
struct CasePlan {
  std::string case_id;
  std::uint64_t seed = 0;
  int index = 0;
  std::vector<PhantomVertebra> vertebrae;

  bool positive() const noexcept;
  /// Turns every fracture into an intact body.
  void make_negative();
};

struct PhantomCase {
  std::string case_id;
  Volume image;
  AnnotationSet annotations;
  LabelVolume labels;
  bool positive = false;
};

CasePlan plan_case(const PhantomSpec& spec, int index);
PhantomCase render_case(const PhantomSpec& spec, const CasePlan& plan);
/// plan_case + render_case.
PhantomCase generate_case(const PhantomSpec& spec, int index);

/// Plans for the whole corpus with the negative-case floor applied.
std::vector<CasePlan> plan_corpus(const PhantomSpec& spec);

struct ManifestEntry {
  std::string case_id;
  bool positive = false;
  int n_vertebrae = 0;
  int n_fractures = 0;
};

struct Manifest {
  std::uint64_t seed = 0;
  std::string spec_json;
  std::vector<ManifestEntry> cases;
};

// Corpus layout: <dir>/manifest.json and <dir>/cases/<id>/{image.nii.gz,
// annotations.csv, labels.nii.gz}.
Manifest generate_corpus(const PhantomSpec& spec, const std::string& dir, int workers = 1);
Manifest read_manifest(const std::string& dir);
std::string case_dir(const std::string& corpus_dir, const std::string& case_id);

struct CorpusCase {
  std::string case_id;
  Volume image;
  AnnotationSet annotations;
  LabelVolume labels;
  bool positive = false;
};

CorpusCase load_corpus_case(const std::string& corpus_dir, const ManifestEntry& entry);

}  // namespace vfd
