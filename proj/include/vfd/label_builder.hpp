// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "vfd/probability_map.hpp"
#include "vfd/volume.hpp"

namespace vfd {

enum class Grade { kNormal, kMild, kModerate, kSevere };
enum class BinaryClass { kNormal, kFracture };

/// Parses "normal", "mild", "moderate", "severe" (case-insensitive).
Grade parse_grade(std::string_view text);
const char* grade_name(Grade grade) noexcept;

/// Mild, moderate and severe all collapse to fracture.
BinaryClass binary_class_of(Grade grade) noexcept;
BinaryClass binary_class_of(std::string_view grade);

/// T1..T12, L1..L5, S1..S2 in top-to-bottom order.
const std::vector<std::string>& vertebra_vocabulary();
/// Position in the vocabulary, or -1.
int vertebra_rank(std::string_view name);

struct VertebraAnnotation {
  std::string name;
  Grade grade = Grade::kNormal;
  Vec3 centroid{0.0, 0.0, 0.0};

  bool operator==(const VertebraAnnotation&) const = default;
};

struct AnnotationSet {
  std::string case_id;
  std::vector<VertebraAnnotation> annotations;

  bool operator==(const AnnotationSet&) const = default;
};

/// Checks the vocabulary, uniqueness and finiteness invariants and sorts the
/// annotations top-to-bottom. Throws kValidation.
void validate_and_order(AnnotationSet& set);

/// Format: one `name,grade,x_mm,y_mm,z_mm` line per vertebra, `#` comments,
/// optional `name,grade,x,y,z` header. Parse errors name the line number.
AnnotationSet parse_annotations(std::string_view text, std::string case_id = {});
AnnotationSet parse_annotations_file(const std::string& path);
std::string format_annotations(const AnnotationSet& set);
void write_annotations_file(const AnnotationSet& set, const std::string& path);

struct EllipsoidParams {
  Vec3 radii_mm{12.0, 12.0, 12.0};
  double flatten = 0.5;  // longitudinal radius scale for fractured vertebrae

  bool operator==(const EllipsoidParams&) const = default;
};

/// Receives one message per skipped vertebra.
using WarningSink = std::function<void(const std::string&)>;

/// Dense 3-class label volume of ellipsoids around each annotated centroid on
/// the grid of `ref`. Overlaps resolve to the centroid with the smaller
/// ellipsoid-normalized distance; out-of-bounds centroids are skipped.
LabelVolume build_label_volume(const AnnotationSet& ann, const Volume& ref,
                               const EllipsoidParams& params = {},
                               const WarningSink& warn = {});
LabelVolume build_label_volume(const AnnotationSet& ann, const Dims3& dims,
                               const Vec3& spacing, const Vec3& origin,
                               const EllipsoidParams& params = {},
                               const WarningSink& warn = {});

}  // namespace vfd
