// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#include "vfd/label_builder.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace vfd {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  // std::from_chars for double is available in libstdc++ 11.
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  if (*first == '+') ++first;
  const auto res = std::from_chars(first, last, out);
  return res.ec == std::errc() && res.ptr == last;
}

}  // namespace

Grade parse_grade(std::string_view text) {
  const std::string g = lower(trim(text));
  if (g == "normal") return Grade::kNormal;
  if (g == "mild") return Grade::kMild;
  if (g == "moderate") return Grade::kModerate;
  if (g == "severe") return Grade::kSevere;
  fail(ErrorCode::kParse, "unknown grade '" + std::string(text) + "'");
}

const char* grade_name(Grade grade) noexcept {
  switch (grade) {
    case Grade::kNormal: return "normal";
    case Grade::kMild: return "mild";
    case Grade::kModerate: return "moderate";
    case Grade::kSevere: return "severe";
  }
  return "normal";
}

BinaryClass binary_class_of(Grade grade) noexcept {
  return grade == Grade::kNormal ? BinaryClass::kNormal : BinaryClass::kFracture;
}

BinaryClass binary_class_of(std::string_view grade) {
  return binary_class_of(parse_grade(grade));
}

const std::vector<std::string>& vertebra_vocabulary() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (int i = 1; i <= 12; ++i) v.push_back("T" + std::to_string(i));
    for (int i = 1; i <= 5; ++i) v.push_back("L" + std::to_string(i));
    for (int i = 1; i <= 2; ++i) v.push_back("S" + std::to_string(i));
    return v;
  }();
  return names;
}

int vertebra_rank(std::string_view name) {
  const auto& v = vertebra_vocabulary();
  const auto it = std::find(v.begin(), v.end(), name);
  return it == v.end() ? -1 : static_cast<int>(it - v.begin());
}

void validate_and_order(AnnotationSet& set) {
  std::set<std::string> seen;
  for (const auto& a : set.annotations) {
    if (vertebra_rank(a.name) < 0)
      fail(ErrorCode::kValidation, "unknown vertebra name '" + a.name + "'");
    if (!seen.insert(a.name).second)
      fail(ErrorCode::kValidation, "duplicate vertebra '" + a.name + "'");
    for (double c : a.centroid)
      if (!std::isfinite(c))
        fail(ErrorCode::kValidation, "non-finite centroid for '" + a.name + "'");
  }
  std::stable_sort(set.annotations.begin(), set.annotations.end(),
                   [](const VertebraAnnotation& l, const VertebraAnnotation& r) {
                     return vertebra_rank(l.name) < vertebra_rank(r.name);
                   });
}

AnnotationSet parse_annotations(std::string_view text, std::string case_id) {
  AnnotationSet set;
  set.case_id = std::move(case_id);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    const auto fields = split_fields(line);
    const std::string where = "line " + std::to_string(line_no);
    if (fields.size() != 5)
      fail(ErrorCode::kParse, where + ": expected 5 comma-separated fields");
    if (lower(fields[0]) == "name" && lower(fields[1]) == "grade") continue;

    VertebraAnnotation a;
    a.name = std::string(fields[0]);
    if (vertebra_rank(a.name) < 0)
      fail(ErrorCode::kParse, where + ": unknown vertebra '" + a.name + "'");
    try {
      a.grade = parse_grade(fields[1]);
    } catch (const Error& e) {
      fail(ErrorCode::kParse, where + ": " + e.what());
    }
    for (int k = 0; k < 3; ++k)
      if (!parse_double(fields[2 + k], a.centroid[k]) || !std::isfinite(a.centroid[k]))
        fail(ErrorCode::kParse, where + ": bad coordinate '" + std::string(fields[2 + k]) + "'");
    set.annotations.push_back(std::move(a));
  }
  validate_and_order(set);
  return set;
}

AnnotationSet parse_annotations_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  std::string stem = path;
  if (const auto slash = stem.find_last_of('/'); slash != std::string::npos)
    stem = stem.substr(slash + 1);
  if (const auto dot = stem.find('.'); dot != std::string::npos) stem = stem.substr(0, dot);
  return parse_annotations(buf.str(), stem);
}

std::string format_annotations(const AnnotationSet& set) {
  std::ostringstream out;
  out << "# case " << set.case_id << "\n";
  out << "name,grade,x_mm,y_mm,z_mm\n";
  char buf[128];
  for (const auto& a : set.annotations) {
    // %.17g round-trips doubles exactly.
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", a.centroid[0], a.centroid[1],
                  a.centroid[2]);
    out << a.name << ',' << grade_name(a.grade) << ',' << buf << '\n';
  }
  return out.str();
}

void write_annotations_file(const AnnotationSet& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path);
  out << format_annotations(set);
  if (!out) fail(ErrorCode::kIo, "write failed: " + path);
}

LabelVolume build_label_volume(const AnnotationSet& ann, const Volume& ref,
                               const EllipsoidParams& params, const WarningSink& warn) {
  return build_label_volume(ann, ref.dims(), ref.spacing(), ref.origin(), params, warn);
}

LabelVolume build_label_volume(const AnnotationSet& ann, const Dims3& dims,
                               const Vec3& spacing, const Vec3& origin,
                               const EllipsoidParams& params, const WarningSink& warn) {
  for (double r : params.radii_mm)
    if (!(r > 0.0)) fail(ErrorCode::kArgument, "ellipsoid radii must be positive");
  if (!(params.flatten > 0.0 && params.flatten < 1.0))
    fail(ErrorCode::kArgument, "flatten ratio must lie in (0, 1)");

  LabelVolume labels(dims, spacing, origin, 0);
  // Best normalized squared distance per voxel for tie-breaking.
  std::vector<float> best(labels.size(), std::numeric_limits<float>::infinity());

  for (const auto& a : ann.annotations) {
    if (!labels.contains_point(a.centroid)) {
      if (warn) warn("vertebra " + a.name + " centroid outside volume; skipped");
      continue;
    }
    const bool fractured = binary_class_of(a.grade) == BinaryClass::kFracture;
    Vec3 radii = params.radii_mm;
    if (fractured) radii[kLongitudinalAxis] *= params.flatten;
    const auto value = static_cast<std::uint8_t>(fractured ? VoxelClass::kFracture
                                                           : VoxelClass::kNormal);
    const Vec3 c = labels.continuous_index(a.centroid);
    std::array<int, 3> lo{}, hi{};
    for (int k = 0; k < 3; ++k) {
      const double reach = radii[k] / spacing[k];
      lo[k] = std::max(0, static_cast<int>(std::floor(c[k] - reach)));
      hi[k] = std::min(dims[k] - 1, static_cast<int>(std::ceil(c[k] + reach)));
    }
    for (int z = lo[2]; z <= hi[2]; ++z) {
      const double dz = (origin[2] + z * spacing[2] - a.centroid[2]) / radii[2];
      for (int y = lo[1]; y <= hi[1]; ++y) {
        const double dy = (origin[1] + y * spacing[1] - a.centroid[1]) / radii[1];
        for (int x = lo[0]; x <= hi[0]; ++x) {
          const double dx = (origin[0] + x * spacing[0] - a.centroid[0]) / radii[0];
          const double d2 = dx * dx + dy * dy + dz * dz;
          if (d2 > 1.0) continue;
          const std::size_t i = labels.index(x, y, z);
          if (d2 < best[i]) {
            best[i] = static_cast<float>(d2);
            labels[i] = value;
          }
        }
      }
    }
  }
  return labels;
}

}  // namespace vfd
