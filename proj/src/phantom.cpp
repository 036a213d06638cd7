// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#include "vfd/phantom.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "parallel.hpp"
#include "vfd/config.hpp"
#include "vfd/error.hpp"
#include "vfd/nifti.hpp"

namespace vfd {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kPlanTag = 0x706c616eULL;
constexpr std::uint64_t kNoiseTag = 0x6e6f6973ULL;

double extent(const PhantomSpec& s, int axis) { return (s.dims[axis] - 1) * s.spacing[axis]; }

}  // namespace

void PhantomSpec::validate() const {
  if (n_cases < 0) fail(ErrorCode::kConfig, "phantom.n_cases must be >= 0");
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) fail(ErrorCode::kConfig, "phantom.dims must be positive");
    if (!(spacing[a] > 0.0)) fail(ErrorCode::kConfig, "phantom.spacing must be positive");
    if (!(body_radii_mm[a] > 0.0)) fail(ErrorCode::kConfig, "phantom.body_radii_mm must be positive");
  }
  const int vocab = static_cast<int>(vertebra_vocabulary().size());
  if (vertebrae_per_case[0] < 1 || vertebrae_per_case[1] < vertebrae_per_case[0] ||
      vertebrae_per_case[1] > vocab)
    fail(ErrorCode::kConfig, "phantom.vertebrae_per_case must satisfy 1 <= min <= max <= " +
                                 std::to_string(vocab));
  if (!(vertebra_spacing_mm > 0.0))
    fail(ErrorCode::kConfig, "phantom.vertebra_spacing_mm must be positive");
  if (!(radius_jitter >= 0.0 && radius_jitter < 1.0))
    fail(ErrorCode::kConfig, "phantom.radius_jitter must lie in [0, 1)");
  if (!(fracture_prevalence >= 0.0 && fracture_prevalence <= 1.0))
    fail(ErrorCode::kConfig, "phantom.fracture_prevalence must lie in [0, 1]");
  if (!(flatten_range[0] > 0.0 && flatten_range[0] <= flatten_range[1] && flatten_range[1] < 1.0))
    fail(ErrorCode::kConfig, "phantom.flatten_range must satisfy 0 < lo <= hi < 1");
  if (!(contrast > 0.0)) fail(ErrorCode::kConfig, "phantom.contrast must be positive");
  if (!(noise_std >= 0.0)) fail(ErrorCode::kConfig, "phantom.noise_std must be >= 0");
  if (!(curvature_mm >= 0.0)) fail(ErrorCode::kConfig, "phantom.curvature_mm must be >= 0");
  if (min_negative_cases < 0) fail(ErrorCode::kConfig, "phantom.min_negative_cases must be >= 0");

  const double grow = 1.0 + radius_jitter;
  for (int a = 0; a < 2; ++a)
    if (extent(*this, a) < 2.0 * (body_radii_mm[a] * grow + curvature_mm))
      fail(ErrorCode::kConfig, "phantom.dims too small to fit one vertebra");
  const double column =
      (vertebrae_per_case[1] - 1) * vertebra_spacing_mm + 2.0 * body_radii_mm[2] * grow;
  if (extent(*this, 2) < 2.0 * body_radii_mm[2] * grow)
    fail(ErrorCode::kConfig, "phantom.dims too small to fit one vertebra");
  if (extent(*this, 2) < column)
    fail(ErrorCode::kConfig, "phantom.dims too short for the requested vertebrae per case");
}

Grade grade_for_ratio(double ratio) noexcept {
  if (ratio > 0.65) return Grade::kMild;
  if (ratio > 0.55) return Grade::kModerate;
  return Grade::kSevere;
}

bool CasePlan::positive() const noexcept {
  for (const auto& v : vertebrae)
    if (v.grade != Grade::kNormal) return true;
  return false;
}

void CasePlan::make_negative() {
  for (auto& v : vertebrae) {
    v.grade = Grade::kNormal;
    v.ratio = 1.0;
  }
}

CasePlan plan_case(const PhantomSpec& spec, int index) {
  spec.validate();
  CasePlan plan;
  char id[32];
  std::snprintf(id, sizeof id, "case%03d", index);
  plan.case_id = id;
  plan.seed = spec.seed;
  plan.index = index;
  auto rng = detail::make_rng({spec.seed, static_cast<std::uint64_t>(index), kPlanTag});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const int n = static_cast<int>(
      std::uniform_int_distribution<int>(spec.vertebrae_per_case[0], spec.vertebrae_per_case[1])(rng));
  const auto& vocab = vertebra_vocabulary();
  const int first =
      std::uniform_int_distribution<int>(0, static_cast<int>(vocab.size()) - n)(rng);

  // Spine path: a centered column with a gentle sinusoidal bend in x and y.
  Vec3 center;
  for (int a = 0; a < 3; ++a) center[a] = extent(spec, a) / 2.0;
  const double two_pi = 2.0 * std::numbers::pi;
  const double amp_x = spec.curvature_mm * uniform(0.5, 1.0);
  const double amp_y = spec.curvature_mm * uniform(0.5, 1.0);
  const double phase_x = uniform(0.0, two_pi), phase_y = uniform(0.0, two_pi);
  const double length = extent(spec, 2);

  const double grow = 1.0 + spec.radius_jitter;
  const double column = (n - 1) * spec.vertebra_spacing_mm;
  const double slack = std::max(0.0, length - column - 2.0 * spec.body_radii_mm[2] * grow);
  const double top = center[2] + column / 2.0 + uniform(-0.5, 0.5) * slack;

  for (int i = 0; i < n; ++i) {
    PhantomVertebra v;
    v.name = vocab[static_cast<std::size_t>(first + i)];
    // Head is toward +z, so lower vertebrae sit at smaller z.
    const double z = top - i * spec.vertebra_spacing_mm;
    const double t = z / length;
    v.centroid = {center[0] + amp_x * std::sin(two_pi * t + phase_x),
                  center[1] + amp_y * std::sin(two_pi * t + phase_y), z};
    for (int a = 0; a < 3; ++a)
      v.radii_mm[a] = spec.body_radii_mm[a] * uniform(1.0 - spec.radius_jitter, grow);
    const bool fractured = unit(rng) < spec.fracture_prevalence;
    const double ratio = uniform(spec.flatten_range[0], spec.flatten_range[1]);
    if (fractured) {
      v.ratio = ratio;
      v.grade = grade_for_ratio(ratio);
    }
    plan.vertebrae.push_back(v);
  }
  return plan;
}

PhantomCase render_case(const PhantomSpec& spec, const CasePlan& plan) {
  PhantomCase out;
  out.case_id = plan.case_id;
  out.image = Volume(spec.dims, spec.spacing, {0.0, 0.0, 0.0},
                     static_cast<float>(spec.background_intensity));
  const float body = static_cast<float>(spec.background_intensity + spec.contrast);
  const auto& d = spec.dims;
  for (const auto& v : plan.vertebrae) {
    const Vec3 r{v.radii_mm[0], v.radii_mm[1], v.radii_mm[2] * v.ratio};
    int lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::max(0, static_cast<int>(std::floor((v.centroid[a] - r[a]) / spec.spacing[a])));
      hi[a] = std::min(d[a] - 1, static_cast<int>(std::ceil((v.centroid[a] + r[a]) / spec.spacing[a])));
    }
    for (int z = lo[2]; z <= hi[2]; ++z)
      for (int y = lo[1]; y <= hi[1]; ++y)
        for (int x = lo[0]; x <= hi[0]; ++x) {
          const Vec3 p = out.image.physical(x, y, z);
          double q = 0.0;
          for (int a = 0; a < 3; ++a) {
            const double u = (p[a] - v.centroid[a]) / r[a];
            q += u * u;
          }
          if (q <= 1.0) out.image(x, y, z) = body;
        }
  }
  if (spec.noise_std > 0.0) {
    auto rng = detail::make_rng({plan.seed, static_cast<std::uint64_t>(plan.index), kNoiseTag});
    std::normal_distribution<double> noise(0.0, spec.noise_std);
    for (auto& value : out.image.storage()) value = static_cast<float>(value + noise(rng));
  }

  out.annotations.case_id = plan.case_id;
  for (const auto& v : plan.vertebrae)
    out.annotations.annotations.push_back({v.name, v.grade, v.centroid});
  validate_and_order(out.annotations);
  out.labels = build_label_volume(out.annotations, out.image, spec.labels);
  out.positive = plan.positive();
  return out;
}

PhantomCase generate_case(const PhantomSpec& spec, int index) {
  return render_case(spec, plan_case(spec, index));
}

std::vector<CasePlan> plan_corpus(const PhantomSpec& spec) {
  spec.validate();
  std::vector<CasePlan> plans;
  int negatives = 0;
  for (int i = 0; i < spec.n_cases; ++i) {
    plans.push_back(plan_case(spec, i));
    if (!plans.back().positive()) ++negatives;
  }
  // Convert positives from the end of the corpus until the floor is met.
  for (int i = spec.n_cases - 1; i >= 0 && negatives < spec.min_negative_cases; --i)
    if (plans[static_cast<std::size_t>(i)].positive()) {
      plans[static_cast<std::size_t>(i)].make_negative();
      ++negatives;
    }
  return plans;
}

std::string case_dir(const std::string& corpus_dir, const std::string& case_id) {
  return (fs::path(corpus_dir) / "cases" / case_id).string();
}

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path);
  out << text;
  if (!out) fail(ErrorCode::kIo, "failed writing " + path);
}

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create directory " + p.string() + ": " + ec.message());
}

}  // namespace

Manifest generate_corpus(const PhantomSpec& spec, const std::string& dir, int workers) {
  const auto plans = plan_corpus(spec);
  make_dirs(fs::path(dir) / "cases");

  Manifest m;
  m.seed = spec.seed;
  m.spec_json = phantom_spec_to_json(spec);
  m.cases.resize(plans.size());
  std::vector<std::string> errors(plans.size());
  detail::parallel_for(static_cast<int>(plans.size()), workers, [&](int i, int) {
    try {
      const auto& plan = plans[static_cast<std::size_t>(i)];
      const PhantomCase c = render_case(spec, plan);
      const fs::path cdir = case_dir(dir, c.case_id);
      make_dirs(cdir);
      save_volume(c.image, (cdir / "image.nii.gz").string());
      save_label_volume(c.labels, (cdir / "labels.nii.gz").string());
      write_annotations_file(c.annotations, (cdir / "annotations.csv").string());
      ManifestEntry& e = m.cases[static_cast<std::size_t>(i)];
      e.case_id = c.case_id;
      e.positive = c.positive;
      e.n_vertebrae = static_cast<int>(plan.vertebrae.size());
      for (const auto& v : plan.vertebrae) e.n_fractures += v.grade != Grade::kNormal;
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  });
  for (const auto& e : errors)
    if (!e.empty()) fail(ErrorCode::kIo, e);

  nlohmann::ordered_json j;
  j["generator_seed"] = m.seed;
  j["spec"] = nlohmann::ordered_json::parse(m.spec_json);
  auto& cases = j["cases"] = nlohmann::ordered_json::array();
  for (const auto& e : m.cases)
    cases.push_back({{"case_id", e.case_id}, {"positive", e.positive},
                     {"n_vertebrae", e.n_vertebrae}, {"n_fractures", e.n_fractures}});
  write_text((fs::path(dir) / "manifest.json").string(), j.dump(2) + "\n");
  return m;
}

Manifest read_manifest(const std::string& dir) {
  const std::string path = (fs::path(dir) / "manifest.json").string();
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open manifest " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  Manifest m;
  try {
    const auto j = nlohmann::json::parse(ss.str());
    m.seed = j.at("generator_seed").get<std::uint64_t>();
    m.spec_json = j.at("spec").dump();
    for (const auto& c : j.at("cases"))
      m.cases.push_back({c.at("case_id").get<std::string>(), c.at("positive").get<bool>(),
                         c.at("n_vertebrae").get<int>(), c.at("n_fractures").get<int>()});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, "malformed manifest " + path + ": " + e.what());
  }
  return m;
}

CorpusCase load_corpus_case(const std::string& corpus_dir, const ManifestEntry& entry) {
  const fs::path cdir = case_dir(corpus_dir, entry.case_id);
  CorpusCase c;
  c.case_id = entry.case_id;
  c.image = load_volume((cdir / "image.nii.gz").string());
  c.annotations = parse_annotations_file((cdir / "annotations.csv").string());
  c.annotations.case_id = entry.case_id;
  c.labels = load_label_volume((cdir / "labels.nii.gz").string());
  c.positive = entry.positive;
  return c;
}

}  // namespace vfd
