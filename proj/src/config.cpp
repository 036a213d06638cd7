// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#include "vfd/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vfd/error.hpp"

namespace vfd {

using json = nlohmann::ordered_json;

namespace {

// Reads keys of one JSON object and rejects anything it was not asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(ErrorCode::kConfig, "'" + name() + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      fail(ErrorCode::kConfig, "invalid value for config key '" + child(key) + "'");
    }
  }

  void get_dims(const char* key, Dims3& out) {
    std::vector<int> v;
    seen_.insert(key);
    if (!j_.contains(key)) return;
    get(key, v);
    if (v.size() != 3) fail(ErrorCode::kConfig, "config key '" + child(key) + "' needs 3 values");
    out = {v[0], v[1], v[2]};
  }

  template <std::size_t N>
  void get_array(const char* key, std::array<double, N>& out) {
    std::vector<double> v;
    seen_.insert(key);
    if (!j_.contains(key)) return;
    get(key, v);
    if (v.size() != N)
      fail(ErrorCode::kConfig,
           "config key '" + child(key) + "' needs " + std::to_string(N) + " values");
    std::copy(v.begin(), v.end(), out.begin());
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string child(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) fail(ErrorCode::kConfig, "unknown config key '" + child(k) + "'");
  }

 private:
  std::string name() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json dims_json(const Dims3& d) { return json::array({d[0], d[1], d[2]}); }

json to_json_value(const NetworkConfig& c) {
  return json{{"variant", variant_name(c.variant)},
              {"conv1_filter", dims_json(c.conv1_filter)},
              {"conv_rest_filter", dims_json(c.conv_rest_filter)},
              {"conv_channels", c.conv_channels},
              {"fc_channels", c.fc_channels},
              {"subsample_factor", c.subsample_factor},
              {"n_classes", c.n_classes}};
}

void read_network(Section s, NetworkConfig& c) {
  if (s.has("variant")) {
    std::string v;
    s.get("variant", v);
    try {
      c = NetworkConfig::for_variant(parse_variant(v));
    } catch (const Error&) {
      fail(ErrorCode::kConfig, "invalid value for config key '" + s.child("variant") + "'");
    }
  }
  s.get_dims("conv1_filter", c.conv1_filter);
  s.get_dims("conv_rest_filter", c.conv_rest_filter);
  s.get("conv_channels", c.conv_channels);
  s.get("fc_channels", c.fc_channels);
  s.get("subsample_factor", c.subsample_factor);
  s.get("n_classes", c.n_classes);
  s.finish();
}

json to_json_value(const TrainingConfig& c) {
  return json{
      {"epochs", c.epochs},
      {"initial_lr", c.initial_lr},
      {"lr_anneal",
       {{"enabled", c.lr_anneal.enabled},
        {"factor", c.lr_anneal.factor},
        {"patience", c.lr_anneal.patience},
        {"min_delta", c.lr_anneal.min_delta}}},
      {"l1_weight", c.l1_weight},
      {"l2_weight", c.l2_weight},
      {"segment_batch", c.segment_batch},
      {"batches_per_epoch", c.batches_per_epoch},
      {"sampling_weights", c.sampling_weights},
      {"augmentation",
       {{"intensity_noise_std", c.augmentation.intensity_noise_std},
        {"flip_axes", c.augmentation.flip_axes}}},
      {"segment_output", dims_json(c.segment_output)},
      {"validation_segments", c.validation_segments},
      {"rmsprop_rho", c.rmsprop_rho},
      {"rmsprop_epsilon", c.rmsprop_epsilon}};
}

void read_training(Section s, TrainingConfig& c) {
  s.get("epochs", c.epochs);
  s.get("initial_lr", c.initial_lr);
  if (s.has("lr_anneal")) {
    Section a(s.at("lr_anneal"), s.child("lr_anneal"));
    a.get("enabled", c.lr_anneal.enabled);
    a.get("factor", c.lr_anneal.factor);
    a.get("patience", c.lr_anneal.patience);
    a.get("min_delta", c.lr_anneal.min_delta);
    a.finish();
  }
  s.get("l1_weight", c.l1_weight);
  s.get("l2_weight", c.l2_weight);
  s.get("segment_batch", c.segment_batch);
  s.get("batches_per_epoch", c.batches_per_epoch);
  s.get_array("sampling_weights", c.sampling_weights);
  if (s.has("augmentation")) {
    Section a(s.at("augmentation"), s.child("augmentation"));
    a.get("intensity_noise_std", c.augmentation.intensity_noise_std);
    std::vector<bool> flips;
    if (a.has("flip_axes")) {
      a.get("flip_axes", flips);
      if (flips.size() != 3)
        fail(ErrorCode::kConfig, "config key '" + a.child("flip_axes") + "' needs 3 values");
      for (int i = 0; i < 3; ++i) c.augmentation.flip_axes[i] = flips[i];
    } else {
      a.get("flip_axes", flips);
    }
    a.finish();
  }
  s.get_dims("segment_output", c.segment_output);
  s.get("validation_segments", c.validation_segments);
  s.get("rmsprop_rho", c.rmsprop_rho);
  s.get("rmsprop_epsilon", c.rmsprop_epsilon);
  s.finish();
}

json to_json_value(const EllipsoidParams& p) {
  return json{{"radii_mm", p.radii_mm}, {"flatten", p.flatten}};
}

void read_labels(Section s, EllipsoidParams& p) {
  s.get_array("radii_mm", p.radii_mm);
  s.get("flatten", p.flatten);
  s.finish();
}

json to_json_value(const PhantomSpec& p) {
  return json{{"n_cases", p.n_cases},
              {"dims", dims_json(p.dims)},
              {"spacing", p.spacing},
              {"vertebrae_per_case", p.vertebrae_per_case},
              {"vertebra_spacing_mm", p.vertebra_spacing_mm},
              {"body_radii_mm", p.body_radii_mm},
              {"radius_jitter", p.radius_jitter},
              {"fracture_prevalence", p.fracture_prevalence},
              {"flatten_range", p.flatten_range},
              {"background_intensity", p.background_intensity},
              {"contrast", p.contrast},
              {"noise_std", p.noise_std},
              {"curvature_mm", p.curvature_mm},
              {"min_negative_cases", p.min_negative_cases}};
}

void read_phantom(Section s, PhantomSpec& p) {
  s.get("n_cases", p.n_cases);
  s.get_dims("dims", p.dims);
  s.get_array("spacing", p.spacing);
  std::vector<int> range;
  if (s.has("vertebrae_per_case")) {
    s.get("vertebrae_per_case", range);
    if (range.size() != 2)
      fail(ErrorCode::kConfig, "config key '" + s.child("vertebrae_per_case") + "' needs 2 values");
    p.vertebrae_per_case = {range[0], range[1]};
  }
  s.get("vertebra_spacing_mm", p.vertebra_spacing_mm);
  s.get_array("body_radii_mm", p.body_radii_mm);
  s.get("radius_jitter", p.radius_jitter);
  s.get("fracture_prevalence", p.fracture_prevalence);
  s.get_array("flatten_range", p.flatten_range);
  s.get("background_intensity", p.background_intensity);
  s.get("contrast", p.contrast);
  s.get("noise_std", p.noise_std);
  s.get("curvature_mm", p.curvature_mm);
  s.get("min_negative_cases", p.min_negative_cases);
  s.finish();
}

json to_json_value(const ExperimentConfig& c) {
  return json{{"seed", c.seed},
              {"workers", c.workers},
              {"target_spacing_mm", c.target_spacing_mm},
              {"phantom", to_json_value(c.phantom)},
              {"labels", to_json_value(c.labels)},
              {"network", to_json_value(c.network)},
              {"training", to_json_value(c.training)},
              {"inference", {{"tile", dims_json(c.inference.tile)}}},
              {"aggregation",
               {{"probability_thresholds", c.aggregation.probability_thresholds},
                {"noise_thresholds", c.aggregation.noise_thresholds},
                {"cube_size", c.aggregation.cube_size},
                {"kernel_sigma_mm", c.aggregation.kernel_sigma_mm},
                {"centroid_noise_mm", c.aggregation.centroid_noise_mm}}},
              {"evaluation",
               {{"folds", c.evaluation.folds},
                {"min_negatives", c.evaluation.min_negatives},
                {"validation_fraction", c.evaluation.validation_fraction},
                {"bootstrap_resamples", c.evaluation.bootstrap_resamples},
                {"grid_points", c.evaluation.grid_points},
                {"min_specificity", c.evaluation.min_specificity}}}};
}

ExperimentConfig from_json_value(const json& j) {
  ExperimentConfig c;
  Section s(j, "");
  s.get("seed", c.seed);
  s.get("workers", c.workers);
  s.get("target_spacing_mm", c.target_spacing_mm);
  if (s.has("phantom")) read_phantom(Section(s.at("phantom"), "phantom"), c.phantom);
  if (s.has("labels")) read_labels(Section(s.at("labels"), "labels"), c.labels);
  if (s.has("network")) read_network(Section(s.at("network"), "network"), c.network);
  if (s.has("training")) read_training(Section(s.at("training"), "training"), c.training);
  if (s.has("inference")) {
    Section i(s.at("inference"), "inference");
    i.get_dims("tile", c.inference.tile);
    i.finish();
  }
  if (s.has("aggregation")) {
    Section a(s.at("aggregation"), "aggregation");
    a.get("probability_thresholds", c.aggregation.probability_thresholds);
    a.get("noise_thresholds", c.aggregation.noise_thresholds);
    a.get("cube_size", c.aggregation.cube_size);
    a.get("kernel_sigma_mm", c.aggregation.kernel_sigma_mm);
    a.get("centroid_noise_mm", c.aggregation.centroid_noise_mm);
    a.finish();
  }
  if (s.has("evaluation")) {
    Section e(s.at("evaluation"), "evaluation");
    e.get("folds", c.evaluation.folds);
    e.get("min_negatives", c.evaluation.min_negatives);
    e.get("validation_fraction", c.evaluation.validation_fraction);
    e.get("bootstrap_resamples", c.evaluation.bootstrap_resamples);
    e.get("grid_points", c.evaluation.grid_points);
    e.get("min_specificity", c.evaluation.min_specificity);
    e.finish();
  }
  s.finish();
  c.finalize();
  return c;
}

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kConfig, std::string(what) + " is not valid JSON: " + e.what());
  }
}

}  // namespace

void ExperimentConfig::finalize() {
  if (workers < 1) fail(ErrorCode::kConfig, "workers must be >= 1");
  if (!(target_spacing_mm > 0.0)) fail(ErrorCode::kConfig, "target_spacing_mm must be positive");
  phantom.seed = seed;
  phantom.labels = labels;
  training.seed = seed;
  training.workers = workers;
  if (!(labels.flatten > 0.0 && labels.flatten < 1.0))
    fail(ErrorCode::kConfig, "labels.flatten must lie in (0, 1)");
  for (double r : labels.radii_mm)
    if (!(r > 0.0)) fail(ErrorCode::kConfig, "labels.radii_mm must be positive");
  phantom.validate();
  network.validate();
  training.validate();
  const auto rf = receptive_field(network).normal;
  for (int a = 0; a < 3; ++a)
    if (inference.tile[a] < rf[a])
      fail(ErrorCode::kConfig, "inference.tile must be at least the receptive field");
  const auto& ag = aggregation;
  if (ag.probability_thresholds.empty() || ag.noise_thresholds.empty())
    fail(ErrorCode::kConfig, "aggregation threshold lists must be non-empty");
  for (double p : ag.probability_thresholds)
    if (!(p >= 0.0 && p <= 1.0))
      fail(ErrorCode::kConfig, "aggregation.probability_thresholds must lie in [0, 1]");
  if (ag.cube_size < 1) fail(ErrorCode::kConfig, "aggregation.cube_size must be >= 1");
  if (!(ag.kernel_sigma_mm > 0.0))
    fail(ErrorCode::kConfig, "aggregation.kernel_sigma_mm must be positive");
  if (!(ag.centroid_noise_mm >= 0.0))
    fail(ErrorCode::kConfig, "aggregation.centroid_noise_mm must be >= 0");
  const auto& ev = evaluation;
  if (ev.folds < 2) fail(ErrorCode::kConfig, "evaluation.folds must be >= 2");
  if (ev.min_negatives < 0) fail(ErrorCode::kConfig, "evaluation.min_negatives must be >= 0");
  if (!(ev.validation_fraction > 0.0 && ev.validation_fraction < 1.0))
    fail(ErrorCode::kConfig, "evaluation.validation_fraction must lie in (0, 1)");
  if (ev.bootstrap_resamples < 1)
    fail(ErrorCode::kConfig, "evaluation.bootstrap_resamples must be >= 1");
  if (ev.grid_points < 2) fail(ErrorCode::kConfig, "evaluation.grid_points must be >= 2");
  if (!(ev.min_specificity >= 0.0 && ev.min_specificity <= 1.0))
    fail(ErrorCode::kConfig, "evaluation.min_specificity must lie in [0, 1]");
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  return from_json_value(parse_json(json_text, "config"));
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  return to_json_value(cfg).dump(2);
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    fail(ErrorCode::kConfig, "override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json doc = to_json_value(cfg);
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!node->is_object() || !node->contains(part))
      fail(ErrorCode::kConfig, "unknown config key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  // Selecting a variant resets the filters and channel plan to its defaults.
  if (key == "network.variant") doc["network"] = json{{"variant", value}};
  else *node = value;
  cfg = from_json_value(doc);
}

std::string network_config_to_json(const NetworkConfig& cfg) {
  return to_json_value(cfg).dump();
}

NetworkConfig network_config_from_json(const std::string& json_text) {
  NetworkConfig c = NetworkConfig::for_variant(Variant::k3D);
  read_network(Section(parse_json(json_text, "network config"), "network"), c);
  c.validate();
  return c;
}

std::string phantom_spec_to_json(const PhantomSpec& spec) {
  json j = to_json_value(spec);
  j["labels"] = to_json_value(spec.labels);
  j["seed"] = spec.seed;
  return j.dump();
}

}  // namespace vfd
