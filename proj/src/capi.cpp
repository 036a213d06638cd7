// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#include "vfd/vfd.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <new>
#include <string>

#include <json.hpp>

#include "parallel.hpp"
#include "vfd/aggregator.hpp"
#include "vfd/checkpoint.hpp"
#include "vfd/config.hpp"
#include "vfd/error.hpp"
#include "vfd/experiment.hpp"
#include "vfd/nifti.hpp"
#include "vfd/phantom.hpp"

struct vfd_config {
  vfd::ExperimentConfig cfg;
};
struct vfd_volume {
  vfd::Volume vol;
};
struct vfd_probmap {
  vfd::ProbabilityMap map;
};
struct vfd_network {
  vfd::Network<float> net;
};

namespace {

thread_local std::string g_last_error;
std::mutex g_log_mutex;
vfd_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

void emit(const std::string& line) {
  std::lock_guard<std::mutex> lock(g_log_mutex);
  if (g_log_fn) g_log_fn(line.c_str(), g_log_user);
}

template <typename Fn>
vfd_status guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    fn();
    return VFD_OK;
  } catch (const vfd::Error& e) {
    g_last_error = e.what();
    return static_cast<vfd_status>(static_cast<int>(e.code()));
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown failure";
  }
  return VFD_ERR_INTERNAL;
}

void require(const void* p, const char* what) {
  if (!p) vfd::fail(vfd::ErrorCode::kArgument, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

vfd::Dims3 dims_of(const int d[3]) { return {d[0], d[1], d[2]}; }
vfd::Vec3 vec_of(const double v[3]) { return {v[0], v[1], v[2]}; }

template <typename G>
void write_info(const G& g, int dims[3], double spacing[3], double origin[3]) {
  for (int a = 0; a < 3; ++a) {
    if (dims) dims[a] = g.dims()[a];
    if (spacing) spacing[a] = g.spacing()[a];
    if (origin) origin[a] = g.origin()[a];
  }
}

}  // namespace

extern "C" {

const char* vfd_version(void) { return "1.0.0"; }

const char* vfd_status_name(vfd_status status) {
  if (status == VFD_OK) return "ok";
  if (status < VFD_ERR_IO || status > VFD_ERR_INTERNAL) return "unknown";
  return vfd::error_code_name(static_cast<vfd::ErrorCode>(status));
}

const char* vfd_last_error(void) { return g_last_error.c_str(); }

void vfd_string_free(char* s) { std::free(s); }

void vfd_set_log(vfd_log_fn fn, void* user) {
  std::lock_guard<std::mutex> lock(g_log_mutex);
  g_log_fn = fn;
  g_log_user = user;
}

vfd_status vfd_config_default(vfd_config** out) {
  return guarded([&] {
    require(out, "out");
    auto c = std::make_unique<vfd_config>();
    c->cfg.finalize();
    *out = c.release();
  });
}

vfd_status vfd_config_load(const char* path, vfd_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new vfd_config{vfd::load_experiment_config(path)};
  });
}

vfd_status vfd_config_parse(const char* json, vfd_config** out) {
  return guarded([&] {
    require(json, "json");
    require(out, "out");
    *out = new vfd_config{vfd::parse_experiment_config(json)};
  });
}

vfd_status vfd_config_set(vfd_config* cfg, const char* assignment) {
  return guarded([&] {
    require(cfg, "cfg");
    require(assignment, "assignment");
    vfd::apply_override(cfg->cfg, assignment);
  });
}

vfd_status vfd_config_to_json(const vfd_config* cfg, char** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    *out = dup_string(vfd::experiment_config_to_json(cfg->cfg));
  });
}

void vfd_config_free(vfd_config* cfg) { delete cfg; }

vfd_status vfd_receptive_field(const vfd_config* cfg, int normal[3], int subsampled_effective[3]) {
  return guarded([&] {
    require(cfg, "cfg");
    const auto rf = vfd::receptive_field(cfg->cfg.network);
    for (int a = 0; a < 3; ++a) {
      if (normal) normal[a] = rf.normal[a];
      if (subsampled_effective) subsampled_effective[a] = rf.subsampled_effective[a];
    }
  });
}

vfd_status vfd_parameter_count(const vfd_config* cfg, uint64_t* out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    *out = vfd::count_parameters(cfg->cfg.network);
  });
}

vfd_status vfd_volume_create(const int dims[3], const double spacing[3], const double origin[3],
                             const float* data, vfd_volume** out) {
  return guarded([&] {
    require(dims, "dims");
    require(spacing, "spacing");
    require(out, "out");
    vfd::Volume v(dims_of(dims), vec_of(spacing),
                  origin ? vec_of(origin) : vfd::Vec3{0.0, 0.0, 0.0});
    if (data) std::memcpy(v.storage().data(), data, v.size() * sizeof(float));
    *out = new vfd_volume{std::move(v)};
  });
}

vfd_status vfd_volume_load(const char* path, vfd_volume** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new vfd_volume{vfd::load_volume(path)};
  });
}

vfd_status vfd_volume_save(const vfd_volume* vol, const char* path) {
  return guarded([&] {
    require(vol, "vol");
    require(path, "path");
    vfd::save_volume(vol->vol, path);
  });
}

vfd_status vfd_volume_info(const vfd_volume* vol, int dims[3], double spacing[3],
                           double origin[3]) {
  return guarded([&] {
    require(vol, "vol");
    write_info(vol->vol, dims, spacing, origin);
  });
}

const float* vfd_volume_data(const vfd_volume* vol) {
  return vol ? vol->vol.data().data() : nullptr;
}

vfd_status vfd_volume_preprocess(const vfd_config* cfg, const vfd_volume* in, vfd_volume** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(in, "in");
    require(out, "out");
    *out = new vfd_volume{vfd::preprocess(in->vol, cfg->cfg.target_spacing_mm)};
  });
}

void vfd_volume_free(vfd_volume* vol) { delete vol; }

vfd_status vfd_phantom_generate(const vfd_config* cfg, const char* out_dir, int* n_cases) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out_dir, "out_dir");
    const auto m = vfd::generate_corpus(cfg->cfg.phantom, out_dir, cfg->cfg.workers);
    if (n_cases) *n_cases = static_cast<int>(m.cases.size());
  });
}

vfd_status vfd_build_labels(const vfd_config* cfg, const char* annotations_path,
                            const char* volume_path, const char* out_path, int* skipped) {
  return guarded([&] {
    require(cfg, "cfg");
    require(annotations_path, "annotations_path");
    require(volume_path, "volume_path");
    require(out_path, "out_path");
    const auto ann = vfd::parse_annotations_file(annotations_path);
    const auto vol = vfd::load_volume(volume_path);
    const auto& spacing = vol.spacing();
    const double t = cfg->cfg.target_spacing_mm;
    const vfd::Dims3 dims = vfd::resampled_dims(vol.dims(), spacing, t);
    int count = 0;
    const auto labels = vfd::build_label_volume(
        ann, dims, {t, t, t}, vol.origin(), cfg->cfg.labels, [&](const std::string& msg) {
          ++count;
          emit("warning: " + msg);
        });
    vfd::save_label_volume(labels, out_path);
    if (skipped) *skipped = count;
  });
}

vfd_status vfd_network_create(const vfd_config* cfg, uint64_t seed, vfd_network** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    auto n = std::make_unique<vfd_network>(vfd_network{vfd::Network<float>(cfg->cfg.network)});
    n->net.init(seed);
    *out = n.release();
  });
}

vfd_status vfd_network_load(const char* path, vfd_network** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new vfd_network{vfd::load_checkpoint(path)};
  });
}

vfd_status vfd_network_save(const vfd_network* net, const char* path) {
  return guarded([&] {
    require(net, "net");
    require(path, "path");
    vfd::save_checkpoint(net->net, path);
  });
}

vfd_status vfd_network_parameter_count(const vfd_network* net, uint64_t* out) {
  return guarded([&] {
    require(net, "net");
    require(out, "out");
    *out = net->net.params().size();
  });
}

void vfd_network_free(vfd_network* net) { delete net; }

vfd_status vfd_train_corpus(const vfd_config* cfg, const char* corpus_dir, vfd_network** out,
                            const char* log_path) {
  return guarded([&] {
    require(cfg, "cfg");
    require(corpus_dir, "corpus_dir");
    require(out, "out");
    std::ofstream log;
    if (log_path) {
      log.open(log_path, std::ios::trunc);
      if (!log) vfd::fail(vfd::ErrorCode::kIo, std::string("cannot write ") + log_path);
    }
    const auto cases = vfd::load_corpus_cases(corpus_dir);
    auto result = vfd::train_on_cases(cases, cfg->cfg, [&](const std::string& line) {
      if (log.is_open() && !line.empty() && line.front() == '{') log << line << "\n";
      emit(line);
    });
    *out = new vfd_network{std::move(result.network)};
  });
}

vfd_status vfd_infer(const vfd_config* cfg, const vfd_network* net, const vfd_volume* image,
                     vfd_probmap** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(net, "net");
    require(image, "image");
    require(out, "out");
    *out = new vfd_probmap{
        vfd::infer_volume(image->vol, net->net, cfg->cfg.inference.tile, cfg->cfg.workers)};
  });
}

vfd_status vfd_probmap_load(const char* path, vfd_probmap** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new vfd_probmap{vfd::load_probability_map(path)};
  });
}

vfd_status vfd_probmap_save(const vfd_probmap* map, const char* path) {
  return guarded([&] {
    require(map, "map");
    require(path, "path");
    vfd::save_probability_map(map->map, path);
  });
}

vfd_status vfd_probmap_info(const vfd_probmap* map, int dims[3], double spacing[3],
                            double origin[3]) {
  return guarded([&] {
    require(map, "map");
    write_info(map->map, dims, spacing, origin);
  });
}

const float* vfd_probmap_channel(const vfd_probmap* map, int cls) {
  if (!map || cls < 0 || cls >= vfd::kNumClasses) return nullptr;
  return map->map.channel(cls).data().data();
}

void vfd_probmap_free(vfd_probmap* map) { delete map; }

vfd_status vfd_aggregate_patient(const vfd_probmap* map, double probability_threshold,
                                 uint64_t noise_threshold, char** json_out) {
  return guarded([&] {
    require(map, "map");
    require(json_out, "json_out");
    const auto r = vfd::patient_detect(
        map->map, {probability_threshold, static_cast<std::size_t>(noise_threshold)});
    nlohmann::ordered_json j;
    j["probability_threshold"] = probability_threshold;
    j["noise_threshold"] = noise_threshold;
    j["fracture_voxel_count"] = r.fracture_voxel_count;
    auto& comps = j["components"] = nlohmann::ordered_json::array();
    for (const auto& c : r.components)
      comps.push_back({{"size", c.size}, {"bbox_min", c.bbox_min}, {"bbox_max", c.bbox_max}});
    j["decision"] = r.decision;
    *json_out = dup_string(j.dump());
  });
}

vfd_status vfd_aggregate_vertebra(const vfd_config* cfg, const vfd_probmap* map,
                                  const char* annotations_path, double centroid_noise_mm,
                                  char** jsonl_out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(map, "map");
    require(annotations_path, "annotations_path");
    require(jsonl_out, "jsonl_out");
    const auto ann = vfd::parse_annotations_file(annotations_path);
    const auto& f = map->map.fracture();
    std::vector<vfd::Vec3> centroids;
    std::vector<const vfd::VertebraAnnotation*> kept;
    for (const auto& a : ann.annotations) {
      if (f.contains_point(a.centroid)) {
        centroids.push_back(a.centroid);
        kept.push_back(&a);
      } else {
        emit("warning: vertebra " + a.name + " lies outside the probability map; skipped");
      }
    }
    auto rng = vfd::detail::make_rng({cfg->cfg.seed, 0x63656e74ULL});
    const auto noisy = vfd::perturb_centroids(centroids, centroid_noise_mm, rng, f.dims(),
                                              f.spacing(), f.origin());
    std::string out;
    for (std::size_t k = 0; k < kept.size(); ++k) {
      const auto s = vfd::vertebra_score(map->map, noisy[k], cfg->cfg.aggregation.cube_size,
                                         cfg->cfg.aggregation.kernel_sigma_mm, kept[k]->name);
      nlohmann::ordered_json j{{"case_id", ann.case_id},
                               {"vertebra", s.name},
                               {"grade", vfd::grade_name(kept[k]->grade)},
                               {"centroid", s.centroid},
                               {"score", s.score}};
      out += j.dump() + "\n";
    }
    *jsonl_out = dup_string(out);
  });
}

vfd_status vfd_evaluate_corpus(const vfd_config* cfg, const char* corpus_dir, const char* out_dir,
                               char** digest_out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(corpus_dir, "corpus_dir");
    require(out_dir, "out_dir");
    const auto cases = vfd::load_corpus_cases(corpus_dir);
    const auto report =
        vfd::run_cross_validation(cases, cfg->cfg, emit,
                                  (std::filesystem::path(out_dir) / "checkpoints").string());
    vfd::write_report(report, out_dir);
    if (digest_out) *digest_out = dup_string(report.digest());
  });
}

}  // extern "C"
