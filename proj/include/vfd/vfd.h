/* Copyright 2026 The vfd Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the vertebral fracture detection pipeline. Objects are
 * opaque handles released with the matching *_free function. Every call
 * returns a vfd_status; on failure vfd_last_error() describes the problem
 * for the calling thread. Strings returned through char** are owned by the
 * caller and released with vfd_string_free.
 */
#ifndef VFD_VFD_H_
#define VFD_VFD_H_

#include <stddef.h>
#include <stdint.h>

#if defined(VFD_BUILDING_LIBRARY)
#define VFD_API __attribute__((visibility("default")))
#else
#define VFD_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vfd_status {
  VFD_OK = 0,
  VFD_ERR_IO = 1,
  VFD_ERR_FORMAT = 2,
  VFD_ERR_ARGUMENT = 3,
  VFD_ERR_PARSE = 4,
  VFD_ERR_VALIDATION = 5,
  VFD_ERR_CONFIG = 6,
  VFD_ERR_SHAPE = 7,
  VFD_ERR_DEGENERATE = 8,
  VFD_ERR_EVALUATION = 9,
  VFD_ERR_INTERNAL = 10
} vfd_status;

typedef struct vfd_config vfd_config;
typedef struct vfd_volume vfd_volume;
typedef struct vfd_probmap vfd_probmap;
typedef struct vfd_network vfd_network;

/* Receives one progress line (training epochs, fold boundaries). */
typedef void (*vfd_log_fn)(const char* line, void* user);

VFD_API const char* vfd_version(void);
VFD_API const char* vfd_status_name(vfd_status status);
/* Message of the last failed call on this thread ("" if none). */
VFD_API const char* vfd_last_error(void);
VFD_API void vfd_string_free(char* s);
/* Process-wide progress sink; NULL disables. */
VFD_API void vfd_set_log(vfd_log_fn fn, void* user);

/* ---- configuration ---------------------------------------------------- */
VFD_API vfd_status vfd_config_default(vfd_config** out);
VFD_API vfd_status vfd_config_load(const char* path, vfd_config** out);
VFD_API vfd_status vfd_config_parse(const char* json, vfd_config** out);
/* "dotted.key=value"; unknown keys fail with VFD_ERR_CONFIG. */
VFD_API vfd_status vfd_config_set(vfd_config* cfg, const char* assignment);
VFD_API vfd_status vfd_config_to_json(const vfd_config* cfg, char** out);
VFD_API void vfd_config_free(vfd_config* cfg);

/* ---- architecture arithmetic ------------------------------------------ */
VFD_API vfd_status vfd_receptive_field(const vfd_config* cfg, int normal[3],
                                       int subsampled_effective[3]);
VFD_API vfd_status vfd_parameter_count(const vfd_config* cfg, uint64_t* out);

/* ---- volumes ----------------------------------------------------------- */
VFD_API vfd_status vfd_volume_create(const int dims[3], const double spacing[3],
                                     const double origin[3], const float* data,
                                     vfd_volume** out);
VFD_API vfd_status vfd_volume_load(const char* path, vfd_volume** out);
VFD_API vfd_status vfd_volume_save(const vfd_volume* vol, const char* path);
VFD_API vfd_status vfd_volume_info(const vfd_volume* vol, int dims[3], double spacing[3],
                                   double origin[3]);
/* x-fastest voxel data, valid until the handle is freed. */
VFD_API const float* vfd_volume_data(const vfd_volume* vol);
/* Resample to the configured spacing, then zero-mean unit-std. */
VFD_API vfd_status vfd_volume_preprocess(const vfd_config* cfg, const vfd_volume* in,
                                         vfd_volume** out);
VFD_API void vfd_volume_free(vfd_volume* vol);

/* ---- phantom corpus ---------------------------------------------------- */
VFD_API vfd_status vfd_phantom_generate(const vfd_config* cfg, const char* out_dir,
                                        int* n_cases);

/* ---- labels ------------------------------------------------------------ */
/* Builds the dense label volume for one annotation file on the resampled
 * grid of `volume_path`. `skipped` (optional) receives the number of
 * vertebrae whose centroid lies outside the volume. */
VFD_API vfd_status vfd_build_labels(const vfd_config* cfg, const char* annotations_path,
                                    const char* volume_path, const char* out_path,
                                    int* skipped);

/* ---- training and inference ------------------------------------------- */
VFD_API vfd_status vfd_network_create(const vfd_config* cfg, uint64_t seed, vfd_network** out);
VFD_API vfd_status vfd_network_load(const char* path, vfd_network** out);
VFD_API vfd_status vfd_network_save(const vfd_network* net, const char* path);
VFD_API vfd_status vfd_network_parameter_count(const vfd_network* net, uint64_t* out);
VFD_API void vfd_network_free(vfd_network* net);

/* Trains on every case of a corpus; writes the epoch log (JSON lines) to
 * `log_path` when it is not NULL. */
VFD_API vfd_status vfd_train_corpus(const vfd_config* cfg, const char* corpus_dir,
                                    vfd_network** out, const char* log_path);

/* `image` must already be preprocessed. */
VFD_API vfd_status vfd_infer(const vfd_config* cfg, const vfd_network* net,
                             const vfd_volume* image, vfd_probmap** out);
VFD_API vfd_status vfd_probmap_load(const char* path, vfd_probmap** out);
VFD_API vfd_status vfd_probmap_save(const vfd_probmap* map, const char* path);
VFD_API vfd_status vfd_probmap_info(const vfd_probmap* map, int dims[3], double spacing[3],
                                    double origin[3]);
/* Class 0 background, 1 normal, 2 fracture; x-fastest. */
VFD_API const float* vfd_probmap_channel(const vfd_probmap* map, int cls);
VFD_API void vfd_probmap_free(vfd_probmap* map);

/* ---- aggregation ------------------------------------------------------- */
/* JSON record: fracture_voxel_count, components, decision. */
VFD_API vfd_status vfd_aggregate_patient(const vfd_probmap* map, double probability_threshold,
                                         uint64_t noise_threshold, char** json_out);
/* One JSON line per annotated vertebra inside the map: name, grade, score.
 * Centroids are perturbed by `centroid_noise_mm` (0 keeps them) using the
 * configured seed; cube size and kernel sigma come from the config. */
VFD_API vfd_status vfd_aggregate_vertebra(const vfd_config* cfg, const vfd_probmap* map,
                                          const char* annotations_path,
                                          double centroid_noise_mm, char** jsonl_out);

/* ---- evaluation -------------------------------------------------------- */
/* Stratified cross-validation over a corpus. Writes report.json, plots and
 * fold checkpoints to `out_dir`; `digest_out` (optional) receives the
 * report's SHA-256. */
VFD_API vfd_status vfd_evaluate_corpus(const vfd_config* cfg, const char* corpus_dir,
                                       const char* out_dir, char** digest_out);

#ifdef __cplusplus
}
#endif

#endif /* VFD_VFD_H_ */
