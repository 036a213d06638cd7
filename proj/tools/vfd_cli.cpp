// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Talks to the library through the C API only.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vfd/vfd.h"

namespace fs = std::filesystem;

namespace {

// sysexits-style exit codes.
constexpr int kExitUsage = 64;
constexpr int kExitData = 65;
constexpr int kExitSoftware = 70;
constexpr int kExitIo = 74;

struct CliFailure {
  vfd_status status;
  std::string message;
};

int exit_code_for(vfd_status s) {
  switch (s) {
    case VFD_ERR_CONFIG:
    case VFD_ERR_ARGUMENT: return kExitUsage;
    case VFD_ERR_IO: return kExitIo;
    case VFD_ERR_FORMAT:
    case VFD_ERR_PARSE:
    case VFD_ERR_VALIDATION:
    case VFD_ERR_SHAPE:
    case VFD_ERR_DEGENERATE:
    case VFD_ERR_EVALUATION: return kExitData;
    default: return kExitSoftware;
  }
}

void check(vfd_status s) {
  if (s != VFD_OK) throw CliFailure{s, vfd_last_error()};
}

void report_error(const std::string& command, const std::string& kind, int status,
                  const std::string& message) {
  nlohmann::ordered_json j{{"error", {{"command", command}, {"kind", kind}, {"status", status},
                                      {"message", message}}}};
  std::cerr << j.dump() << std::endl;
}

template <typename T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(p); }
  T** out() { return &p; }
  T* get() const { return p; }
};
using Config = Handle<vfd_config, vfd_config_free>;
using VolumeH = Handle<vfd_volume, vfd_volume_free>;
using MapH = Handle<vfd_probmap, vfd_probmap_free>;
using NetH = Handle<vfd_network, vfd_network_free>;

struct OwnedString {
  char* p = nullptr;
  ~OwnedString() { vfd_string_free(p); }
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Seed for all randomness");
  cmd->add_option("--workers", c.workers, "Worker threads (results do not depend on it)");
  cmd->add_option("--set", c.overrides, "Config override, dotted.key=value (repeatable)");
}

void load_config(const Common& c, Config& cfg) {
  if (c.config.empty())
    check(vfd_config_default(cfg.out()));
  else
    check(vfd_config_load(c.config.c_str(), cfg.out()));
  for (const auto& o : c.overrides) check(vfd_config_set(cfg.get(), o.c_str()));
  if (c.seed) check(vfd_config_set(cfg.get(), ("seed=" + std::to_string(*c.seed)).c_str()));
  if (c.workers)
    check(vfd_config_set(cfg.get(), ("workers=" + std::to_string(*c.workers)).c_str()));
}

void log_to_stderr(const char* line, void*) { std::fprintf(stderr, "%s\n", line); }

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw CliFailure{VFD_ERR_IO, "cannot write " + path};
  out << text;
}

// Pairs <id>.csv (or <id>/annotations.csv) with <id>.nii[.gz] (or
// <id>/image.nii.gz) under the volumes directory.
std::vector<std::pair<std::string, std::pair<fs::path, fs::path>>> pair_cases(
    const fs::path& ann_dir, const fs::path& vol_dir) {
  std::vector<std::pair<std::string, std::pair<fs::path, fs::path>>> out;
  if (!fs::is_directory(ann_dir))
    throw CliFailure{VFD_ERR_IO, "not a directory: " + ann_dir.string()};
  std::vector<fs::directory_entry> entries(fs::directory_iterator(ann_dir), {});
  std::sort(entries.begin(), entries.end());
  for (const auto& e : entries) {
    std::string id;
    fs::path ann;
    if (e.is_regular_file() && e.path().extension() == ".csv") {
      id = e.path().stem().string();
      ann = e.path();
    } else if (e.is_directory() && fs::exists(e.path() / "annotations.csv")) {
      id = e.path().filename().string();
      ann = e.path() / "annotations.csv";
    } else {
      continue;
    }
    fs::path vol;
    for (const fs::path& cand : {vol_dir / (id + ".nii.gz"), vol_dir / (id + ".nii"),
                                 vol_dir / id / "image.nii.gz"})
      if (fs::exists(cand)) {
        vol = cand;
        break;
      }
    if (vol.empty()) throw CliFailure{VFD_ERR_IO, "no volume found for annotations of " + id};
    out.push_back({id, {ann, vol}});
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vertebral fracture detection pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(vfd_version()));

  Common c_phantom, c_labels, c_train, c_infer, c_agg, c_eval;
  std::string out_path;

  auto* phantom = app.add_subcommand("phantom-gen", "Generate a synthetic phantom corpus");
  add_common(phantom, c_phantom);
  phantom->add_option("--out", out_path, "Corpus directory")->required();

  std::string ann_dir, vol_dir;
  auto* labels = app.add_subcommand("build-labels", "Build dense label volumes from annotations");
  add_common(labels, c_labels);
  labels->add_option("--annotations", ann_dir, "Directory of annotation files")->required();
  labels->add_option("--volumes", vol_dir, "Directory of volumes")->required();
  labels->add_option("--out", out_path, "Output directory")->required();

  std::string corpus, log_path;
  auto* trainc = app.add_subcommand("train", "Train a network on a corpus");
  add_common(trainc, c_train);
  trainc->add_option("--corpus", corpus, "Corpus directory")->required();
  trainc->add_option("--out", out_path, "Checkpoint path")->required();
  trainc->add_option("--log", log_path, "Epoch log (JSON lines)");

  std::string volume, checkpoint;
  auto* infer = app.add_subcommand("infer", "Predict a probability map for one volume");
  add_common(infer, c_infer);
  infer->add_option("--volume", volume, "Input volume")->required()->check(CLI::ExistingFile);
  infer->add_option("--checkpoint", checkpoint, "Network checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  infer->add_option("--out", out_path, "Probability map path")->required();

  std::string map_path, mode = "patient", annotations;
  double prob_threshold = 0.5, centroid_noise = 0.0;
  std::uint64_t noise_threshold = 0;
  auto* agg = app.add_subcommand("aggregate", "Patient or vertebra decisions from a map");
  add_common(agg, c_agg);
  agg->add_option("--map", map_path, "Probability map")->required()->check(CLI::ExistingFile);
  agg->add_option("--mode", mode, "patient or vertebra")
      ->check(CLI::IsMember({"patient", "vertebra"}));
  agg->add_option("--probability-threshold", prob_threshold, "Patient mode")
      ->check(CLI::Range(0.0, 1.0));
  agg->add_option("--noise-threshold", noise_threshold, "Patient mode, voxels");
  agg->add_option("--annotations", annotations, "Vertebra mode centroids")
      ->check(CLI::ExistingFile);
  agg->add_option("--centroid-noise", centroid_noise, "Vertebra mode, mm")
      ->check(CLI::NonNegativeNumber);
  agg->add_option("--out", out_path, "Output records (default stdout)");

  auto* eval = app.add_subcommand("evaluate", "Cross-validated evaluation on a corpus");
  add_common(eval, c_eval);
  eval->add_option("--corpus", corpus, "Corpus directory")->required();
  eval->add_option("--out", out_path, "Report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error(app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name(),
                 "usage", VFD_ERR_ARGUMENT, e.what());
    return kExitUsage;
  }

  CLI::App* cmd = app.get_subcommands().front();
  const std::string name = cmd->get_name();
  vfd_set_log(log_to_stderr, nullptr);
  try {
    Config cfg;
    if (cmd == phantom) {
      load_config(c_phantom, cfg);
      int n = 0;
      check(vfd_phantom_generate(cfg.get(), out_path.c_str(), &n));
      std::cout << nlohmann::json{{"corpus", out_path}, {"cases", n}}.dump() << "\n";
    } else if (cmd == labels) {
      load_config(c_labels, cfg);
      std::error_code ec;
      fs::create_directories(out_path, ec);
      if (ec) throw CliFailure{VFD_ERR_IO, "cannot create " + out_path};
      int written = 0;
      for (const auto& [id, paths] : pair_cases(ann_dir, vol_dir)) {
        const std::string dst = (fs::path(out_path) / (id + ".labels.nii.gz")).string();
        int skipped = 0;
        check(vfd_build_labels(cfg.get(), paths.first.c_str(), paths.second.c_str(), dst.c_str(),
                               &skipped));
        std::cout << nlohmann::json{{"case_id", id}, {"labels", dst}, {"skipped", skipped}}.dump()
                  << "\n";
        ++written;
      }
      if (written == 0) throw CliFailure{VFD_ERR_IO, "no annotation files found in " + ann_dir};
    } else if (cmd == trainc) {
      load_config(c_train, cfg);
      NetH net;
      check(vfd_train_corpus(cfg.get(), corpus.c_str(), net.out(),
                             log_path.empty() ? nullptr : log_path.c_str()));
      check(vfd_network_save(net.get(), out_path.c_str()));
      std::uint64_t n = 0;
      check(vfd_network_parameter_count(net.get(), &n));
      std::cout << nlohmann::json{{"checkpoint", out_path}, {"parameters", n}}.dump() << "\n";
    } else if (cmd == infer) {
      load_config(c_infer, cfg);
      NetH net;
      check(vfd_network_load(checkpoint.c_str(), net.out()));
      VolumeH raw, pre;
      check(vfd_volume_load(volume.c_str(), raw.out()));
      check(vfd_volume_preprocess(cfg.get(), raw.get(), pre.out()));
      MapH map;
      check(vfd_infer(cfg.get(), net.get(), pre.get(), map.out()));
      check(vfd_probmap_save(map.get(), out_path.c_str()));
      std::cout << nlohmann::json{{"map", out_path}}.dump() << "\n";
    } else if (cmd == agg) {
      load_config(c_agg, cfg);
      MapH map;
      check(vfd_probmap_load(map_path.c_str(), map.out()));
      OwnedString text;
      if (mode == "patient") {
        check(vfd_aggregate_patient(map.get(), prob_threshold, noise_threshold, &text.p));
        write_output(out_path, std::string(text.p) + "\n");
      } else {
        if (annotations.empty())
          throw CliFailure{VFD_ERR_ARGUMENT, "--annotations is required in vertebra mode"};
        check(vfd_aggregate_vertebra(cfg.get(), map.get(), annotations.c_str(), centroid_noise,
                                     &text.p));
        write_output(out_path, text.p);
      }
    } else if (cmd == eval) {
      load_config(c_eval, cfg);
      OwnedString digest;
      check(vfd_evaluate_corpus(cfg.get(), corpus.c_str(), out_path.c_str(), &digest.p));
      std::cout << nlohmann::json{{"report", (fs::path(out_path) / "report.json").string()},
                                  {"digest", digest.p}}
                       .dump()
                << "\n";
    }
  } catch (const CliFailure& f) {
    report_error(name, vfd_status_name(f.status), f.status, f.message);
    return exit_code_for(f.status);
  } catch (const std::exception& e) {
    report_error(name, "internal", VFD_ERR_INTERNAL, e.what());
    return kExitSoftware;
  }
  return 0;
}
