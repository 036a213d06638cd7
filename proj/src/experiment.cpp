// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#include "vfd/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>
#include <openssl/evp.h>

#include "parallel.hpp"
#include "vfd/checkpoint.hpp"
#include "vfd/error.hpp"
#include "vfd/render.hpp"

namespace vfd {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kTrainTag = 0x7472616eULL;
constexpr std::uint64_t kCentroidTag = 0x63656e74ULL;
constexpr std::uint64_t kBootTag = 0x626f6f74ULL;

SagittalSlice mid_sagittal(const Volume& image, const ProbabilityMap& map) {
  SagittalSlice s;
  const auto& d = image.dims();
  const int x = d[0] / 2;
  s.width = d[1];
  s.height = d[2];
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y) {
      s.image.push_back(image(x, y, z));
      s.normal.push_back(map.channel(VoxelClass::kNormal)(x, y, z));
      s.fracture.push_back(map.fracture()(x, y, z));
    }
  return s;
}

ojson curve_json(const RocCurve& c) {
  ojson pts = ojson::array();
  for (const auto& p : c.points) pts.push_back({{"fpr", p.fpr}, {"tpr", p.tpr}, {"tag", p.tag}});
  return {{"auc", c.auc}, {"points", pts}};
}

ojson boot_json(const BootstrapResult& b) {
  return {{"resamples", b.resamples}, {"mean_auc", b.mean_auc}, {"std_auc", b.std_auc},
          {"fpr_grid", b.fpr_grid},   {"mean_tpr", b.mean_tpr}};
}

ojson op_json(const OperatingPoint& p) {
  return {{"recall", p.recall}, {"specificity", p.specificity}, {"tag", p.tag},
          {"feasible", p.feasible}};
}

std::string sha256_hex(const std::string& text) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), md, &len, EVP_sha256(), nullptr) != 1)
    fail(ErrorCode::kInternal, "SHA-256 failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

ojson report_body(const ExperimentReport& r) {
  ojson j;
  j["config"] = ojson::parse(r.config_json);
  ojson folds = ojson::array();
  for (const auto& f : r.folds) {
    ojson epochs = ojson::array();
    for (const auto& e : f.log)
      epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss},
                        {"val_metric", e.val_metric}, {"learning_rate", e.learning_rate}});
    folds.push_back({{"fold", f.fold},
                     {"train_ids", f.train_ids},
                     {"validation_ids", f.validation_ids},
                     {"test_ids", f.test_ids},
                     {"epochs", epochs},
                     {"patient_hull", f.patient_hull ? curve_json(*f.patient_hull) : ojson()},
                     {"vertebra_roc", f.vertebra_roc ? curve_json(*f.vertebra_roc) : ojson()}});
  }
  j["folds"] = folds;
  ojson cases = ojson::array();
  for (const auto& c : r.cases) {
    ojson verts = ojson::array();
    for (const auto& v : c.vertebrae)
      verts.push_back({{"name", v.name}, {"grade", grade_name(v.grade)}, {"fracture", v.fracture},
                       {"centroid", v.centroid}, {"score", v.score}});
    std::string bits;
    for (bool d : c.decisions) bits += d ? '1' : '0';
    cases.push_back({{"case_id", c.case_id}, {"fold", c.fold}, {"positive", c.positive},
                     {"decisions", bits}, {"vertebrae", verts}});
  }
  j["cases"] = cases;
  ojson sweep = ojson::array();
  for (const auto& s : r.patient_sweep)
    sweep.push_back({{"probability_threshold", s.hp.probability_threshold},
                     {"noise_threshold", s.hp.noise_threshold}, {"fpr", s.fpr}, {"tpr", s.tpr}});
  j["patient"] = {{"sweep", sweep},
                  {"hull", curve_json(r.patient_hull)},
                  {"bootstrap", boot_json(r.patient_bootstrap)},
                  {"youden", op_json(r.patient_youden)},
                  {"at_min_specificity", op_json(r.patient_at_specificity)}};
  j["vertebra"] = {{"roc", curve_json(r.vertebra_roc)},
                   {"bootstrap", boot_json(r.vertebra_bootstrap)},
                   {"youden", op_json(r.vertebra_youden)},
                   {"at_min_specificity", op_json(r.vertebra_at_specificity)}};
  return j;
}

}  // namespace

bool case_is_positive(const AnnotationSet& ann) {
  return std::any_of(ann.annotations.begin(), ann.annotations.end(), [](const auto& a) {
    return binary_class_of(a.grade) == BinaryClass::kFracture;
  });
}

std::string ExperimentReport::digest() const { return sha256_hex(report_body(*this).dump()); }

std::string ExperimentReport::to_json() const {
  ojson j = report_body(*this);
  j["digest"] = sha256_hex(j.dump());
  return j.dump(2);
}

TrainingCase prepare_case(const ExperimentCase& c, const ExperimentConfig& cfg) {
  TrainingCase t;
  t.case_id = c.case_id;
  t.image = preprocess(c.image, cfg.target_spacing_mm);
  t.labels = build_label_volume(c.annotations, t.image, cfg.labels);
  return t;
}

ExperimentReport run_cross_validation(const std::vector<ExperimentCase>& cases,
                                      const ExperimentConfig& cfg_in,
                                      const ProgressSink& progress,
                                      const std::string& checkpoint_dir) {
  ExperimentConfig cfg = cfg_in;
  cfg.finalize();
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };

  std::vector<CaseLabel> labels;
  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (!index_of.emplace(cases[i].case_id, i).second)
      fail(ErrorCode::kValidation, "duplicate case id " + cases[i].case_id);
    labels.push_back({cases[i].case_id, case_is_positive(cases[i].annotations)});
  }
  const FoldPlan plan = make_folds(labels, cfg.evaluation.folds, cfg.evaluation.min_negatives,
                                   cfg.seed, cfg.evaluation.validation_fraction);

  ExperimentReport report;
  report.config_json = experiment_config_to_json(cfg);
  report.grid = hyperparam_grid(cfg.aggregation.probability_thresholds,
                                cfg.aggregation.noise_thresholds);
  report.cases.resize(cases.size());
  std::vector<int> predicted(cases.size(), 0);

  say("preprocessing " + std::to_string(cases.size()) + " cases");
  std::vector<TrainingCase> prepared(cases.size());
  {
    std::vector<std::string> errors(cases.size());
    detail::parallel_for(static_cast<int>(cases.size()), cfg.workers, [&](int i, int) {
      try {
        prepared[static_cast<std::size_t>(i)] = prepare_case(cases[static_cast<std::size_t>(i)], cfg);
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(i)] = cases[static_cast<std::size_t>(i)].case_id + ": " + e.what();
      }
    });
    for (const auto& e : errors)
      if (!e.empty()) fail(ErrorCode::kDegenerate, e);
  }

  if (!checkpoint_dir.empty()) {
    std::error_code ec;
    fs::create_directories(checkpoint_dir, ec);
    if (ec) fail(ErrorCode::kIo, "cannot create " + checkpoint_dir);
  }

  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    const Fold& fold = plan.folds[f];
    FoldResult fr;
    fr.fold = static_cast<int>(f);
    fr.train_ids = fold.train_ids;
    fr.validation_ids = fold.validation_ids;
    fr.test_ids = fold.test_ids;

    // Fold discipline: nothing a model learns from may be among its test cases.
    std::set<std::string> seen(fold.train_ids.begin(), fold.train_ids.end());
    seen.insert(fold.validation_ids.begin(), fold.validation_ids.end());
    for (const auto& id : fold.test_ids)
      if (seen.count(id)) fail(ErrorCode::kInternal, "fold leak: " + id + " is trained on and tested");

    std::vector<TrainingCase> train_set, val_set;
    for (const auto& id : fold.train_ids) train_set.push_back(prepared[index_of.at(id)]);
    for (const auto& id : fold.validation_ids) val_set.push_back(prepared[index_of.at(id)]);

    TrainingConfig tcfg = cfg.training;
    tcfg.seed = detail::make_rng({cfg.seed, static_cast<std::uint64_t>(f), kTrainTag})();
    say("fold " + std::to_string(f) + ": training on " + std::to_string(train_set.size()) +
        " cases, validating on " + std::to_string(val_set.size()));
    TrainResult tr = train(train_set, val_set, cfg.network, tcfg, [&](const EpochLog& e) {
      say("fold " + std::to_string(f) + " " + format_epoch_log(e));
    });
    fr.log = tr.log;
    if (!checkpoint_dir.empty())
      save_checkpoint(tr.network,
                      (fs::path(checkpoint_dir) / ("fold" + std::to_string(f) + ".ckpt")).string());

    std::vector<std::size_t> test_index;
    for (const auto& id : fold.test_ids) test_index.push_back(index_of.at(id));
    for (std::size_t ci : test_index) {
      const TrainingCase& tc = prepared[ci];
      const ProbabilityMap map = infer_volume(tc.image, tr.network, cfg.inference.tile, cfg.workers);
      CaseResult& cr = report.cases[ci];
      cr.case_id = tc.case_id;
      cr.fold = static_cast<int>(f);
      cr.positive = labels[ci].positive;
      const auto dec = patient_decisions({&map}, report.grid);
      for (const auto& row : dec) cr.decisions.push_back(row[0]);

      // Simulated automatic localization: noisy centroids, clamped to the grid.
      auto rng = detail::make_rng({cfg.seed, static_cast<std::uint64_t>(ci), kCentroidTag});
      std::vector<Vec3> truth;
      std::vector<const VertebraAnnotation*> kept;
      for (const auto& a : cases[ci].annotations.annotations)
        if (tc.image.contains_point(a.centroid)) {
          truth.push_back(a.centroid);
          kept.push_back(&a);
        }
      const auto noisy = perturb_centroids(truth, cfg.aggregation.centroid_noise_mm, rng,
                                           tc.image.dims(), tc.image.spacing(), tc.image.origin());
      for (std::size_t k = 0; k < kept.size(); ++k) {
        const auto s = vertebra_score(map, noisy[k], cfg.aggregation.cube_size,
                                      cfg.aggregation.kernel_sigma_mm, kept[k]->name);
        cr.vertebrae.push_back({kept[k]->name, kept[k]->grade,
                                binary_class_of(kept[k]->grade) == BinaryClass::kFracture,
                                noisy[k], s.score});
      }
      cr.slice = mid_sagittal(tc.image, map);
      ++predicted[ci];
    }

    // Per-fold curves where the fold has both classes.
    std::vector<std::vector<bool>> fdec(report.grid.size());
    std::vector<int> flab;
    std::vector<double> vs;
    std::vector<int> vl;
    for (std::size_t ci : test_index) {
      for (std::size_t g = 0; g < report.grid.size(); ++g)
        fdec[g].push_back(report.cases[ci].decisions[g]);
      flab.push_back(report.cases[ci].positive);
      for (const auto& v : report.cases[ci].vertebrae) {
        vs.push_back(v.score);
        vl.push_back(v.fracture);
      }
    }
    const auto both = [](const std::vector<int>& l) {
      return std::count(l.begin(), l.end(), 1) > 0 && std::count(l.begin(), l.end(), 0) > 0;
    };
    if (both(flab)) fr.patient_hull = hull_from_decisions(fdec, flab);
    if (both(vl)) fr.vertebra_roc = roc_from_scores(vs, vl);
    report.folds.push_back(std::move(fr));
  }

  for (std::size_t i = 0; i < cases.size(); ++i)
    if (predicted[i] != 1)
      fail(ErrorCode::kInternal, "case " + cases[i].case_id + " predicted " +
                                     std::to_string(predicted[i]) + " times");

  // Pooled patient-level hull over the hyperparameter grid.
  say("pooling and bootstrapping");
  std::vector<std::vector<bool>> decisions(report.grid.size());
  std::vector<int> patient_labels;
  for (const auto& c : report.cases) {
    for (std::size_t g = 0; g < report.grid.size(); ++g) decisions[g].push_back(c.decisions[g]);
    patient_labels.push_back(c.positive);
  }
  std::vector<std::string> tags;
  for (const auto& hp : report.grid) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "p=%g,noise=%zu", hp.probability_threshold, hp.noise_threshold);
    tags.push_back(buf);
  }
  report.patient_hull = hull_from_decisions(decisions, patient_labels, tags);
  {
    const double pos = static_cast<double>(std::count(patient_labels.begin(), patient_labels.end(), 1));
    const double neg = static_cast<double>(patient_labels.size()) - pos;
    for (std::size_t g = 0; g < report.grid.size(); ++g) {
      double tp = 0, fp = 0;
      for (std::size_t c = 0; c < patient_labels.size(); ++c)
        if (decisions[g][c]) (patient_labels[c] ? tp : fp) += 1;
      report.patient_sweep.push_back({report.grid[g], fp / neg, tp / pos});
    }
  }
  const auto boot_seed = detail::make_rng({cfg.seed, kBootTag})();
  report.patient_bootstrap =
      bootstrap_hull_roc(decisions, patient_labels, cfg.evaluation.bootstrap_resamples, boot_seed,
                         cfg.evaluation.grid_points);
  report.patient_youden = operating_point(report.patient_hull, {CriterionKind::kYouden, 0.0});
  report.patient_at_specificity = operating_point(
      report.patient_hull, {CriterionKind::kMinSpecificity, cfg.evaluation.min_specificity});

  std::vector<double> scores;
  std::vector<int> vlabels;
  for (const auto& c : report.cases)
    for (const auto& v : c.vertebrae) {
      scores.push_back(v.score);
      vlabels.push_back(v.fracture);
    }
  report.vertebra_roc = roc_from_scores(scores, vlabels);
  report.vertebra_bootstrap = bootstrap_roc(scores, vlabels, cfg.evaluation.bootstrap_resamples,
                                            boot_seed + 1, cfg.evaluation.grid_points);
  report.vertebra_youden = operating_point(report.vertebra_roc, {CriterionKind::kYouden, 0.0});
  report.vertebra_at_specificity = operating_point(
      report.vertebra_roc, {CriterionKind::kMinSpecificity, cfg.evaluation.min_specificity});
  return report;
}

std::vector<ExperimentCase> load_corpus_cases(const std::string& corpus_dir) {
  const Manifest m = read_manifest(corpus_dir);
  std::vector<ExperimentCase> out;
  for (const auto& e : m.cases) {
    CorpusCase c = load_corpus_case(corpus_dir, e);
    out.push_back({c.case_id, std::move(c.image), std::move(c.annotations)});
  }
  return out;
}

TrainResult train_on_cases(const std::vector<ExperimentCase>& cases, const ExperimentConfig& cfg_in,
                           const ProgressSink& progress) {
  ExperimentConfig cfg = cfg_in;
  cfg.finalize();
  if (cases.size() < 2) fail(ErrorCode::kConfig, "training needs at least two cases");
  std::vector<std::size_t> order(cases.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto rng = detail::make_rng({cfg.seed, kTrainTag});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(cfg.evaluation.validation_fraction * cases.size())), 1,
      cases.size() - 1);
  std::vector<TrainingCase> train_set, val_set;
  for (std::size_t k = 0; k < order.size(); ++k)
    (k < n_val ? val_set : train_set).push_back(prepare_case(cases[order[k]], cfg));
  if (progress)
    progress("training on " + std::to_string(train_set.size()) + " cases, validating on " +
             std::to_string(val_set.size()));
  return train(train_set, val_set, cfg.network, cfg.training, [&](const EpochLog& e) {
    if (progress) progress(format_epoch_log(e));
  });
}

void write_report(const ExperimentReport& report, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + dir);
  const fs::path root(dir);
  {
    std::ofstream out(root / "report.json", std::ios::trunc);
    out << report.to_json() << "\n";
    if (!out) fail(ErrorCode::kIo, "failed writing report.json");
  }
  {
    // Wall times live only here; they are excluded from the digest.
    std::ofstream out(root / "training_log.jsonl", std::ios::trunc);
    for (const auto& f : report.folds)
      for (const auto& e : f.log) out << "{\"fold\":" << f.fold << "," << format_epoch_log(e).substr(1) << "\n";
    if (!out) fail(ErrorCode::kIo, "failed writing training_log.jsonl");
  }
  std::vector<RocPoint> raw;
  for (const auto& s : report.patient_sweep) raw.push_back({s.fpr, s.tpr, {}});
  render_roc_png((root / "roc_patient.png").string(), report.patient_hull, raw,
                 &report.patient_bootstrap);
  render_roc_png((root / "roc_vertebra.png").string(), report.vertebra_roc, {},
                 &report.vertebra_bootstrap);
  int shown_pos = 0, shown_neg = 0;
  for (const auto& c : report.cases) {
    int& shown = c.positive ? shown_pos : shown_neg;
    if (shown >= 3 || c.slice.width == 0) continue;
    ++shown;
    render_overlay_png((root / ("overlay_" + c.case_id + ".png")).string(), c.slice);
  }
}

}  // namespace vfd
