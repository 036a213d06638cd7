// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#include "vfd/trainer.hpp"

#include "parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

namespace vfd {

using detail::make_rng;
using detail::parallel_for;

void TrainingConfig::validate() const {
  if (epochs < 1) fail(ErrorCode::kConfig, "epochs must be >= 1");
  if (!(initial_lr >= 0.0)) fail(ErrorCode::kConfig, "initial_lr must be >= 0");
  if (l1_weight < 0.0 || l2_weight < 0.0)
    fail(ErrorCode::kConfig, "regularization weights must be >= 0");
  if (segment_batch < 1) fail(ErrorCode::kConfig, "segment_batch must be >= 1");
  if (batches_per_epoch < 1) fail(ErrorCode::kConfig, "batches_per_epoch must be >= 1");
  double sum = 0.0;
  for (double w : sampling_weights) {
    if (!(w >= 0.0)) fail(ErrorCode::kConfig, "sampling weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-6) fail(ErrorCode::kConfig, "sampling weights must sum to 1");
  if (augmentation.intensity_noise_std < 0.0)
    fail(ErrorCode::kConfig, "intensity_noise_std must be >= 0");
  for (int d : segment_output)
    if (d < 1) fail(ErrorCode::kConfig, "segment_output dims must be positive");
  if (lr_anneal.enabled && (!(lr_anneal.factor > 0.0 && lr_anneal.factor <= 1.0) ||
                            lr_anneal.patience < 1))
    fail(ErrorCode::kConfig, "plateau rule needs factor in (0,1] and patience >= 1");
  if (validation_segments < 0) fail(ErrorCode::kConfig, "validation_segments must be >= 0");
  if (!(rmsprop_rho >= 0.0 && rmsprop_rho < 1.0) || !(rmsprop_epsilon > 0.0))
    fail(ErrorCode::kConfig, "invalid RMSProp constants");
  if (workers < 1) fail(ErrorCode::kConfig, "workers must be >= 1");
}

SegmentLayout SegmentLayout::make(const NetworkConfig& cfg, const Dims3& output) {
  SegmentLayout l{};
  const ReceptiveField rf = receptive_field(cfg);
  l.output = output;
  l.factor = subsample_factors(cfg);
  for (int a = 0; a < 3; ++a) {
    if (output[a] < 1) fail(ErrorCode::kConfig, "segment output dims must be positive");
    if (output[a] % l.factor[a] != 0)
      fail(ErrorCode::kConfig, "training segment output must be a multiple of the subsample "
                               "factor on every subsampled axis");
    l.halo[a] = (rf.normal[a] - 1) / 2;
    l.block[a] = output[a] + 2 * l.factor[a] * l.halo[a];
    l.normal_offset[a] = l.factor[a] * l.halo[a] - l.halo[a];
  }
  return l;
}

namespace {

struct ClassIndex {
  std::array<std::vector<std::uint32_t>, kNumClasses> voxels;

  explicit ClassIndex(const LabelVolume& labels) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const int c = labels[i];
      if (c < kNumClasses) voxels[c].push_back(static_cast<std::uint32_t>(i));
    }
  }
};

std::array<double, 3> effective_weights(const std::array<double, 3>& weights,
                                        const ClassIndex& index, const LogSink& log) {
  std::array<double, 3> w = weights;
  double present = 0.0, absent = 0.0;
  int n_present = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    if (index.voxels[c].empty()) {
      absent += w[c];
      w[c] = 0.0;
    } else {
      present += w[c];
      ++n_present;
    }
  }
  if (n_present == 0) fail(ErrorCode::kArgument, "label volume has no voxels");
  if (absent > 0.0 && log) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "sampling: weight %.4g of absent classes redistributed over present classes",
                  absent);
    log(buf);
  }
  if (present > 0.0) {
    for (double& v : w) v /= present;
  } else {
    for (int c = 0; c < kNumClasses; ++c) w[c] = index.voxels[c].empty() ? 0.0 : 1.0 / n_present;
  }
  return w;
}

std::array<int, 3> draw_center(const LabelVolume& labels, const ClassIndex& index,
                               const std::array<double, 3>& w, std::mt19937_64& rng,
                               VoxelClass& cls) {
  std::discrete_distribution<int> pick_class({w[0], w[1], w[2]});
  const int c = pick_class(rng);
  const auto& list = index.voxels[c];
  std::uniform_int_distribution<std::size_t> pick(0, list.size() - 1);
  const std::size_t i = list[pick(rng)];
  const auto& d = labels.dims();
  cls = static_cast<VoxelClass>(c);
  return {static_cast<int>(i % d[0]), static_cast<int>((i / d[0]) % d[1]),
          static_cast<int>(i / (static_cast<std::size_t>(d[0]) * d[1]))};
}

TrainingSegment extract_segment(const Volume& image, const LabelVolume& labels,
                                const SegmentLayout& layout, const std::array<int, 3>& center,
                                VoxelClass cls) {
  TrainingSegment seg;
  seg.output = layout.output;
  seg.center = center;
  seg.center_class = cls;
  seg.block = Tensor<float>(1, layout.block);
  std::array<int, 3> out_start{}, block_start{};
  for (int a = 0; a < 3; ++a) {
    out_start[a] = center[a] - layout.output[a] / 2;
    block_start[a] = out_start[a] - layout.factor[a] * layout.halo[a];
  }
  const auto& b = layout.block;
  for (int z = 0; z < b[2]; ++z)
    for (int y = 0; y < b[1]; ++y)
      for (int x = 0; x < b[0]; ++x) {
        const int ix = block_start[0] + x, iy = block_start[1] + y, iz = block_start[2] + z;
        if (image.contains(ix, iy, iz)) seg.block.at(0, x, y, z) = image(ix, iy, iz);
      }
  const auto& o = layout.output;
  seg.target.assign(static_cast<std::size_t>(o[0]) * o[1] * o[2], 0);
  std::size_t i = 0;
  for (int z = 0; z < o[2]; ++z)
    for (int y = 0; y < o[1]; ++y)
      for (int x = 0; x < o[0]; ++x, ++i) {
        const int ix = out_start[0] + x, iy = out_start[1] + y, iz = out_start[2] + z;
        if (labels.contains(ix, iy, iz)) seg.target[i] = labels(ix, iy, iz);
      }
  return seg;
}

template <typename V>
void reverse_axis(V* data, const Dims3& d, int axis) {
  const std::size_t sx = 1, sy = static_cast<std::size_t>(d[0]),
                    sz = static_cast<std::size_t>(d[0]) * d[1];
  const std::size_t stride = axis == 0 ? sx : axis == 1 ? sy : sz;
  const int n = d[axis];
  for (int z = 0; z < (axis == 2 ? 1 : d[2]); ++z)
    for (int y = 0; y < (axis == 1 ? 1 : d[1]); ++y)
      for (int x = 0; x < (axis == 0 ? 1 : d[0]); ++x) {
        V* base = data + x * sx + y * sy + z * sz;
        for (int i = 0, j = n - 1; i < j; ++i, --j) std::swap(base[i * stride], base[j * stride]);
      }
}

}  // namespace

std::vector<TrainingSegment> sample_segments(const Volume& image, const LabelVolume& labels,
                                             const SegmentLayout& layout,
                                             const std::array<double, 3>& weights, int n,
                                             std::mt19937_64& rng, const LogSink& log) {
  if (image.dims() != labels.dims())
    fail(ErrorCode::kShape, "image and label volume dims differ");
  if (n < 1) fail(ErrorCode::kArgument, "segment count must be >= 1");
  const ClassIndex index(labels);
  const auto w = effective_weights(weights, index, log);
  std::vector<TrainingSegment> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    VoxelClass cls{};
    const auto center = draw_center(labels, index, w, rng, cls);
    out.push_back(extract_segment(image, labels, layout, center, cls));
  }
  return out;
}

void flip_segment(TrainingSegment& seg, int axis) {
  reverse_axis(seg.block.data.data(), seg.block.dims, axis);
  reverse_axis(seg.target.data(), seg.output, axis);
}

std::array<bool, 3> augment(TrainingSegment& seg, const AugmentationConfig& cfg,
                            std::mt19937_64& rng) {
  std::array<bool, 3> flipped{false, false, false};
  std::bernoulli_distribution coin(0.5);
  for (int a = 0; a < 3; ++a) {
    if (!cfg.flip_axes[a]) continue;
    flipped[a] = coin(rng);
    if (flipped[a]) flip_segment(seg, a);
  }
  if (cfg.intensity_noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.intensity_noise_std);
    for (float& v : seg.block.data) v = static_cast<float>(v + noise(rng));
  }
  return flipped;
}

SegmentInput<float> to_network_input(const TrainingSegment& seg, const SegmentLayout& layout) {
  SegmentInput<float> in;
  Dims3 nd{};
  for (int a = 0; a < 3; ++a) nd[a] = layout.output[a] + 2 * layout.halo[a];
  in.normal = Tensor<float>(1, nd);
  const auto& off = layout.normal_offset;
  for (int z = 0; z < nd[2]; ++z)
    for (int y = 0; y < nd[1]; ++y) {
      const float* src = &seg.block.at(0, off[0], off[1] + y, off[2] + z);
      std::copy(src, src + nd[0], &in.normal.at(0, 0, y, z));
    }
  in.low = average_downsample(seg.block, layout.factor);
  return in;
}

std::string format_epoch_log(const EpochLog& e) {
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "{\"epoch\":%d,\"train_loss\":%.9g,\"val_loss\":%.9g,\"val_metric\":%.9g,"
                "\"lr\":%.9g,\"wall_seconds\":%.3f}",
                e.epoch, e.train_loss, e.val_loss, e.val_metric, e.learning_rate,
                e.wall_seconds);
  return buf;
}

namespace {

struct ValidationResult {
  double loss = 0.0;
  double metric = 0.0;
};

ValidationResult validate_segments(const Network<float>& net,
                                   const std::vector<SegmentInput<float>>& inputs,
                                   const std::vector<std::vector<std::uint8_t>>& targets,
                                   int workers) {
  const int n = static_cast<int>(inputs.size());
  std::vector<std::array<double, 3>> correct(inputs.size()), count(inputs.size());
  std::vector<double> losses(inputs.size(), 0.0);
  std::vector<Workspace<float>> ws(static_cast<std::size_t>(std::max(1, workers)));
  parallel_for(n, workers, [&](int i, int w) {
    Tensor<float> probs;
    net.forward(inputs[i], probs, ws[w]);
    const std::size_t s = probs.spatial();
    correct[i] = {0, 0, 0};
    count[i] = {0, 0, 0};
    for (std::size_t v = 0; v < s; ++v) {
      const int t = targets[i][v];
      int arg = 0;
      for (int c = 1; c < kNumClasses; ++c)
        if (probs.data[c * s + v] > probs.data[arg * s + v]) arg = c;
      count[i][t] += 1;
      if (arg == t) correct[i][t] += 1;
      losses[i] -= std::log(std::max<double>(probs.data[t * s + v], 1e-30));
    }
  });
  std::array<double, 3> c{0, 0, 0}, k{0, 0, 0};
  double loss = 0.0, voxels = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 3; ++j) {
      c[j] += correct[i][j];
      k[j] += count[i][j];
    }
    loss += losses[i];
  }
  for (double v : k) voxels += v;
  ValidationResult r;
  r.loss = voxels > 0 ? loss / voxels : 0.0;
  int present = 0;
  for (int j = 0; j < 3; ++j)
    if (k[j] > 0) {
      r.metric += c[j] / k[j];
      ++present;
    }
  if (present > 0) r.metric /= present;
  return r;
}

}  // namespace

TrainResult train(const std::vector<TrainingCase>& train_cases,
                  const std::vector<TrainingCase>& val_cases, const NetworkConfig& net_cfg,
                  const TrainingConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch,
                  const Network<float>* initial) {
  cfg.validate();
  if (train_cases.empty()) fail(ErrorCode::kConfig, "training needs at least one case");
  if (cfg.lr_anneal.enabled && (val_cases.empty() || cfg.validation_segments == 0))
    fail(ErrorCode::kConfig, "plateau annealing needs a non-empty validation set");
  for (const auto& tc : val_cases)
    for (const auto& tr : train_cases)
      if (tc.case_id == tr.case_id && !tc.case_id.empty())
        fail(ErrorCode::kConfig, "validation case " + tc.case_id + " is also a training case");

  TrainResult result{initial ? *initial : Network<float>(net_cfg), {}, 0};
  Network<float>& net = result.network;
  if (!initial) net.init(cfg.seed);
  const SegmentLayout layout = SegmentLayout::make(net.config(), cfg.segment_output);

  std::vector<ClassIndex> train_index;
  std::vector<std::array<double, 3>> train_weights;
  for (const auto& c : train_cases) {
    if (c.image.dims() != c.labels.dims())
      fail(ErrorCode::kShape, "image/label dims differ for case " + c.case_id);
    train_index.emplace_back(c.labels);
    train_weights.push_back(effective_weights(cfg.sampling_weights, train_index.back(), {}));
  }

  // Fixed validation segments, drawn once.
  std::vector<SegmentInput<float>> val_inputs;
  std::vector<std::vector<std::uint8_t>> val_targets;
  if (!val_cases.empty() && cfg.validation_segments > 0) {
    auto rng = make_rng({cfg.seed, 0x76616cULL});
    std::vector<ClassIndex> val_index;
    for (const auto& c : val_cases) val_index.emplace_back(c.labels);
    for (int i = 0; i < cfg.validation_segments; ++i) {
      const std::size_t ci = static_cast<std::size_t>(i) % val_cases.size();
      const auto w = effective_weights(cfg.sampling_weights, val_index[ci], {});
      VoxelClass cls{};
      const auto center = draw_center(val_cases[ci].labels, val_index[ci], w, rng, cls);
      auto seg = extract_segment(val_cases[ci].image, val_cases[ci].labels, layout, center, cls);
      val_inputs.push_back(to_network_input(seg, layout));
      val_targets.push_back(std::move(seg.target));
    }
  }

  const std::size_t np = net.params().size();
  const int batch = cfg.segment_batch;
  const int workers = cfg.workers;
  std::vector<float> mean_sq(np, 0.0f), grad(np);
  std::vector<std::vector<float>> seg_grads(static_cast<std::size_t>(batch), std::vector<float>(np));
  std::vector<double> seg_loss(static_cast<std::size_t>(batch));
  std::vector<Workspace<float>> ws(static_cast<std::size_t>(workers));
  const std::size_t out_voxels = static_cast<std::size_t>(layout.output[0]) * layout.output[1] *
                                 layout.output[2];
  const float scale = 1.0f / static_cast<float>(out_voxels * static_cast<std::size_t>(batch));

  double lr = cfg.initial_lr;
  double best_metric = -1.0;
  int wait = 0;
  const auto t0 = std::chrono::steady_clock::now();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Pre-drawn sampling plan keeps results independent of worker count.
    struct Draw {
      std::size_t case_index;
      std::array<int, 3> center;
      VoxelClass cls;
    };
    auto plan_rng = make_rng({cfg.seed, static_cast<std::uint64_t>(epoch), 0x706c616eULL});
    std::vector<Draw> plan;
    std::uniform_int_distribution<std::size_t> pick_case(0, train_cases.size() - 1);
    for (int i = 0; i < cfg.batches_per_epoch * batch; ++i) {
      Draw d{};
      d.case_index = pick_case(plan_rng);
      d.center = draw_center(train_cases[d.case_index].labels, train_index[d.case_index],
                             train_weights[d.case_index], plan_rng, d.cls);
      plan.push_back(d);
    }

    double epoch_loss = 0.0;
    for (int b = 0; b < cfg.batches_per_epoch; ++b) {
      parallel_for(batch, workers, [&](int k, int w) {
        const Draw& d = plan[static_cast<std::size_t>(b * batch + k)];
        const auto& tc = train_cases[d.case_index];
        auto seg = extract_segment(tc.image, tc.labels, layout, d.center, d.cls);
        auto aug_rng = make_rng({cfg.seed, static_cast<std::uint64_t>(epoch),
                                 static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(k),
                                 0x617567ULL});
        augment(seg, cfg.augmentation, aug_rng);
        const auto input = to_network_input(seg, layout);
        auto& g = seg_grads[static_cast<std::size_t>(k)];
        std::fill(g.begin(), g.end(), 0.0f);
        seg_loss[static_cast<std::size_t>(k)] =
            net.loss_and_gradient(input, seg.target, scale, g, ws[w]);
      });
      std::fill(grad.begin(), grad.end(), 0.0f);
      for (int k = 0; k < batch; ++k) {
        const auto& g = seg_grads[static_cast<std::size_t>(k)];
        for (std::size_t i = 0; i < np; ++i) grad[i] += g[i];
        epoch_loss += seg_loss[static_cast<std::size_t>(k)];
      }

      auto params = net.params();
      for (const auto& blk : net.blocks()) {
        if (blk.kind != ParamKind::kWeight) continue;
        for (std::size_t i = blk.offset; i < blk.offset + blk.size; ++i) {
          const float w = params[i];
          const float sign = w > 0.0f ? 1.0f : (w < 0.0f ? -1.0f : 0.0f);
          grad[i] += static_cast<float>(cfg.l1_weight) * sign +
                     static_cast<float>(2.0 * cfg.l2_weight) * w;
        }
      }
      const float rho = static_cast<float>(cfg.rmsprop_rho);
      const float eps = static_cast<float>(cfg.rmsprop_epsilon);
      const float step = static_cast<float>(lr);
      for (std::size_t i = 0; i < np; ++i) {
        mean_sq[i] = rho * mean_sq[i] + (1.0f - rho) * grad[i] * grad[i];
        params[i] -= step * grad[i] / (std::sqrt(mean_sq[i]) + eps);
      }
    }

    EpochLog e;
    e.epoch = epoch;
    e.train_loss = epoch_loss / static_cast<double>(out_voxels * static_cast<std::size_t>(batch) *
                                                    static_cast<std::size_t>(cfg.batches_per_epoch));
    e.learning_rate = lr;
    if (!val_inputs.empty()) {
      const auto v = validate_segments(net, val_inputs, val_targets, workers);
      e.val_loss = v.loss;
      e.val_metric = v.metric;
    }
    e.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(e);
    if (on_epoch) on_epoch(e);

    if (e.val_metric > best_metric + (cfg.lr_anneal.enabled ? cfg.lr_anneal.min_delta : 0.0)) {
      best_metric = e.val_metric;
      result.best_epoch = epoch;
      wait = 0;
    } else if (cfg.lr_anneal.enabled && ++wait >= cfg.lr_anneal.patience) {
      lr *= cfg.lr_anneal.factor;
      wait = 0;
    }
  }
  return result;
}

ProbabilityMap infer_volume(const Volume& image, const Network<float>& net, const Dims3& tile,
                            int workers) {
  const auto& rf = net.field().normal;
  for (int a = 0; a < 3; ++a)
    if (tile[a] < rf[a])
      fail(ErrorCode::kConfig, "inference tile smaller than the receptive field on axis " +
                                   std::to_string(a));
  const Dims3 f = net.factors();
  const Dims3& dims = image.dims();
  Dims3 out_tile{}, halo{}, count{};
  for (int a = 0; a < 3; ++a) {
    out_tile[a] = tile[a] - rf[a] + 1;
    halo[a] = (rf[a] - 1) / 2;
    count[a] = (dims[a] + out_tile[a] - 1) / out_tile[a];
  }

  Tensor<float> full(1, dims);
  std::copy(image.data().begin(), image.data().end(), full.data.begin());
  const Tensor<float> low = average_downsample(full, f);

  ProbabilityMap map(dims, image.spacing(), image.origin());
  const int n_tiles = count[0] * count[1] * count[2];
  std::vector<Workspace<float>> ws(static_cast<std::size_t>(std::max(1, workers)));
  parallel_for(n_tiles, workers, [&](int t, int w) {
    const std::array<int, 3> idx{t % count[0], (t / count[0]) % count[1],
                                 t / (count[0] * count[1])};
    Dims3 start{}, phase{};
    for (int a = 0; a < 3; ++a) {
      start[a] = idx[a] * out_tile[a];
      phase[a] = start[a] % f[a];
    }
    const SegmentGeometry geo = net.geometry(out_tile, phase);
    SegmentInput<float> in;
    in.phase = phase;
    in.normal = Tensor<float>(1, geo.normal_input);
    for (int z = 0; z < geo.normal_input[2]; ++z)
      for (int y = 0; y < geo.normal_input[1]; ++y)
        for (int x = 0; x < geo.normal_input[0]; ++x) {
          const int ix = start[0] - halo[0] + x, iy = start[1] - halo[1] + y,
                    iz = start[2] - halo[2] + z;
          if (image.contains(ix, iy, iz)) in.normal.at(0, x, y, z) = image(ix, iy, iz);
        }
    in.low = Tensor<float>(1, geo.low_input);
    for (int z = 0; z < geo.low_input[2]; ++z)
      for (int y = 0; y < geo.low_input[1]; ++y)
        for (int x = 0; x < geo.low_input[0]; ++x) {
          const int lx = start[0] / f[0] - halo[0] + x, ly = start[1] / f[1] - halo[1] + y,
                    lz = start[2] / f[2] - halo[2] + z;
          if (lx >= 0 && ly >= 0 && lz >= 0 && lx < low.dims[0] && ly < low.dims[1] &&
              lz < low.dims[2])
            in.low.at(0, x, y, z) = low.at(0, lx, ly, lz);
        }
    Tensor<float> probs;
    net.forward(in, probs, ws[static_cast<std::size_t>(w)]);
    for (int z = 0; z < out_tile[2] && start[2] + z < dims[2]; ++z)
      for (int y = 0; y < out_tile[1] && start[1] + y < dims[1]; ++y)
        for (int x = 0; x < out_tile[0] && start[0] + x < dims[0]; ++x)
          for (int c = 0; c < kNumClasses; ++c)
            map.channel(c)(start[0] + x, start[1] + y, start[2] + z) = probs.at(c, x, y, z);
  });
  return map;
}

}  // namespace vfd
