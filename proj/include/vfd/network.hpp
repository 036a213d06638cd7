// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vfd/volume.hpp"

namespace vfd {

enum class Variant { kOneSlice, kFiveSlices, k3D };

const char* variant_name(Variant v) noexcept;
Variant parse_variant(const std::string& text);

/// Dual-pathway voxel classifier: two stacks of valid 3D convolutions (one on
/// the native grid, one on a grid average-downsampled by `subsample_factor`),
/// the subsampled features upsampled by repetition and concatenated, then
/// fully connected (1x1x1) hidden layers and a softmax classification layer.
/// Filters are given as (x, y, z) extents; x is the sagittal-plane normal.
struct NetworkConfig {
  Variant variant = Variant::k3D;
  Dims3 conv1_filter{3, 3, 3};
  Dims3 conv_rest_filter{3, 3, 3};
  std::vector<int> conv_channels;  // per pathway, one entry per conv layer
  std::vector<int> fc_channels;    // hidden fully connected layers
  int subsample_factor = 3;
  int n_classes = 3;

  int n_conv_layers() const noexcept { return static_cast<int>(conv_channels.size()); }
  /// Conv layers + hidden FC layers + classification layer.
  int n_layers_total() const noexcept {
    return n_conv_layers() + static_cast<int>(fc_channels.size()) + 1;
  }
  Dims3 filter(int layer) const noexcept { return layer == 0 ? conv1_filter : conv_rest_filter; }

  /// Throws kConfig.
  void validate() const;

  bool operator==(const NetworkConfig&) const = default;

  /// Default channel plan for a variant, calibrated to a common ~230K
  /// parameter budget.
  static NetworkConfig for_variant(Variant v);
  /// Filters for a variant with an explicit channel plan.
  static NetworkConfig with_channels(Variant v, std::vector<int> conv_channels,
                                     std::vector<int> fc_channels);
};

struct ReceptiveField {
  Dims3 normal;
  Dims3 subsampled_effective;
};

/// Per axis 1 + sum(filter - 1). The subsampled pathway's effective field is
/// the normal field times the per-axis subsample factor.
ReceptiveField receptive_field(const NetworkConfig& cfg);

/// Axes whose field extent is 1 are not subsampled, so single-slice variants
/// never mix neighbouring slices.
Dims3 subsample_factors(const NetworkConfig& cfg);

std::size_t count_conv_parameters(int cin, int cout, const Dims3& filter, bool bias,
                                  bool prelu);
/// Weights, biases and PReLU slopes of both pathways and the fused layers.
std::size_t count_parameters(const NetworkConfig& cfg);

/// Channel-major dense tensor, layout [c][z][y][x].
template <typename T>
struct Tensor {
  int channels = 0;
  Dims3 dims{0, 0, 0};
  std::vector<T> data;

  Tensor() = default;
  Tensor(int c, Dims3 d, T fill = T{})
      : channels(c), dims(d),
        data(static_cast<std::size_t>(c) * d[0] * d[1] * d[2], fill) {}

  std::size_t spatial() const noexcept {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t offset(int c, int x, int y, int z) const noexcept {
    return static_cast<std::size_t>(c) * spatial() +
           static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) * z);
  }
  T& at(int c, int x, int y, int z) noexcept { return data[offset(c, x, y, z)]; }
  const T& at(int c, int x, int y, int z) const noexcept { return data[offset(c, x, y, z)]; }
};

/// Shapes of one network evaluation. Output voxel o (per axis) reads the
/// subsampled output at index floor((phase + o) / factor).
struct SegmentGeometry {
  Dims3 output;
  Dims3 normal_input;
  Dims3 phase;
  Dims3 factor;
  Dims3 low_output;
  Dims3 low_input;
};

template <typename T>
struct SegmentInput {
  Tensor<T> normal;  // one channel, geometry.normal_input
  Tensor<T> low;     // one channel, geometry.low_input
  Dims3 phase{0, 0, 0};
};

enum class ParamKind { kWeight, kBias, kSlope };

struct ParamBlock {
  std::string name;
  ParamKind kind;
  std::size_t offset;
  std::size_t size;
  std::vector<int> shape;
};

template <typename T>
struct Workspace;

template <typename T>
class Network {
 public:
  explicit Network(NetworkConfig cfg);
  ~Network();
  Network(const Network&);
  Network& operator=(const Network&);
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;

  const NetworkConfig& config() const noexcept { return cfg_; }
  const ReceptiveField& field() const noexcept { return field_; }
  const Dims3& factors() const noexcept { return factors_; }

  std::span<T> params() noexcept { return params_; }
  std::span<const T> params() const noexcept { return params_; }
  const std::vector<ParamBlock>& blocks() const noexcept { return blocks_; }
  const ParamBlock& block(const std::string& name) const;

  /// He-normal weights, zero biases, PReLU slopes 0.25.
  void init(std::uint64_t seed);

  SegmentGeometry geometry(const Dims3& output, const Dims3& phase = {0, 0, 0}) const;
  /// Output dims for a given normal-pathway input; throws kShape when the
  /// input is smaller than the receptive field.
  Dims3 output_dims_for(const Dims3& normal_input) const;

  /// Class probabilities (n_classes x output). Thread-safe given distinct
  /// workspaces.
  void forward(const SegmentInput<T>& in, Tensor<T>& probs, Workspace<T>& ws) const;

  /// Sum over output voxels of the cross-entropy against `targets` (class
  /// indices in output layout). Accumulates `scale` times its gradient into
  /// `grad` (same layout as params()).
  double loss_and_gradient(const SegmentInput<T>& in, std::span<const std::uint8_t> targets,
                           T scale, std::span<T> grad, Workspace<T>& ws,
                           Tensor<T>* probs = nullptr) const;

 private:
  void check_input(const SegmentInput<T>& in, SegmentGeometry& geo) const;
  void run_forward(const SegmentInput<T>& in, const SegmentGeometry& geo, Workspace<T>& ws,
                   bool keep) const;

  NetworkConfig cfg_;
  ReceptiveField field_;
  Dims3 factors_;
  std::vector<T> params_;
  std::vector<ParamBlock> blocks_;
};

template <typename T>
struct Workspace {
  // Per-layer inputs and pre-activations for both pathways.
  std::vector<Tensor<T>> normal_acts, normal_pre, low_acts, low_pre;
  std::vector<Tensor<T>> fc_acts, fc_pre;
  Tensor<T> logits;
  std::vector<T> col, dcol;
  Tensor<T> grad_a, grad_b;
};

extern template class Network<float>;
extern template class Network<double>;

/// Average-downsample (zero padded, ceil extent) by per-axis factors.
template <typename T>
Tensor<T> average_downsample(const Tensor<T>& in, const Dims3& factors);

}  // namespace vfd
