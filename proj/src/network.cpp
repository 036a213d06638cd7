// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#include "vfd/network.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <mutex>
#include <random>

namespace vfd {

const char* variant_name(Variant v) noexcept {
  switch (v) {
    case Variant::kOneSlice: return "1slice";
    case Variant::kFiveSlices: return "5slices";
    case Variant::k3D: return "3D";
  }
  return "3D";
}

Variant parse_variant(const std::string& text) {
  if (text == "1slice") return Variant::kOneSlice;
  if (text == "5slices") return Variant::kFiveSlices;
  if (text == "3D" || text == "3d") return Variant::k3D;
  fail(ErrorCode::kConfig, "unknown network variant '" + text + "'");
}

namespace {

Dims3 variant_conv1(Variant v) {
  switch (v) {
    case Variant::kOneSlice: return {1, 3, 3};
    case Variant::kFiveSlices: return {5, 3, 3};
    case Variant::k3D: return {3, 3, 3};
  }
  return {3, 3, 3};
}

Dims3 variant_conv_rest(Variant v) {
  return v == Variant::k3D ? Dims3{3, 3, 3} : Dims3{1, 3, 3};
}

int volume_of(const Dims3& d) { return d[0] * d[1] * d[2]; }

}  // namespace

NetworkConfig NetworkConfig::with_channels(Variant v, std::vector<int> conv_channels,
                                           std::vector<int> fc_channels) {
  NetworkConfig cfg;
  cfg.variant = v;
  cfg.conv1_filter = variant_conv1(v);
  cfg.conv_rest_filter = variant_conv_rest(v);
  cfg.conv_channels = std::move(conv_channels);
  cfg.fc_channels = std::move(fc_channels);
  return cfg;
}

NetworkConfig NetworkConfig::for_variant(Variant v) {
  switch (v) {
    case Variant::kOneSlice:
      return with_channels(v, {27, 27, 37, 37, 37, 37, 47, 47}, {150, 244});
    case Variant::kFiveSlices:
      return with_channels(v, {28, 28, 38, 38, 38, 38, 49, 49}, {150, 150});
    case Variant::k3D:
      break;
  }
  return with_channels(Variant::k3D, {16, 16, 22, 22, 22, 22, 28, 28}, {150, 212});
}

void NetworkConfig::validate() const {
  if (conv_channels.empty()) fail(ErrorCode::kConfig, "network needs at least one conv layer");
  for (int c : conv_channels)
    if (c <= 0) fail(ErrorCode::kConfig, "conv channel counts must be positive");
  for (int c : fc_channels)
    if (c <= 0) fail(ErrorCode::kConfig, "fc channel counts must be positive");
  for (int a = 0; a < 3; ++a) {
    if (conv1_filter[a] <= 0 || conv_rest_filter[a] <= 0)
      fail(ErrorCode::kConfig, "filter extents must be positive");
    if (conv1_filter[a] % 2 == 0 || conv_rest_filter[a] % 2 == 0)
      fail(ErrorCode::kConfig, "filter extents must be odd");
  }
  if (subsample_factor < 1) fail(ErrorCode::kConfig, "subsample_factor must be >= 1");
  if (n_classes != 3) fail(ErrorCode::kConfig, "n_classes must be 3");
}

ReceptiveField receptive_field(const NetworkConfig& cfg) {
  ReceptiveField rf{};
  for (int a = 0; a < 3; ++a) {
    int extent = 1;
    for (int l = 0; l < cfg.n_conv_layers(); ++l) extent += cfg.filter(l)[a] - 1;
    rf.normal[a] = extent;
  }
  const Dims3 f = subsample_factors(cfg);
  for (int a = 0; a < 3; ++a) rf.subsampled_effective[a] = rf.normal[a] * f[a];
  return rf;
}

Dims3 subsample_factors(const NetworkConfig& cfg) {
  Dims3 f{};
  for (int a = 0; a < 3; ++a) {
    int extent = 1;
    for (int l = 0; l < cfg.n_conv_layers(); ++l) extent += cfg.filter(l)[a] - 1;
    f[a] = extent == 1 ? 1 : cfg.subsample_factor;
  }
  return f;
}

std::size_t count_conv_parameters(int cin, int cout, const Dims3& filter, bool bias,
                                  bool prelu) {
  std::size_t n = static_cast<std::size_t>(cin) * cout * volume_of(filter);
  if (bias) n += static_cast<std::size_t>(cout);
  if (prelu) n += static_cast<std::size_t>(cout);
  return n;
}

std::size_t count_parameters(const NetworkConfig& cfg) {
  std::size_t pathway = 0;
  int cin = 1;
  for (int l = 0; l < cfg.n_conv_layers(); ++l) {
    pathway += count_conv_parameters(cin, cfg.conv_channels[l], cfg.filter(l), true, true);
    cin = cfg.conv_channels[l];
  }
  std::size_t total = 2 * pathway;
  cin = 2 * cfg.conv_channels.back();
  for (int h : cfg.fc_channels) {
    total += count_conv_parameters(cin, h, {1, 1, 1}, true, true);
    cin = h;
  }
  total += count_conv_parameters(cin, cfg.n_classes, {1, 1, 1}, true, false);
  return total;
}

template <typename T>
Tensor<T> average_downsample(const Tensor<T>& in, const Dims3& f) {
  Dims3 od{};
  for (int a = 0; a < 3; ++a) od[a] = (in.dims[a] + f[a] - 1) / f[a];
  Tensor<T> out(in.channels, od);
  const T inv = T(1) / static_cast<T>(f[0] * f[1] * f[2]);
  for (int c = 0; c < in.channels; ++c)
    for (int z = 0; z < in.dims[2]; ++z)
      for (int y = 0; y < in.dims[1]; ++y)
        for (int x = 0; x < in.dims[0]; ++x)
          out.at(c, x / f[0], y / f[1], z / f[2]) += in.at(c, x, y, z);
  for (T& v : out.data) v *= inv;
  return out;
}

template Tensor<float> average_downsample(const Tensor<float>&, const Dims3&);
template Tensor<double> average_downsample(const Tensor<double>&, const Dims3&);

namespace {

void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void single_threaded_blas() {
  static std::once_flag once;
  std::call_once(once, [] { openblas_set_num_threads(1); });
}

// Upper bound on im2col buffer elements; convolutions run in z-slabs.
constexpr std::size_t kColBudget = std::size_t{1} << 22;

Dims3 conv_out_dims(const Dims3& in, const Dims3& k) {
  return {in[0] - k[0] + 1, in[1] - k[1] + 1, in[2] - k[2] + 1};
}

int slab_planes(std::size_t rows, const Dims3& od) {
  const std::size_t plane = rows * static_cast<std::size_t>(od[0]) * od[1];
  return static_cast<int>(std::clamp<std::size_t>(kColBudget / std::max<std::size_t>(plane, 1),
                                                  1, static_cast<std::size_t>(od[2])));
}

template <typename T>
void im2col(const Tensor<T>& in, const Dims3& k, const Dims3& od, int z0, int z1, T* col) {
  const std::size_t ns = static_cast<std::size_t>(od[0]) * od[1] * (z1 - z0);
  const std::size_t in_s = in.spatial();
  const int ix = in.dims[0], iy = in.dims[1];
  std::size_t row = 0;
  for (int ci = 0; ci < in.channels; ++ci)
    for (int dz = 0; dz < k[2]; ++dz)
      for (int dy = 0; dy < k[1]; ++dy)
        for (int dx = 0; dx < k[0]; ++dx, ++row) {
          T* dst = col + row * ns;
          const T* base = in.data.data() + ci * in_s + dx;
          for (int z = z0; z < z1; ++z)
            for (int y = 0; y < od[1]; ++y) {
              const T* src = base + (static_cast<std::size_t>(z + dz) * iy + (y + dy)) * ix;
              std::memcpy(dst, src, sizeof(T) * static_cast<std::size_t>(od[0]));
              dst += od[0];
            }
        }
}

template <typename T>
void col2im_add(const T* col, const Dims3& k, const Dims3& od, int z0, int z1, Tensor<T>& in) {
  const std::size_t ns = static_cast<std::size_t>(od[0]) * od[1] * (z1 - z0);
  const std::size_t in_s = in.spatial();
  const int ix = in.dims[0], iy = in.dims[1];
  std::size_t row = 0;
  for (int ci = 0; ci < in.channels; ++ci)
    for (int dz = 0; dz < k[2]; ++dz)
      for (int dy = 0; dy < k[1]; ++dy)
        for (int dx = 0; dx < k[0]; ++dx, ++row) {
          const T* src = col + row * ns;
          T* base = in.data.data() + ci * in_s + dx;
          for (int z = z0; z < z1; ++z)
            for (int y = 0; y < od[1]; ++y) {
              T* dst = base + (static_cast<std::size_t>(z + dz) * iy + (y + dy)) * ix;
              for (int x = 0; x < od[0]; ++x) dst[x] += src[x];
              src += od[0];
            }
        }
}

template <typename T>
void conv_forward(const Tensor<T>& in, const T* w, const T* b, int cout, const Dims3& k,
                  Tensor<T>& out, std::vector<T>& col) {
  const Dims3 od = conv_out_dims(in.dims, k);
  out = Tensor<T>(cout, od);
  const std::size_t rows = static_cast<std::size_t>(in.channels) * k[0] * k[1] * k[2];
  const int n = static_cast<int>(out.spatial());
  const int planes = slab_planes(rows, od);
  for (int z0 = 0; z0 < od[2]; z0 += planes) {
    const int z1 = std::min(od[2], z0 + planes);
    const int ns = od[0] * od[1] * (z1 - z0);
    col.resize(rows * static_cast<std::size_t>(ns));
    im2col(in, k, od, z0, z1, col.data());
    T* dst = out.data.data() + static_cast<std::size_t>(z0) * od[0] * od[1];
    gemm(false, false, cout, ns, static_cast<int>(rows), T(1), w, static_cast<int>(rows),
         col.data(), ns, T(0), dst, n);
  }
  const std::size_t s = out.spatial();
  for (int c = 0; c < cout; ++c) {
    T* p = out.data.data() + c * s;
    for (std::size_t i = 0; i < s; ++i) p[i] += b[c];
  }
}

// dw, db accumulate; din (optional) is overwritten.
template <typename T>
void conv_backward(const Tensor<T>& in, const T* w, int cout, const Dims3& k,
                   const Tensor<T>& dout, T* dw, T* db, Tensor<T>* din, std::vector<T>& col,
                   std::vector<T>& dcol) {
  const Dims3 od = dout.dims;
  const std::size_t rows = static_cast<std::size_t>(in.channels) * k[0] * k[1] * k[2];
  const int n = static_cast<int>(dout.spatial());
  if (din) *din = Tensor<T>(in.channels, in.dims);
  const int planes = slab_planes(rows, od);
  for (int z0 = 0; z0 < od[2]; z0 += planes) {
    const int z1 = std::min(od[2], z0 + planes);
    const int ns = od[0] * od[1] * (z1 - z0);
    col.resize(rows * static_cast<std::size_t>(ns));
    im2col(in, k, od, z0, z1, col.data());
    const T* g = dout.data.data() + static_cast<std::size_t>(z0) * od[0] * od[1];
    gemm(false, true, cout, static_cast<int>(rows), ns, T(1), g, n, col.data(), ns, T(1), dw,
         static_cast<int>(rows));
    if (din) {
      dcol.resize(rows * static_cast<std::size_t>(ns));
      gemm(true, false, static_cast<int>(rows), ns, cout, T(1), w, static_cast<int>(rows), g, n,
           T(0), dcol.data(), ns);
      col2im_add(dcol.data(), k, od, z0, z1, *din);
    }
  }
  const std::size_t s = dout.spatial();
  for (int c = 0; c < cout; ++c) {
    const T* p = dout.data.data() + c * s;
    T acc = 0;
    for (std::size_t i = 0; i < s; ++i) acc += p[i];
    db[c] += acc;
  }
}

template <typename T>
void prelu_forward(const Tensor<T>& pre, const T* slope, Tensor<T>& out) {
  out = pre;
  const std::size_t s = pre.spatial();
  for (int c = 0; c < pre.channels; ++c) {
    T* p = out.data.data() + c * s;
    const T a = slope[c];
    for (std::size_t i = 0; i < s; ++i)
      if (p[i] < T(0)) p[i] *= a;
  }
}

// Converts grad w.r.t. the activation into grad w.r.t. the pre-activation,
// in place, and accumulates the slope gradient.
template <typename T>
void prelu_backward(const Tensor<T>& pre, const T* slope, Tensor<T>& grad, T* dslope) {
  const std::size_t s = pre.spatial();
  for (int c = 0; c < pre.channels; ++c) {
    const T* z = pre.data.data() + c * s;
    T* g = grad.data.data() + c * s;
    const T a = slope[c];
    T acc = 0;
    for (std::size_t i = 0; i < s; ++i)
      if (z[i] < T(0)) {
        acc += g[i] * z[i];
        g[i] *= a;
      }
    dslope[c] += acc;
  }
}

}  // namespace

template <typename T>
Network<T>::Network(NetworkConfig cfg) : cfg_(std::move(cfg)) {
  single_threaded_blas();
  cfg_.validate();
  field_ = receptive_field(cfg_);
  factors_ = subsample_factors(cfg_);

  std::size_t offset = 0;
  auto add = [&](std::string name, ParamKind kind, std::vector<int> shape) {
    std::size_t size = 1;
    for (int d : shape) size *= static_cast<std::size_t>(d);
    blocks_.push_back({std::move(name), kind, offset, size, std::move(shape)});
    offset += size;
  };
  for (const char* path : {"normal", "low"}) {
    int cin = 1;
    for (int l = 0; l < cfg_.n_conv_layers(); ++l) {
      const int cout = cfg_.conv_channels[l];
      const Dims3 k = cfg_.filter(l);
      const std::string base = std::string(path) + ".conv" + std::to_string(l + 1);
      add(base + ".weight", ParamKind::kWeight, {cout, cin, k[2], k[1], k[0]});
      add(base + ".bias", ParamKind::kBias, {cout});
      add(base + ".prelu", ParamKind::kSlope, {cout});
      cin = cout;
    }
  }
  int cin = 2 * cfg_.conv_channels.back();
  for (std::size_t j = 0; j < cfg_.fc_channels.size(); ++j) {
    const int cout = cfg_.fc_channels[j];
    const std::string base = "fc" + std::to_string(j + 1);
    add(base + ".weight", ParamKind::kWeight, {cout, cin});
    add(base + ".bias", ParamKind::kBias, {cout});
    add(base + ".prelu", ParamKind::kSlope, {cout});
    cin = cout;
  }
  add("cls.weight", ParamKind::kWeight, {cfg_.n_classes, cin});
  add("cls.bias", ParamKind::kBias, {cfg_.n_classes});
  params_.assign(offset, T(0));
}

template <typename T>
Network<T>::~Network() = default;
template <typename T>
Network<T>::Network(const Network&) = default;
template <typename T>
Network<T>& Network<T>::operator=(const Network&) = default;
template <typename T>
Network<T>::Network(Network&&) noexcept = default;
template <typename T>
Network<T>& Network<T>::operator=(Network&&) noexcept = default;

template <typename T>
const ParamBlock& Network<T>::block(const std::string& name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return b;
  fail(ErrorCode::kArgument, "no parameter block named " + name);
}

template <typename T>
void Network<T>::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& b : blocks_) {
    T* p = params_.data() + b.offset;
    switch (b.kind) {
      case ParamKind::kWeight: {
        std::size_t fan_in = 1;
        for (std::size_t d = 1; d < b.shape.size(); ++d) fan_in *= static_cast<std::size_t>(b.shape[d]);
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        for (std::size_t i = 0; i < b.size; ++i) p[i] = static_cast<T>(dist(rng));
        break;
      }
      case ParamKind::kBias:
        std::fill(p, p + b.size, T(0));
        break;
      case ParamKind::kSlope:
        std::fill(p, p + b.size, T(0.25));
        break;
    }
  }
}

template <typename T>
SegmentGeometry Network<T>::geometry(const Dims3& output, const Dims3& phase) const {
  SegmentGeometry g{};
  g.output = output;
  g.phase = phase;
  g.factor = factors_;
  for (int a = 0; a < 3; ++a) {
    if (output[a] <= 0) fail(ErrorCode::kShape, "output dims must be positive");
    if (phase[a] < 0 || phase[a] >= factors_[a]) fail(ErrorCode::kShape, "phase out of range");
    g.normal_input[a] = output[a] + field_.normal[a] - 1;
    g.low_output[a] = (phase[a] + output[a] - 1) / factors_[a] + 1;
    g.low_input[a] = g.low_output[a] + field_.normal[a] - 1;
  }
  return g;
}

template <typename T>
Dims3 Network<T>::output_dims_for(const Dims3& normal_input) const {
  Dims3 out{};
  for (int a = 0; a < 3; ++a) {
    out[a] = normal_input[a] - field_.normal[a] + 1;
    if (out[a] < 1)
      fail(ErrorCode::kShape, "segment smaller than the receptive field (" +
                                  std::to_string(normal_input[a]) + " < " +
                                  std::to_string(field_.normal[a]) + ")");
  }
  return out;
}

template <typename T>
void Network<T>::check_input(const SegmentInput<T>& in, SegmentGeometry& geo) const {
  if (in.normal.channels != 1 || in.low.channels != 1)
    fail(ErrorCode::kShape, "pathway inputs must have one channel");
  geo = geometry(output_dims_for(in.normal.dims), in.phase);
  if (in.low.dims != geo.low_input)
    fail(ErrorCode::kShape, "subsampled input does not match the normal input geometry");
}

template <typename T>
void Network<T>::run_forward(const SegmentInput<T>& in, const SegmentGeometry& geo,
                             Workspace<T>& ws, bool keep) const {
  const int nconv = cfg_.n_conv_layers();
  const T* P = params_.data();
  std::size_t bi = 0;

  auto pathway = [&](const Tensor<T>& input, std::vector<Tensor<T>>& acts,
                     std::vector<Tensor<T>>& pre) {
    acts.resize(static_cast<std::size_t>(nconv) + 1);
    pre.resize(static_cast<std::size_t>(nconv));
    acts[0] = input;
    for (int l = 0; l < nconv; ++l) {
      const auto& wb = blocks_[bi++];
      const auto& bb = blocks_[bi++];
      const auto& sb = blocks_[bi++];
      conv_forward(acts[l], P + wb.offset, P + bb.offset, cfg_.conv_channels[l], cfg_.filter(l),
                   pre[l], ws.col);
      prelu_forward(pre[l], P + sb.offset, acts[l + 1]);
      if (!keep) {
        acts[l] = Tensor<T>();
        pre[l] = Tensor<T>();
      }
    }
  };
  pathway(in.normal, ws.normal_acts, ws.normal_pre);
  pathway(in.low, ws.low_acts, ws.low_pre);

  // Fuse: concat normal features with repetition-upsampled low features.
  const Tensor<T>& nf = ws.normal_acts.back();
  const Tensor<T>& lf = ws.low_acts.back();
  const int c8 = cfg_.conv_channels.back();
  const Dims3 od = geo.output;
  ws.fc_acts.resize(cfg_.fc_channels.size() + 1);
  ws.fc_pre.resize(cfg_.fc_channels.size());
  Tensor<T>& fused = ws.fc_acts[0];
  fused = Tensor<T>(2 * c8, od);
  std::copy(nf.data.begin(), nf.data.end(), fused.data.begin());
  for (int c = 0; c < c8; ++c)
    for (int z = 0; z < od[2]; ++z) {
      const int lz = (geo.phase[2] + z) / geo.factor[2];
      for (int y = 0; y < od[1]; ++y) {
        const int ly = (geo.phase[1] + y) / geo.factor[1];
        T* dst = &fused.at(c8 + c, 0, y, z);
        for (int x = 0; x < od[0]; ++x) dst[x] = lf.at(c, (geo.phase[0] + x) / geo.factor[0], ly, lz);
      }
    }

  for (std::size_t j = 0; j < cfg_.fc_channels.size(); ++j) {
    const auto& wb = blocks_[bi++];
    const auto& bb = blocks_[bi++];
    const auto& sb = blocks_[bi++];
    const int cout = cfg_.fc_channels[j];
    conv_forward(ws.fc_acts[j], P + wb.offset, P + bb.offset, cout, {1, 1, 1}, ws.fc_pre[j],
                 ws.col);
    prelu_forward(ws.fc_pre[j], P + sb.offset, ws.fc_acts[j + 1]);
  }
  const auto& wb = blocks_[bi++];
  const auto& bb = blocks_[bi++];
  conv_forward(ws.fc_acts.back(), P + wb.offset, P + bb.offset, cfg_.n_classes, {1, 1, 1},
               ws.logits, ws.col);
}

namespace {

template <typename T>
void softmax(const Tensor<T>& logits, Tensor<T>& probs) {
  probs = Tensor<T>(logits.channels, logits.dims);
  const std::size_t s = logits.spatial();
  const int k = logits.channels;
  for (std::size_t i = 0; i < s; ++i) {
    T m = logits.data[i];
    for (int c = 1; c < k; ++c) m = std::max(m, logits.data[c * s + i]);
    T sum = 0;
    for (int c = 0; c < k; ++c) {
      const T e = std::exp(logits.data[c * s + i] - m);
      probs.data[c * s + i] = e;
      sum += e;
    }
    for (int c = 0; c < k; ++c) probs.data[c * s + i] /= sum;
  }
}

}  // namespace

template <typename T>
void Network<T>::forward(const SegmentInput<T>& in, Tensor<T>& probs, Workspace<T>& ws) const {
  SegmentGeometry geo{};
  check_input(in, geo);
  run_forward(in, geo, ws, false);
  softmax(ws.logits, probs);
}

template <typename T>
double Network<T>::loss_and_gradient(const SegmentInput<T>& in,
                                     std::span<const std::uint8_t> targets, T scale,
                                     std::span<T> grad, Workspace<T>& ws,
                                     Tensor<T>* probs_out) const {
  SegmentGeometry geo{};
  check_input(in, geo);
  if (grad.size() != params_.size()) fail(ErrorCode::kShape, "gradient buffer size mismatch");
  run_forward(in, geo, ws, true);

  Tensor<T> probs;
  softmax(ws.logits, probs);
  const std::size_t s = probs.spatial();
  if (targets.size() != s) fail(ErrorCode::kShape, "target patch does not match output dims");

  // d(loss)/d(logits) = p - onehot, times scale.
  double loss = 0.0;
  Tensor<T>& g = ws.grad_a;
  g = probs;
  for (std::size_t i = 0; i < s; ++i) {
    const int t = targets[i];
    if (t >= cfg_.n_classes) fail(ErrorCode::kArgument, "target class out of range");
    loss -= std::log(std::max<double>(probs.data[t * s + i], 1e-30));
    g.data[t * s + i] -= T(1);
  }
  for (T& v : g.data) v *= scale;
  if (probs_out) *probs_out = probs;

  const T* P = params_.data();
  T* G = grad.data();
  std::size_t bi = blocks_.size();

  // Classification layer.
  {
    const auto& bb = blocks_[--bi];
    const auto& wb = blocks_[--bi];
    Tensor<T>& next = ws.grad_b;
    conv_backward(ws.fc_acts.back(), P + wb.offset, cfg_.n_classes, {1, 1, 1}, g,
                  G + wb.offset, G + bb.offset, &next, ws.col, ws.dcol);
    std::swap(ws.grad_a, ws.grad_b);
  }
  for (std::size_t j = cfg_.fc_channels.size(); j-- > 0;) {
    const auto& sb = blocks_[--bi];
    const auto& bb = blocks_[--bi];
    const auto& wb = blocks_[--bi];
    prelu_backward(ws.fc_pre[j], P + sb.offset, ws.grad_a, G + sb.offset);
    conv_backward(ws.fc_acts[j], P + wb.offset, cfg_.fc_channels[j], {1, 1, 1}, ws.grad_a,
                  G + wb.offset, G + bb.offset, &ws.grad_b, ws.col, ws.dcol);
    std::swap(ws.grad_a, ws.grad_b);
  }

  // Split fused gradient into the two pathways.
  const int c8 = cfg_.conv_channels.back();
  const Dims3 od = geo.output;
  Tensor<T> dnormal(c8, od);
  std::copy(ws.grad_a.data.begin(), ws.grad_a.data.begin() + static_cast<std::ptrdiff_t>(dnormal.data.size()),
            dnormal.data.begin());
  Tensor<T> dlow(c8, geo.low_output);
  for (int c = 0; c < c8; ++c)
    for (int z = 0; z < od[2]; ++z) {
      const int lz = (geo.phase[2] + z) / geo.factor[2];
      for (int y = 0; y < od[1]; ++y) {
        const int ly = (geo.phase[1] + y) / geo.factor[1];
        const T* src = &ws.grad_a.at(c8 + c, 0, y, z);
        for (int x = 0; x < od[0]; ++x)
          dlow.at(c, (geo.phase[0] + x) / geo.factor[0], ly, lz) += src[x];
      }
    }

  const int nconv = cfg_.n_conv_layers();
  auto pathway_backward = [&](std::size_t first_block, std::vector<Tensor<T>>& acts,
                              std::vector<Tensor<T>>& pre, Tensor<T> dact) {
    Tensor<T> dnext;
    for (int l = nconv; l-- > 0;) {
      const auto& wb = blocks_[first_block + 3 * static_cast<std::size_t>(l)];
      const auto& bb = blocks_[first_block + 3 * static_cast<std::size_t>(l) + 1];
      const auto& sb = blocks_[first_block + 3 * static_cast<std::size_t>(l) + 2];
      prelu_backward(pre[l], P + sb.offset, dact, G + sb.offset);
      conv_backward(acts[l], P + wb.offset, cfg_.conv_channels[l], cfg_.filter(l), dact,
                    G + wb.offset, G + bb.offset, l > 0 ? &dnext : nullptr, ws.col, ws.dcol);
      if (l > 0) std::swap(dact, dnext);
    }
  };
  pathway_backward(0, ws.normal_acts, ws.normal_pre, std::move(dnormal));
  pathway_backward(3 * static_cast<std::size_t>(nconv), ws.low_acts, ws.low_pre, std::move(dlow));
  return loss;
}

template class Network<float>;
template class Network<double>;

}  // namespace vfd
