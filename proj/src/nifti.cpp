// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#include "vfd/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <vector>

namespace vfd {
namespace {

struct Nifti1Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
static_assert(sizeof(Nifti1Header) == 348);

constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtInt32 = 8;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;
constexpr std::int16_t kDtInt8 = 256;
constexpr std::int16_t kDtUint16 = 512;
constexpr std::int32_t kEcodeComment = 6;
constexpr char kGeometryTag[] = "vfd-geometry";

struct GzCloser {
  void operator()(gzFile_s* f) const { gzclose(f); }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct RawImage {
  std::array<int, 4> dims{1, 1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};
  std::int16_t datatype = kDtFloat32;
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
  std::vector<unsigned char> bytes;

  std::size_t voxels() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2] * dims[3];
  }
};

int bytes_per_voxel(std::int16_t datatype) {
  switch (datatype) {
    case kDtUint8:
    case kDtInt8: return 1;
    case kDtInt16:
    case kDtUint16: return 2;
    case kDtInt32:
    case kDtFloat32: return 4;
    case kDtFloat64: return 8;
    default: return 0;
  }
}

void read_exact(gzFile file, void* dst, std::size_t n, const std::string& path) {
  auto* out = static_cast<unsigned char*>(dst);
  while (n > 0) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
    const int got = gzread(file, out, chunk);
    if (got <= 0) fail(ErrorCode::kIo, "truncated or unreadable file: " + path);
    out += got;
    n -= static_cast<std::size_t>(got);
  }
}

std::string encode_geometry(const Vec3& spacing, const Vec3& origin) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s spacing=%a,%a,%a origin=%a,%a,%a", kGeometryTag,
                spacing[0], spacing[1], spacing[2], origin[0], origin[1], origin[2]);
  return buf;
}

bool decode_geometry(const std::string& text, Vec3& spacing, Vec3& origin) {
  if (text.rfind(kGeometryTag, 0) != 0) return false;
  const auto sp = text.find("spacing=");
  const auto og = text.find("origin=");
  if (sp == std::string::npos || og == std::string::npos) return false;
  auto parse3 = [](const char* p, Vec3& v) {
    for (int a = 0; a < 3; ++a) {
      char* end = nullptr;
      v[a] = std::strtod(p, &end);
      if (end == p) return false;
      p = (*end == ',') ? end + 1 : end;
    }
    return true;
  };
  Vec3 s{}, o{};
  if (!parse3(text.c_str() + sp + 8, s) || !parse3(text.c_str() + og + 7, o)) return false;
  spacing = s;
  origin = o;
  return true;
}

RawImage read_nifti(const std::string& path) {
  GzHandle file(gzopen(path.c_str(), "rb"));
  if (!file) fail(ErrorCode::kIo, "cannot open " + path);

  Nifti1Header hdr{};
  read_exact(file.get(), &hdr, sizeof hdr, path);
  if (hdr.sizeof_hdr != 348)
    fail(ErrorCode::kFormat, "not a little-endian NIfTI-1 file: " + path);
  if (std::memcmp(hdr.magic, "n+1", 4) != 0)
    fail(ErrorCode::kFormat, "unsupported NIfTI magic (need single-file n+1): " + path);

  RawImage img;
  const int ndim = hdr.dim[0];
  if (ndim < 1 || ndim > 4) fail(ErrorCode::kFormat, "unsupported dimensionality in " + path);
  for (int a = 0; a < 4; ++a) {
    img.dims[a] = (a < ndim) ? hdr.dim[a + 1] : 1;
    if (img.dims[a] <= 0) fail(ErrorCode::kFormat, "non-positive dim in " + path);
  }
  img.datatype = hdr.datatype;
  if (bytes_per_voxel(img.datatype) == 0)
    fail(ErrorCode::kFormat, "unsupported NIfTI datatype " + std::to_string(hdr.datatype));
  img.scl_slope = hdr.scl_slope;
  img.scl_inter = hdr.scl_inter;

  bool have_spacing = true;
  for (int a = 0; a < 3; ++a) {
    img.spacing[a] = hdr.pixdim[a + 1];
    if (!(img.spacing[a] > 0.0) || !std::isfinite(img.spacing[a])) have_spacing = false;
  }
  if (hdr.sform_code > 0) {
    img.origin = {hdr.srow_x[3], hdr.srow_y[3], hdr.srow_z[3]};
  } else if (hdr.qform_code > 0) {
    img.origin = {hdr.qoffset_x, hdr.qoffset_y, hdr.qoffset_z};
  }

  const long vox_offset = static_cast<long>(hdr.vox_offset);
  long pos = 348;
  if (vox_offset > pos) {
    unsigned char extender[4];
    read_exact(file.get(), extender, 4, path);
    pos += 4;
    while (extender[0] != 0 && pos + 8 <= vox_offset) {
      std::int32_t head[2];
      read_exact(file.get(), head, sizeof head, path);
      pos += 8;
      const std::int32_t esize = head[0];
      if (esize < 8 || pos + esize - 8 > vox_offset)
        fail(ErrorCode::kFormat, "corrupt NIfTI extension in " + path);
      std::string content(static_cast<std::size_t>(esize - 8), '\0');
      read_exact(file.get(), content.data(), content.size(), path);
      pos += esize - 8;
      if (head[1] == kEcodeComment) {
        content.resize(std::strlen(content.c_str()));
        Vec3 s{}, o{};
        if (decode_geometry(content, s, o)) {
          img.spacing = s;
          img.origin = o;
          have_spacing = true;
        }
      }
    }
    if (pos < vox_offset) {
      std::vector<unsigned char> skip(static_cast<std::size_t>(vox_offset - pos));
      read_exact(file.get(), skip.data(), skip.size(), path);
    }
  }
  if (!have_spacing) fail(ErrorCode::kFormat, "missing or invalid spacing metadata in " + path);

  img.bytes.resize(img.voxels() * static_cast<std::size_t>(bytes_per_voxel(img.datatype)));
  read_exact(file.get(), img.bytes.data(), img.bytes.size(), path);
  return img;
}

void write_nifti(const RawImage& img, const std::string& path) {
  Nifti1Header hdr{};
  hdr.sizeof_hdr = 348;
  hdr.regular = 'r';
  const int ndim = img.dims[3] > 1 ? 4 : 3;
  hdr.dim[0] = static_cast<std::int16_t>(ndim);
  for (int a = 0; a < 4; ++a) {
    if (img.dims[a] > 32767) fail(ErrorCode::kArgument, "dimension too large for NIfTI-1");
    hdr.dim[a + 1] = static_cast<std::int16_t>(img.dims[a]);
  }
  for (int a = 5; a < 8; ++a) hdr.dim[a] = 1;
  hdr.datatype = img.datatype;
  hdr.bitpix = static_cast<std::int16_t>(8 * bytes_per_voxel(img.datatype));
  hdr.pixdim[0] = 1.0f;
  for (int a = 0; a < 3; ++a) hdr.pixdim[a + 1] = static_cast<float>(img.spacing[a]);
  for (int a = 4; a < 8; ++a) hdr.pixdim[a] = 1.0f;
  hdr.xyzt_units = 2;  // millimetres
  hdr.scl_slope = img.scl_slope;
  hdr.scl_inter = img.scl_inter;
  hdr.qform_code = 1;
  hdr.sform_code = 1;
  hdr.qoffset_x = static_cast<float>(img.origin[0]);
  hdr.qoffset_y = static_cast<float>(img.origin[1]);
  hdr.qoffset_z = static_cast<float>(img.origin[2]);
  hdr.srow_x[0] = static_cast<float>(img.spacing[0]);
  hdr.srow_y[1] = static_cast<float>(img.spacing[1]);
  hdr.srow_z[2] = static_cast<float>(img.spacing[2]);
  hdr.srow_x[3] = hdr.qoffset_x;
  hdr.srow_y[3] = hdr.qoffset_y;
  hdr.srow_z[3] = hdr.qoffset_z;
  std::memcpy(hdr.magic, "n+1", 4);

  std::string geometry = encode_geometry(img.spacing, img.origin);
  const std::size_t esize = ((geometry.size() + 1 + 8 + 15) / 16) * 16;
  geometry.resize(esize - 8, '\0');
  hdr.vox_offset = static_cast<float>(352 + esize);

  const bool compress = ends_with(path, ".gz");
  GzHandle file(gzopen(path.c_str(), compress ? "wb6" : "wbT"));
  if (!file) fail(ErrorCode::kIo, "cannot write " + path);
  auto write_all = [&](const void* src, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(src);
    while (n > 0) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
      if (gzwrite(file.get(), p, chunk) != static_cast<int>(chunk))
        fail(ErrorCode::kIo, "write failed: " + path);
      p += chunk;
      n -= chunk;
    }
  };
  write_all(&hdr, sizeof hdr);
  const unsigned char extender[4] = {1, 0, 0, 0};
  write_all(extender, 4);
  const std::int32_t ext_head[2] = {static_cast<std::int32_t>(esize), kEcodeComment};
  write_all(ext_head, sizeof ext_head);
  write_all(geometry.data(), geometry.size());
  write_all(img.bytes.data(), img.bytes.size());
  if (gzclose(file.release()) != Z_OK) fail(ErrorCode::kIo, "write failed: " + path);
}

template <typename Out>
std::vector<Out> decode_values(const RawImage& img) {
  const std::size_t n = img.voxels();
  std::vector<Out> out(n);
  const bool scaled = img.scl_slope != 0.0f && !(img.scl_slope == 1.0f && img.scl_inter == 0.0f);
  auto convert = [&](auto tag) {
    using In = decltype(tag);
    for (std::size_t i = 0; i < n; ++i) {
      In v;
      std::memcpy(&v, img.bytes.data() + i * sizeof(In), sizeof(In));
      double d = static_cast<double>(v);
      if (scaled) d = d * img.scl_slope + img.scl_inter;
      out[i] = static_cast<Out>(d);
    }
  };
  switch (img.datatype) {
    case kDtUint8: convert(std::uint8_t{}); break;
    case kDtInt8: convert(std::int8_t{}); break;
    case kDtInt16: convert(std::int16_t{}); break;
    case kDtUint16: convert(std::uint16_t{}); break;
    case kDtInt32: convert(std::int32_t{}); break;
    case kDtFloat32: convert(float{}); break;
    case kDtFloat64: convert(double{}); break;
    default: fail(ErrorCode::kFormat, "unsupported datatype");
  }
  return out;
}

template <typename T>
RawImage raw_from(const Grid<T>& g, std::int16_t datatype, int channels = 1) {
  RawImage img;
  img.dims = {g.dims()[0], g.dims()[1], g.dims()[2], channels};
  img.spacing = g.spacing();
  img.origin = g.origin();
  img.datatype = datatype;
  return img;
}

}  // namespace

Volume load_volume(const std::string& path) {
  const RawImage img = read_nifti(path);
  if (img.dims[3] != 1) fail(ErrorCode::kFormat, "expected a 3D volume in " + path);
  Volume vol({img.dims[0], img.dims[1], img.dims[2]}, img.spacing, img.origin);
  const auto values = decode_values<float>(img);
  std::copy(values.begin(), values.end(), vol.data().begin());
  return vol;
}

void save_volume(const Volume& vol, const std::string& path) {
  RawImage img = raw_from(vol, kDtFloat32);
  img.bytes.resize(vol.size() * sizeof(float));
  std::memcpy(img.bytes.data(), vol.data().data(), img.bytes.size());
  write_nifti(img, path);
}

LabelVolume load_label_volume(const std::string& path) {
  const RawImage img = read_nifti(path);
  if (img.dims[3] != 1) fail(ErrorCode::kFormat, "expected a 3D label volume in " + path);
  LabelVolume labels({img.dims[0], img.dims[1], img.dims[2]}, img.spacing, img.origin);
  const auto values = decode_values<double>(img);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (v < 0.0 || v > 255.0 || v != std::floor(v))
      fail(ErrorCode::kFormat, "label volume holds non-label values: " + path);
    labels[i] = static_cast<std::uint8_t>(v);
  }
  return labels;
}

void save_label_volume(const LabelVolume& labels, const std::string& path) {
  RawImage img = raw_from(labels, kDtUint8);
  img.bytes.assign(labels.data().begin(), labels.data().end());
  write_nifti(img, path);
}

ProbabilityMap load_probability_map(const std::string& path) {
  const RawImage img = read_nifti(path);
  if (img.dims[3] != kNumClasses)
    fail(ErrorCode::kFormat, "probability map must have 3 channels: " + path);
  ProbabilityMap map({img.dims[0], img.dims[1], img.dims[2]}, img.spacing, img.origin);
  const auto values = decode_values<float>(img);
  const std::size_t n = map.size();
  for (int c = 0; c < kNumClasses; ++c)
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(c * n),
              values.begin() + static_cast<std::ptrdiff_t>((c + 1) * n),
              map.channel(c).data().begin());
  return map;
}

void save_probability_map(const ProbabilityMap& map, const std::string& path) {
  RawImage img = raw_from(map.channel(0), kDtFloat32, kNumClasses);
  const std::size_t n = map.size();
  img.bytes.resize(n * kNumClasses * sizeof(float));
  for (int c = 0; c < kNumClasses; ++c)
    std::memcpy(img.bytes.data() + c * n * sizeof(float), map.channel(c).data().data(),
                n * sizeof(float));
  write_nifti(img, path);
}

}  // namespace vfd
