// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#include "vfd/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <png.h>

#include "vfd/error.hpp"
#include "vfd/experiment.hpp"

namespace vfd {

void write_png_rgb(const std::string& path, int width, int height,
                   const std::vector<std::uint8_t>& rgb) {
  if (width < 1 || height < 1 ||
      rgb.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3)
    fail(ErrorCode::kArgument, "image buffer does not match its size");
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) fail(ErrorCode::kIo, "cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    fail(ErrorCode::kIo, "PNG encoding failed for " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, rgb.data() + static_cast<std::size_t>(y) * width * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) fail(ErrorCode::kIo, "failed writing " + path);
}

namespace {

struct Canvas {
  int w, h;
  std::vector<std::uint8_t> rgb;

  Canvas(int w_, int h_) : w(w_), h(h_), rgb(static_cast<std::size_t>(w_) * h_ * 3, 255) {}

  void set(int x, int y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    auto* p = &rgb[(static_cast<std::size_t>(y) * w + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }

  void line(double x0, double y0, double x1, double y1, std::array<std::uint8_t, 3> c,
            int thick = 1) {
    const int steps = static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
      const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
      for (int dy = -(thick / 2); dy <= thick / 2; ++dy)
        for (int dx = -(thick / 2); dx <= thick / 2; ++dx) set(x + dx, y + dy, c);
    }
  }
};

}  // namespace

void render_roc_png(const std::string& path, const RocCurve& curve,
                    const std::vector<RocPoint>& scatter, const BootstrapResult* bootstrap,
                    int size) {
  const int margin = size / 10;
  Canvas cv(size, size);
  const double span = size - 2 * margin;
  auto px = [&](double fpr) { return margin + fpr * span; };
  auto py = [&](double tpr) { return size - margin - tpr * span; };

  for (int i = 0; i <= 10; ++i) {  // light grid
    const double t = i / 10.0;
    cv.line(px(t), py(0), px(t), py(1), {230, 230, 230});
    cv.line(px(0), py(t), px(1), py(t), {230, 230, 230});
  }
  cv.line(px(0), py(0), px(1), py(0), {0, 0, 0});
  cv.line(px(0), py(0), px(0), py(1), {0, 0, 0});
  cv.line(px(0), py(0), px(1), py(1), {160, 160, 160});

  for (const auto& p : scatter)
    for (int d = -2; d <= 2; ++d) {
      cv.set(static_cast<int>(px(p.fpr)) + d, static_cast<int>(py(p.tpr)), {120, 120, 120});
      cv.set(static_cast<int>(px(p.fpr)), static_cast<int>(py(p.tpr)) + d, {120, 120, 120});
    }
  if (bootstrap)
    for (std::size_t i = 1; i < bootstrap->fpr_grid.size(); ++i)
      cv.line(px(bootstrap->fpr_grid[i - 1]), py(bootstrap->mean_tpr[i - 1]),
              px(bootstrap->fpr_grid[i]), py(bootstrap->mean_tpr[i]), {240, 140, 20}, 3);
  for (std::size_t i = 1; i < curve.points.size(); ++i)
    cv.line(px(curve.points[i - 1].fpr), py(curve.points[i - 1].tpr), px(curve.points[i].fpr),
            py(curve.points[i].tpr), {30, 80, 200}, 3);
  write_png_rgb(path, cv.w, cv.h, cv.rgb);
}

void render_overlay_png(const std::string& path, const SagittalSlice& s, int scale) {
  if (s.width < 1 || s.height < 1) fail(ErrorCode::kArgument, "empty slice");
  const std::size_t n = static_cast<std::size_t>(s.width) * s.height;
  if (s.image.size() != n || s.normal.size() != n || s.fracture.size() != n)
    fail(ErrorCode::kArgument, "slice channels have inconsistent sizes");
  const auto [lo, hi] = std::minmax_element(s.image.begin(), s.image.end());
  const double range = *hi > *lo ? *hi - *lo : 1.0;
  Canvas cv(s.width * scale, s.height * scale);
  for (int z = 0; z < s.height; ++z)
    for (int y = 0; y < s.width; ++y) {
      const std::size_t i = static_cast<std::size_t>(z) * s.width + y;
      const double g = (s.image[i] - *lo) / range;
      const double f = std::clamp<double>(s.fracture[i], 0.0, 1.0);
      const double nm = std::clamp<double>(s.normal[i], 0.0, 1.0);
      const double a = 0.6;
      const double r = g * (1 - a * (f + nm)) + a * f;
      const double gr = g * (1 - a * (f + nm)) + a * nm;
      const double b = g * (1 - a * (f + nm));
      const std::array<std::uint8_t, 3> c{
          static_cast<std::uint8_t>(std::lround(255 * std::clamp(r, 0.0, 1.0))),
          static_cast<std::uint8_t>(std::lround(255 * std::clamp(gr, 0.0, 1.0))),
          static_cast<std::uint8_t>(std::lround(255 * std::clamp(b, 0.0, 1.0)))};
      for (int dy = 0; dy < scale; ++dy)
        for (int dx = 0; dx < scale; ++dx)
          cv.set(y * scale + dx, (s.height - 1 - z) * scale + dy, c);
    }
  write_png_rgb(path, cv.w, cv.h, cv.rgb);
}

}  // namespace vfd
