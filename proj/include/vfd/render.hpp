// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vfd/evaluator.hpp"

namespace vfd {

struct SagittalSlice;

/// 8-bit RGB, row-major, top row first.
void write_png_rgb(const std::string& path, int width, int height,
                   const std::vector<std::uint8_t>& rgb);

/// ROC plot: diagonal, optional scatter of raw classifier points (grey), the
/// curve (blue) and an optional mean bootstrap curve (orange).
void render_roc_png(const std::string& path, const RocCurve& curve,
                    const std::vector<RocPoint>& scatter = {},
                    const BootstrapResult* bootstrap = nullptr, int size = 400);

/// Greyscale image with fracture probability in red and normal in green; the
/// longitudinal axis points up.
void render_overlay_png(const std::string& path, const SagittalSlice& slice, int scale = 4);

}  // namespace vfd
