// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "vfd/probability_map.hpp"
#include "vfd/volume.hpp"

namespace vfd {

// NIfTI-1 single-file (.nii, or gzip-compressed .nii.gz) reader and writer.
// Spacing and origin are written to the standard header fields as float32 and
// additionally as exact doubles in a comment extension, which the reader
// prefers when present; this makes save/load round-trips exact.

Volume load_volume(const std::string& path);
void save_volume(const Volume& vol, const std::string& path);

/// Integer-valued images only; values must fit in 0..255.
LabelVolume load_label_volume(const std::string& path);
void save_label_volume(const LabelVolume& labels, const std::string& path);

/// 4D image with dim[4] == 3, class order background, normal, fracture.
ProbabilityMap load_probability_map(const std::string& path);
void save_probability_map(const ProbabilityMap& map, const std::string& path);

}  // namespace vfd
