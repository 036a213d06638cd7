// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "vfd/network.hpp"

namespace vfd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout: "VFDCKPT\0", u32 version, u32 header length, JSON header
// (network config and parameter block table), u64 parameter count, float32
// parameters. Little-endian.
void save_checkpoint(const Network<float>& net, const std::string& path);
Network<float> load_checkpoint(const std::string& path);

}  // namespace vfd
