// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#include "vfd/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "vfd/config.hpp"
#include "vfd/error.hpp"

namespace vfd {

namespace {

constexpr char kMagic[8] = {'V', 'F', 'D', 'C', 'K', 'P', 'T', '\0'};

const char* kind_name(ParamKind k) {
  switch (k) {
    case ParamKind::kWeight: return "weight";
    case ParamKind::kBias: return "bias";
    case ParamKind::kSlope: return "slope";
  }
  return "?";
}

template <typename T>
void put(std::ofstream& out, T v) {
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T take(std::ifstream& in, const std::string& path) {
  unsigned char b[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(T)))
    fail(ErrorCode::kIo, "truncated checkpoint " + path);
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const Network<float>& net, const std::string& path) {
  nlohmann::ordered_json header;
  header["network"] = nlohmann::ordered_json::parse(network_config_to_json(net.config()));
  auto& blocks = header["blocks"] = nlohmann::ordered_json::array();
  for (const auto& b : net.blocks())
    blocks.push_back({{"name", b.name}, {"kind", kind_name(b.kind)}, {"offset", b.offset},
                      {"size", b.size}, {"shape", b.shape}});
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write checkpoint " + path);
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto params = net.params();
  put<std::uint64_t>(out, params.size());
  for (float f : params) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    put<std::uint32_t>(out, bits);
  }
  if (!out) fail(ErrorCode::kIo, "failed writing checkpoint " + path);
}

Network<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, sizeof magic)) fail(ErrorCode::kIo, "truncated checkpoint " + path);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0)
    fail(ErrorCode::kFormat, path + " is not a checkpoint file");
  const auto version = take<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    fail(ErrorCode::kFormat, "checkpoint version " + std::to_string(version) +
                                 " is not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  const auto header_len = take<std::uint32_t>(in, path);
  std::string text(header_len, '\0');
  if (!in.read(text.data(), header_len)) fail(ErrorCode::kIo, "truncated checkpoint " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::kFormat, "corrupt checkpoint header in " + path);
  }
  if (!header.contains("network")) fail(ErrorCode::kFormat, "checkpoint lacks network config");
  NetworkConfig cfg;
  try {
    cfg = network_config_from_json(header["network"].dump());
  } catch (const Error& e) {
    fail(ErrorCode::kFormat, std::string("checkpoint network config: ") + e.what());
  }
  Network<float> net(cfg);
  const auto count = take<std::uint64_t>(in, path);
  if (count != net.params().size())
    fail(ErrorCode::kFormat, "checkpoint parameter count does not match its network config");
  // The block table is informational, but must agree with the layout.
  try {
    const auto& blocks = header.at("blocks");
    if (blocks.size() != net.blocks().size())
      fail(ErrorCode::kFormat, "checkpoint block table does not match its network config");
    for (std::size_t i = 0; i < blocks.size(); ++i)
      if (blocks[i].at("name").get<std::string>() != net.blocks()[i].name ||
          blocks[i].at("offset").get<std::size_t>() != net.blocks()[i].offset)
        fail(ErrorCode::kFormat, "checkpoint block table does not match its network config");
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::kFormat, "corrupt checkpoint block table in " + path);
  }
  auto params = net.params();
  for (auto& p : params) {
    const auto bits = take<std::uint32_t>(in, path);
    std::memcpy(&p, &bits, sizeof bits);
  }
  return net;
}

}  // namespace vfd
