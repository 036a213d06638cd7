// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

// Exercises the shared library through its C interface only.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "test_util.hpp"
#include "vfd/vfd.h"

namespace {

struct ConfigHandle {
  vfd_config* p = nullptr;
  ~ConfigHandle() { vfd_config_free(p); }
};

std::string take(char* s) {
  std::string out = s ? s : "";
  vfd_string_free(s);
  return out;
}

TEST(CApi, VersionAndStatusNames) {
  EXPECT_STREQ(vfd_version(), "1.0.0");
  EXPECT_STREQ(vfd_status_name(VFD_OK), "ok");
  EXPECT_STRNE(vfd_status_name(VFD_ERR_CONFIG), "unknown");
  EXPECT_STREQ(vfd_status_name(static_cast<vfd_status>(99)), "unknown");
}

TEST(CApi, ConfigErrorsSetLastError) {
  vfd_config* cfg = nullptr;
  EXPECT_EQ(vfd_config_parse(R"({"training": {"epochs": 0}})", &cfg), VFD_ERR_CONFIG);
  EXPECT_EQ(cfg, nullptr);
  EXPECT_NE(std::string(vfd_last_error()).find("epochs"), std::string::npos);
  EXPECT_EQ(vfd_config_parse(R"({"bogus": 1})", &cfg), VFD_ERR_CONFIG);
  EXPECT_EQ(vfd_config_load("/nonexistent.json", &cfg), VFD_ERR_IO);
  EXPECT_EQ(vfd_config_parse(nullptr, &cfg), VFD_ERR_ARGUMENT);
  ConfigHandle ok;
  ASSERT_EQ(vfd_config_default(&ok.p), VFD_OK);
  EXPECT_STREQ(vfd_last_error(), "");
}

TEST(CApi, ArchitectureArithmetic) {
  ConfigHandle c;
  ASSERT_EQ(vfd_config_default(&c.p), VFD_OK);
  int normal[3], eff[3];
  ASSERT_EQ(vfd_receptive_field(c.p, normal, eff), VFD_OK);
  EXPECT_EQ(normal[0], 17);
  EXPECT_EQ(eff[2], 51);
  ASSERT_EQ(vfd_config_set(c.p, "network.variant=1slice"), VFD_OK);
  ASSERT_EQ(vfd_receptive_field(c.p, normal, eff), VFD_OK);
  EXPECT_EQ(normal[0], 1);
  EXPECT_EQ(eff[0], 1);
  EXPECT_EQ(normal[1], 17);
  uint64_t n = 0;
  ASSERT_EQ(vfd_parameter_count(c.p, &n), VFD_OK);
  EXPECT_NEAR(static_cast<double>(n), 230000.0, 23000.0);
  EXPECT_EQ(vfd_config_set(c.p, "network.nope=1"), VFD_ERR_CONFIG);
  char* json = nullptr;
  ASSERT_EQ(vfd_config_to_json(c.p, &json), VFD_OK);
  EXPECT_EQ(nlohmann::json::parse(take(json))["network"]["variant"], "1slice");
}

TEST(CApi, VolumeRoundTripAndPreprocess) {
  vfd::testing::TempDir dir;
  const int dims[3] = {6, 5, 4};
  const double spacing[3] = {0.92, 0.92, 1.5};
  const double origin[3] = {1, 2, 3};
  std::vector<float> data(120);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(i % 7);
  vfd_volume* v = nullptr;
  ASSERT_EQ(vfd_volume_create(dims, spacing, origin, data.data(), &v), VFD_OK);
  const std::string path = dir.file("v.nii.gz");
  ASSERT_EQ(vfd_volume_save(v, path.c_str()), VFD_OK);
  vfd_volume* back = nullptr;
  ASSERT_EQ(vfd_volume_load(path.c_str(), &back), VFD_OK);
  int d[3];
  double s[3], o[3];
  ASSERT_EQ(vfd_volume_info(back, d, s, o), VFD_OK);
  EXPECT_EQ(d[2], 4);
  EXPECT_EQ(s[0], 0.92);
  EXPECT_EQ(o[2], 3.0);
  EXPECT_EQ(0, std::memcmp(vfd_volume_data(back), data.data(), data.size() * sizeof(float)));

  ConfigHandle c;
  ASSERT_EQ(vfd_config_default(&c.p), VFD_OK);
  vfd_volume* pre = nullptr;
  ASSERT_EQ(vfd_volume_preprocess(c.p, back, &pre), VFD_OK);
  ASSERT_EQ(vfd_volume_info(pre, d, s, nullptr), VFD_OK);
  EXPECT_EQ(d[0], 6);  // round(6 * 0.92)
  EXPECT_EQ(d[2], 6);  // round(4 * 1.5)
  EXPECT_EQ(s[1], 1.0);
  vfd_volume_free(pre);
  vfd_volume_free(back);
  vfd_volume_free(v);

  const int bad[3] = {0, 1, 1};
  EXPECT_EQ(vfd_volume_create(bad, spacing, nullptr, nullptr, &v), VFD_ERR_SHAPE);
  EXPECT_EQ(vfd_volume_load(dir.file("missing.nii").c_str(), &v), VFD_ERR_IO);
}

TEST(CApi, InferAndAggregate) {
  vfd::testing::TempDir dir;
  ConfigHandle c;
  ASSERT_EQ(vfd_config_parse(R"({"network": {"conv_channels": [2,2,2,2,2,2,2,2], "fc_channels": [4]},
                                  "inference": {"tile": [20, 20, 20]}})",
                             &c.p),
            VFD_OK);
  vfd_network* net = nullptr;
  ASSERT_EQ(vfd_network_create(c.p, 5, &net), VFD_OK);
  const std::string ck = dir.file("n.ckpt");
  ASSERT_EQ(vfd_network_save(net, ck.c_str()), VFD_OK);
  vfd_network* loaded = nullptr;
  ASSERT_EQ(vfd_network_load(ck.c_str(), &loaded), VFD_OK);
  uint64_t n1 = 0, n2 = 0;
  vfd_network_parameter_count(net, &n1);
  vfd_network_parameter_count(loaded, &n2);
  EXPECT_EQ(n1, n2);

  const int dims[3] = {12, 12, 12};
  const double sp[3] = {1, 1, 1};
  std::vector<float> data(1728);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::sin(static_cast<float>(i));
  vfd_volume* img = nullptr;
  ASSERT_EQ(vfd_volume_create(dims, sp, nullptr, data.data(), &img), VFD_OK);
  vfd_probmap* map = nullptr;
  ASSERT_EQ(vfd_infer(c.p, loaded, img, &map), VFD_OK);
  const float* bg = vfd_probmap_channel(map, 0);
  const float* nm = vfd_probmap_channel(map, 1);
  const float* fr = vfd_probmap_channel(map, 2);
  ASSERT_NE(fr, nullptr);
  EXPECT_EQ(vfd_probmap_channel(map, 3), nullptr);
  for (std::size_t i = 0; i < data.size(); ++i) EXPECT_NEAR(bg[i] + nm[i] + fr[i], 1.0f, 1e-5f);

  const std::string mp = dir.file("m.nii.gz");
  ASSERT_EQ(vfd_probmap_save(map, mp.c_str()), VFD_OK);
  vfd_probmap* map2 = nullptr;
  ASSERT_EQ(vfd_probmap_load(mp.c_str(), &map2), VFD_OK);
  EXPECT_EQ(0, std::memcmp(vfd_probmap_channel(map2, 2), fr, data.size() * sizeof(float)));

  char* out = nullptr;
  ASSERT_EQ(vfd_aggregate_patient(map2, 0.0, 0, &out), VFD_OK);
  auto j = nlohmann::json::parse(take(out));
  EXPECT_EQ(j["fracture_voxel_count"], 1728);
  EXPECT_EQ(j["decision"], true);
  ASSERT_EQ(vfd_aggregate_patient(map2, 1.0, 5000, &out), VFD_OK);
  EXPECT_EQ(nlohmann::json::parse(take(out))["decision"], false);
  EXPECT_EQ(vfd_aggregate_patient(map2, 2.0, 0, &out), VFD_ERR_ARGUMENT);

  std::ofstream(dir.file("c.csv")) << "L1,mild,5,5,5\nL2,normal,5,5,50\n";
  ASSERT_EQ(vfd_aggregate_vertebra(c.p, map2, dir.file("c.csv").c_str(), 0.0, &out), VFD_OK);
  const std::string lines = take(out);
  EXPECT_EQ(std::count(lines.begin(), lines.end(), '\n'), 1);  // L2 lies outside the map
  const auto rec = nlohmann::json::parse(lines.substr(0, lines.find('\n')));
  EXPECT_EQ(rec["vertebra"], "L1");
  EXPECT_EQ(rec["grade"], "mild");
  EXPECT_GE(rec["score"].get<double>(), 0.0);

  vfd_probmap_free(map2);
  vfd_probmap_free(map);
  vfd_volume_free(img);
  vfd_network_free(loaded);
  vfd_network_free(net);
}

TEST(CApi, BuildLabelsReportsSkippedVertebrae) {
  vfd::testing::TempDir dir;
  ConfigHandle c;
  ASSERT_EQ(vfd_config_default(&c.p), VFD_OK);
  const int dims[3] = {20, 20, 20};
  const double sp[3] = {1, 1, 2};
  vfd_volume* v = nullptr;
  ASSERT_EQ(vfd_volume_create(dims, sp, nullptr, nullptr, &v), VFD_OK);
  ASSERT_EQ(vfd_volume_save(v, dir.file("v.nii").c_str()), VFD_OK);
  vfd_volume_free(v);
  std::ofstream(dir.file("a.csv")) << "T1,normal,10,10,10\nT2,severe,10,10,500\n";
  int skipped = -1;
  std::vector<std::string> logs;
  vfd_set_log([](const char* line, void* user) {
    static_cast<std::vector<std::string>*>(user)->push_back(line);
  }, &logs);
  ASSERT_EQ(vfd_build_labels(c.p, dir.file("a.csv").c_str(), dir.file("v.nii").c_str(),
                             dir.file("l.nii.gz").c_str(), &skipped),
            VFD_OK);
  vfd_set_log(nullptr, nullptr);
  EXPECT_EQ(skipped, 1);
  EXPECT_EQ(logs.size(), 1u);
  vfd_volume* l = nullptr;
  ASSERT_EQ(vfd_volume_load(dir.file("l.nii.gz").c_str(), &l), VFD_OK);
  int d[3];
  vfd_volume_info(l, d, nullptr, nullptr);
  EXPECT_EQ(d[2], 40);  // labels live on the resampled 1 mm grid
  vfd_volume_free(l);
  std::ofstream(dir.file("bad.csv")) << "T1,crushed,1,1,1\n";
  EXPECT_EQ(vfd_build_labels(c.p, dir.file("bad.csv").c_str(), dir.file("v.nii").c_str(),
                             dir.file("x.nii").c_str(), nullptr),
            VFD_ERR_PARSE);
}

}  // namespace
