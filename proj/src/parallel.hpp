// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

// Internal helpers shared by the core sources.

#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <thread>
#include <vector>

namespace vfd::detail {

inline std::seed_seq make_seed(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (std::uint64_t p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  return std::seed_seq(words.begin(), words.end());
}

inline std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> parts) {
  auto seq = make_seed(parts);
  return std::mt19937_64(seq);
}

template <typename Fn>
void parallel_for(int n, int workers, Fn&& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  std::vector<std::thread> threads;
  for (int w = 0; w < workers; ++w)
    threads.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) fn(i, w);
    });
  for (auto& t : threads) t.join();
}

}  // namespace vfd::detail
