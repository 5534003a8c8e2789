/*
 * Copyright 2026 The ssfa-lab Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstdio>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace ssfa {

// FNV-1a 64. Used for parameter/bundle/config fingerprints in reports and
// for the no-mutation checks around the adaptation pipeline.
inline uint64_t hash_bytes(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t hash_doubles(const std::vector<double>& v, uint64_t h = 0xcbf29ce484222325ull) {
  return v.empty() ? h : hash_bytes(v.data(), v.size() * sizeof(double), h);
}

inline std::string hex64(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

// Shortest round-trippable decimal form; keeps CSV output bit-reproducible.
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = 0.0;
  std::sscanf(buf, "%lf", &back);
  if (std::memcmp(&back, &v, sizeof(double)) == 0) {
    for (int prec = 1; prec <= 16; ++prec) {
      char shorter[40];
      std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
      std::sscanf(shorter, "%lf", &back);
      if (std::memcmp(&back, &v, sizeof(double)) == 0) return std::string(shorter);
    }
  }
  return std::string(buf);
}

}  // namespace ssfa
