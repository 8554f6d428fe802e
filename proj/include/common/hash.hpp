#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace common {

// FNV-1a 64-bit. Content fingerprinting for manifests, freeze checks and
// per-prompt noise seeding; not cryptographic.
inline uint64_t fnv1a(const void* data, size_t len, uint64_t seed = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t seed = 1469598103934665603ull) {
  return fnv1a(s.data(), s.size(), seed);
}

inline uint64_t fnv1a(const std::vector<double>& v, uint64_t seed = 1469598103934665603ull) {
  return fnv1a(v.data(), v.size() * sizeof(double), seed);
}

inline uint64_t fnv1a(const std::vector<int>& v, uint64_t seed = 1469598103934665603ull) {
  return fnv1a(v.data(), v.size() * sizeof(int), seed);
}

inline std::string hex64(uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

}  // namespace common
