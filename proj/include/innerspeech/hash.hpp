#pragma once

// FNV-1a (64-bit) content hashes for leakage checks and config fingerprints.

#include <cstdint>
#include <cstring>
#include <span>
#include <string_view>

namespace innerspeech {

class Fnv1a {
 public:
  Fnv1a& add(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001B3ULL;
    }
    return *this;
  }
  Fnv1a& add(std::string_view s) { return add(s.data(), s.size()); }
  template <typename T>
  Fnv1a& add(std::span<const T> values) {
    return add(values.data(), values.size_bytes());
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xCBF29CE484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view s) { return Fnv1a().add(s).value(); }

}  // namespace innerspeech
