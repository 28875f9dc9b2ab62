#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace ildm {

/// 64-bit FNV-1a; used for reproducibility checksums, not for security.
class Fnv1a {
 public:
  void update(const void* data, std::size_t size) noexcept;
  void update(std::string_view s) noexcept { update(s.data(), s.size()); }
  std::uint64_t digest() const noexcept { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t value);
std::string file_checksum(const std::filesystem::path& path);

}  // namespace ildm
