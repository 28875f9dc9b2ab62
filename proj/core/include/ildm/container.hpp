#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ildm/tensor.hpp"

// Binary tensor container ("ILDMTNSR"), used for dataset shards and
// checkpoints. Layout, all integers little-endian:
//
//   magic      8 bytes  "ILDMTNSR"
//   version    u32      (kContainerVersion)
//   count      u32      number of entries
//   entries    count times:
//     name_len u16, name UTF-8 bytes
//     dtype    u8       1 = f32, 2 = u8
//     rank     u8
//     dims     rank x u32
//     payload  prod(dims) elements, row-major, little-endian

namespace ildm::io {

inline constexpr char kContainerMagic[8] = {'I', 'L', 'D', 'M', 'T', 'N', 'S', 'R'};
inline constexpr std::uint32_t kContainerVersion = 1;

enum class DType : std::uint8_t { F32 = 1, U8 = 2 };

struct ContainerEntry {
  std::string name;
  DType dtype = DType::F32;
  Shape shape;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;
};

class TensorContainer {
 public:
  void put(const std::string& name, const Tensor& tensor);
  void put_bytes(const std::string& name, Shape shape, std::vector<std::uint8_t> bytes);
  void put_text(const std::string& name, const std::string& text);

  bool contains(const std::string& name) const;
  const ContainerEntry& entry(const std::string& name) const;
  Tensor tensor(const std::string& name) const;
  const std::vector<std::uint8_t>& bytes(const std::string& name) const;
  std::string text(const std::string& name) const;

  const std::vector<ContainerEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::vector<std::uint8_t> serialize() const;
  /// Throws IoError (with byte offset) on bad magic, unknown version, truncation
  /// or trailing bytes; nothing is returned on failure.
  static TensorContainer parse(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");

  void save(const std::filesystem::path& path) const;
  static TensorContainer load(const std::filesystem::path& path);

 private:
  void add(ContainerEntry entry);
  std::vector<ContainerEntry> entries_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes via a sibling temp file and rename.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace ildm::io
