#include "ildm/container.hpp"

#include <cstring>
#include <fstream>

#include "ildm/error.hpp"

namespace ildm::io {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, const std::string& origin) : bytes_(bytes), origin_(origin) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw IoError("truncated container while reading " + std::string(what) + " at byte offset " +
                        std::to_string(pos_),
                    origin_);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }
  const std::string& origin() const { return origin_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  const std::string& origin_;
};

}  // namespace

void TensorContainer::add(ContainerEntry entry) {
  if (entry.name.empty() || entry.name.size() > 0xFFFF) throw ContractError("invalid container entry name", entry.name);
  if (contains(entry.name)) throw ContractError("duplicate container entry", entry.name);
  if (entry.shape.size() > 255) throw ContractError("container entry rank exceeds 255", entry.name);
  entries_.push_back(std::move(entry));
}

void TensorContainer::put(const std::string& name, const Tensor& tensor) {
  ContainerEntry e;
  e.name = name;
  e.dtype = DType::F32;
  e.shape = tensor.shape();
  e.f32 = tensor.storage();
  add(std::move(e));
}

void TensorContainer::put_bytes(const std::string& name, Shape shape, std::vector<std::uint8_t> bytes) {
  if (shape_numel(shape) != bytes.size()) throw ContractError("byte payload does not match shape", name);
  ContainerEntry e;
  e.name = name;
  e.dtype = DType::U8;
  e.shape = std::move(shape);
  e.u8 = std::move(bytes);
  add(std::move(e));
}

void TensorContainer::put_text(const std::string& name, const std::string& text) {
  put_bytes(name, {static_cast<int>(text.size())}, std::vector<std::uint8_t>(text.begin(), text.end()));
}

bool TensorContainer::contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

const ContainerEntry& TensorContainer::entry(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw IoError("container has no entry '" + name + "'", name);
}

Tensor TensorContainer::tensor(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::F32) throw IoError("entry is not f32", name);
  return Tensor(e.shape, e.f32);
}

const std::vector<std::uint8_t>& TensorContainer::bytes(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::U8) throw IoError("entry is not u8", name);
  return e.u8;
}

std::string TensorContainer::text(const std::string& name) const {
  const auto& b = bytes(name);
  return std::string(b.begin(), b.end());
}

std::vector<std::uint8_t> TensorContainer::serialize() const {
  Writer w;
  w.raw(kContainerMagic, sizeof(kContainerMagic));
  w.u32(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.raw(e.name.data(), e.name.size());
    w.u8(static_cast<std::uint8_t>(e.dtype));
    w.u8(static_cast<std::uint8_t>(e.shape.size()));
    for (int d : e.shape) w.u32(static_cast<std::uint32_t>(d));
    if (e.dtype == DType::F32) {
      for (float f : e.f32) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof(bits));
        w.u32(bits);
      }
    } else {
      w.raw(e.u8.data(), e.u8.size());
    }
  }
  return w.take();
}

TensorContainer TensorContainer::parse(std::span<const std::uint8_t> bytes, const std::string& origin) {
  Reader r(bytes, origin);
  const auto magic = r.take(sizeof(kContainerMagic), "magic");
  if (std::memcmp(magic.data(), kContainerMagic, sizeof(kContainerMagic)) != 0) {
    throw IoError("bad container magic at byte offset 0", origin);
  }
  const std::uint32_t version = r.u32("version");
  if (version != kContainerVersion) {
    throw IoError("unsupported container version " + std::to_string(version) + " at byte offset 8", origin);
  }
  const std::uint32_t count = r.u32("entry count");
  TensorContainer c;
  for (std::uint32_t k = 0; k < count; ++k) {
    ContainerEntry e;
    const std::uint16_t name_len = r.u16("name length");
    const auto name = r.take(name_len, "name");
    e.name.assign(name.begin(), name.end());
    const std::size_t dtype_offset = r.offset();
    const std::uint8_t tag = r.u8("dtype");
    if (tag != 1 && tag != 2) {
      throw IoError("unknown dtype tag " + std::to_string(tag) + " at byte offset " + std::to_string(dtype_offset),
                    origin);
    }
    e.dtype = static_cast<DType>(tag);
    const std::uint8_t rank = r.u8("rank");
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32("dims");
      if (dim > 0x7FFFFFFFu) throw IoError("dimension too large at byte offset " + std::to_string(r.offset()), origin);
      e.shape.push_back(static_cast<int>(dim));
      n *= dim;
      if (n > bytes.size()) r.need(bytes.size() + 1, "payload");
    }
    const std::size_t elem = e.dtype == DType::F32 ? 4 : 1;
    const auto payload = r.take(n * elem, "payload");
    if (e.dtype == DType::F32) {
      e.f32.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(payload[i * 4 + b]) << (8 * b);
        std::memcpy(&e.f32[i], &bits, sizeof(bits));
      }
    } else {
      e.u8.assign(payload.begin(), payload.end());
    }
    if (c.contains(e.name)) throw IoError("duplicate entry '" + e.name + "' in container", origin);
    c.entries_.push_back(std::move(e));
  }
  if (!r.done()) throw IoError("trailing bytes after last entry at byte offset " + std::to_string(r.offset()), origin);
  return c;
}

void TensorContainer::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  write_file_atomic(path, bytes);
}

TensorContainer TensorContainer::load(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse(bytes, path.string());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open file for reading", path.string());
  const auto size = in.tellg();
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  in.seekg(0);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), size)) throw IoError("read failed", path.string());
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory: " + ec.message(), path.parent_path().string());
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open file for writing", tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed", tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed: " + ec.message(), path.string());
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace ildm::io
