#include <json.hpp>
#include <sstream>

#include "ildm/error.hpp"
#include "ildm/scenegen.hpp"

namespace ildm::scene {

using json = nlohmann::json;

Dataset generate_dataset(int n, std::uint64_t seed, int resolution) {
  if (n < 1) throw ConfigError("dataset size must be >= 1", "n");
  Dataset d;
  d.resolution = resolution;
  const std::size_t plane = static_cast<std::size_t>(resolution) * resolution;
  d.images = Tensor({n, 3, resolution, resolution});
  d.intrinsics = Tensor({n, codec::kIntrinsicChannels, resolution, resolution});
  d.depth_norm = Tensor({n, resolution, resolution});
  d.instances.resize(static_cast<std::size_t>(n) * plane);
  for (int i = 0; i < n; ++i) {
    const std::uint64_t s = sample_seed(seed, i);
    SceneSample sample = render(sample_spec(s, resolution), resolution);
    const std::size_t k = static_cast<std::size_t>(i);
    std::copy(sample.image.storage().begin(), sample.image.storage().end(), d.images.data() + k * 3 * plane);
    const Tensor stack = sample.intrinsics.channels();
    std::copy(stack.storage().begin(), stack.storage().end(), d.intrinsics.data() + k * codec::kIntrinsicChannels * plane);
    std::copy(sample.depth_norm.storage().begin(), sample.depth_norm.storage().end(), d.depth_norm.data() + k * plane);
    for (std::size_t p = 0; p < plane; ++p) d.instances[k * plane + p] = static_cast<std::uint8_t>(sample.instances[p]);
    d.captions.push_back(sample.caption);
    d.seeds.push_back(s);
  }
  return d;
}

namespace {

std::vector<std::uint8_t> seeds_to_bytes(const std::vector<std::uint64_t>& seeds) {
  std::vector<std::uint8_t> out;
  for (std::uint64_t s : seeds) {
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(s >> (8 * b)));
  }
  return out;
}

std::vector<std::uint64_t> bytes_to_seeds(const std::vector<std::uint8_t>& bytes) {
  std::vector<std::uint64_t> out(bytes.size() / 8, 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (int b = 0; b < 8; ++b) out[i] |= static_cast<std::uint64_t>(bytes[i * 8 + static_cast<std::size_t>(b)]) << (8 * b);
  }
  return out;
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

json read_meta(const io::TensorContainer& c, const std::string& kind, const std::string& path) {
  json meta;
  try {
    meta = json::parse(c.text("__meta__"));
  } catch (const json::exception& e) {
    throw IoError(std::string("bad shard header: ") + e.what(), path);
  }
  if (meta.value("kind", "") != kind) throw IoError("shard kind is not '" + kind + "'", path);
  return meta;
}

}  // namespace

void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  const int n = d.size();
  json meta;
  meta["n"] = n;
  meta["resolution"] = d.resolution;

  io::TensorContainer images;
  meta["kind"] = "scene-images";
  images.put_text("__meta__", meta.dump());
  images.put("images", d.images);
  images.put_text("captions", join_lines(d.captions));
  images.put_bytes("seeds", {n, 8}, seeds_to_bytes(d.seeds));
  images.save(dir / kImageShard);

  io::TensorContainer intr;
  meta["kind"] = "scene-intrinsics";
  meta["fields"] = {"depth", "normal", "segmentation", "line"};
  intr.put_text("__meta__", meta.dump());
  intr.put("intrinsics", d.intrinsics);
  intr.put("depth_norm", d.depth_norm);
  intr.put_bytes("instances", {n, d.resolution, d.resolution}, d.instances);
  intr.save(dir / kIntrinsicShard);
}

Dataset load_images(const std::filesystem::path& dir) {
  const auto path = dir / kImageShard;
  const auto c = io::TensorContainer::load(path);
  const json meta = read_meta(c, "scene-images", path.string());
  Dataset d;
  d.resolution = meta.at("resolution").get<int>();
  d.images = c.tensor("images");
  d.captions = split_lines(c.text("captions"));
  d.seeds = bytes_to_seeds(c.bytes("seeds"));
  if (static_cast<int>(d.captions.size()) != d.size() || static_cast<int>(d.seeds.size()) != d.size()) {
    throw IoError("image shard entries disagree in sample count", path.string());
  }
  return d;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d = load_images(dir);
  const auto path = dir / kIntrinsicShard;
  const auto c = io::TensorContainer::load(path);
  read_meta(c, "scene-intrinsics", path.string());
  d.intrinsics = c.tensor("intrinsics");
  d.depth_norm = c.tensor("depth_norm");
  d.instances = c.bytes("instances");
  if (d.intrinsics.dim(0) != d.size()) throw IoError("intrinsic shard sample count differs from image shard", path.string());
  return d;
}

}  // namespace ildm::scene
