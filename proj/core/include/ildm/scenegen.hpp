#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ildm/codec.hpp"

namespace ildm::scene {

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

enum class Primitive { Sphere, Box, Cylinder };

struct SceneObject {
  Primitive type = Primitive::Sphere;
  Vec3 center;      // sphere: centre; box: centre; cylinder: base centre
  Vec3 size;        // sphere: (r,r,r); box: half extents; cylinder: (r, r, height)
  int color = 0;    // index into palette()
  int instance = 1;
};

/// Orthographic camera looking along (0, cos tilt, -sin tilt) at the ground
/// origin. The image plane spans [-extent, extent] world units on both axes.
struct Camera {
  double tilt_deg = 55.0;
  double extent = 4.0;
  double distance = 30.0;

  Vec3 forward() const;
  Vec3 right() const;
  Vec3 up() const;
  /// Ray origin of pixel (px, py) centre; rays travel along forward().
  Vec3 ray_origin(double px, double py, int resolution) const;
  /// Continuous pixel coordinates (px, py) of a world point.
  std::array<double, 2> project(const Vec3& p, int resolution) const;
};

struct SceneSpec {
  std::vector<SceneObject> objects;
  double ground_height = 0.0;
  Vec3 light{-0.4, -0.5, 0.768};
  Camera camera;
};

struct NamedColor {
  const char* name;
  float r, g, b;  // albedo in [0,1]
};

const std::vector<NamedColor>& palette();
const char* primitive_name(Primitive p, bool plural);

// Caption vocabulary. Ids 0 and 1 are the pad and null tokens.
const std::vector<std::string>& vocabulary();
std::vector<int> tokenize(const std::string& caption);
std::string detokenize(const std::vector<int>& tokens);
std::string caption_for(const SceneSpec& spec);

struct SceneSample {
  Tensor image;                     // [3,H,W] in [-1,1]
  codec::IntrinsicStack intrinsics; // fields [3,H,W]
  Tensor depth;                     // raw ray length [H,W]
  Tensor depth_norm;                // normalized depth [H,W]
  Tensor normals;                   // unit camera-space normals [3,H,W], z toward the camera
  std::vector<int> instances;       // H*W, 0 = ground
  std::string caption;
  std::vector<int> tokens;
  std::uint64_t seed = 0;
};

/// Throws ContractError when the spec is invalid (object count, ids, framing).
void validate(const SceneSpec& spec, int resolution);
SceneSample render(const SceneSpec& spec, int resolution);

/// Draws a layout: 1-5 objects, uniform types and colours, footprints
/// rejection-sampled so no pair overlaps by more than 30% of the smaller one.
SceneSpec sample_spec(std::uint64_t seed, int resolution);
/// Per-sample seed for index i of a dataset generated with `seed`.
std::uint64_t sample_seed(std::uint64_t seed, int index);

/// In-memory dataset. Image and intrinsic halves are stored in separate files.
struct Dataset {
  int resolution = 64;
  Tensor images;                   // [n,3,H,W]
  Tensor intrinsics;               // [n,12,H,W]
  Tensor depth_norm;               // [n,H,W]
  std::vector<std::uint8_t> instances;  // n*H*W
  std::vector<std::string> captions;
  std::vector<std::uint64_t> seeds;

  int size() const { return images.empty() ? 0 : images.dim(0); }
  std::vector<int> tokens(int index) const { return tokenize(captions.at(static_cast<std::size_t>(index))); }
};

Dataset generate_dataset(int n, std::uint64_t seed, int resolution);

inline constexpr const char* kImageShard = "images.ildm";
inline constexpr const char* kIntrinsicShard = "intrinsics.ildm";

void save_dataset(const Dataset& data, const std::filesystem::path& dir);
/// Reads only the image shard (images, captions, seeds).
Dataset load_images(const std::filesystem::path& dir);
/// Reads both shards.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace ildm::scene
