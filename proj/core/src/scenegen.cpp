#include "ildm/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "ildm/error.hpp"

namespace ildm::scene {

namespace {

Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(const Vec3& a, double s) { return {a.x * s, a.y * s, a.z * s}; }
double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 normalized(const Vec3& v) {
  const double n = std::sqrt(dot(v, v));
  return v * (1.0 / n);
}

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kMaxObjects = 5;
constexpr double kGroundAlbedo[3] = {0.55, 0.55, 0.50};
constexpr double kAmbient = 0.25;

struct Hit {
  double s = kInf;
  Vec3 normal;
  int object = -1;  // -1 = ground
};

void hit_sphere(const SceneObject& o, const Vec3& origin, const Vec3& dir, int index, Hit& best) {
  const double r = o.size.x;
  const Vec3 oc = origin - o.center;
  const double b = dot(oc, dir);
  const double c = dot(oc, oc) - r * r;
  const double disc = b * b - c;
  if (disc < 0.0) return;
  const double s = -b - std::sqrt(disc);
  if (s <= 0.0 || s >= best.s) return;
  best.s = s;
  best.normal = (origin + dir * s - o.center) * (1.0 / r);
  best.object = index;
}

void hit_box(const SceneObject& o, const Vec3& origin, const Vec3& dir, int index, Hit& best) {
  const double lo[3] = {o.center.x - o.size.x, o.center.y - o.size.y, o.center.z - o.size.z};
  const double hi[3] = {o.center.x + o.size.x, o.center.y + o.size.y, o.center.z + o.size.z};
  const double org[3] = {origin.x, origin.y, origin.z};
  const double d[3] = {dir.x, dir.y, dir.z};
  double t_near = -kInf, t_far = kInf;
  int axis = -1;
  double sign = 0.0;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (org[a] < lo[a] || org[a] > hi[a]) return;
      continue;
    }
    double t0 = (lo[a] - org[a]) / d[a];
    double t1 = (hi[a] - org[a]) / d[a];
    double s = -1.0;  // entering through the low face
    if (t0 > t1) {
      std::swap(t0, t1);
      s = 1.0;
    }
    if (t0 > t_near) {
      t_near = t0;
      axis = a;
      sign = s;
    }
    t_far = std::min(t_far, t1);
  }
  if (axis < 0 || t_near > t_far || t_near <= 0.0 || t_near >= best.s) return;
  best.s = t_near;
  best.normal = {axis == 0 ? sign : 0.0, axis == 1 ? sign : 0.0, axis == 2 ? sign : 0.0};
  best.object = index;
}

void hit_cylinder(const SceneObject& o, const Vec3& origin, const Vec3& dir, int index, Hit& best) {
  const double r = o.size.x, h = o.size.z;
  const double z0 = o.center.z, z1 = o.center.z + h;
  // Side: |(origin + s dir - c)_xy| = r.
  const double ox = origin.x - o.center.x, oy = origin.y - o.center.y;
  const double a = dir.x * dir.x + dir.y * dir.y;
  if (a > 0.0) {
    const double b = ox * dir.x + oy * dir.y;
    const double c = ox * ox + oy * oy - r * r;
    const double disc = b * b - a * c;
    if (disc >= 0.0) {
      const double s = (-b - std::sqrt(disc)) / a;
      const double z = origin.z + s * dir.z;
      if (s > 0.0 && s < best.s && z >= z0 && z <= z1) {
        best.s = s;
        best.normal = {(ox + s * dir.x) / r, (oy + s * dir.y) / r, 0.0};
        best.object = index;
      }
    }
  }
  // Top cap.
  if (dir.z != 0.0) {
    const double s = (z1 - origin.z) / dir.z;
    const double x = ox + s * dir.x, y = oy + s * dir.y;
    if (s > 0.0 && s < best.s && x * x + y * y <= r * r) {
      best.s = s;
      best.normal = {0.0, 0.0, 1.0};
      best.object = index;
    }
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double footprint_radius(const SceneObject& o) {
  return o.type == Primitive::Box ? std::max(o.size.x, o.size.y) : o.size.x;
}

/// Intersection area of two discs over the area of the smaller one.
double disc_overlap(double x1, double y1, double r1, double x2, double y2, double r2) {
  const double d = std::hypot(x1 - x2, y1 - y2);
  const double rmin = std::min(r1, r2);
  if (d >= r1 + r2) return 0.0;
  if (d <= std::fabs(r1 - r2)) return 1.0;
  const double a1 = r1 * r1 * std::acos((d * d + r1 * r1 - r2 * r2) / (2 * d * r1));
  const double a2 = r2 * r2 * std::acos((d * d + r2 * r2 - r1 * r1) / (2 * d * r2));
  const double k = 0.5 * std::sqrt((-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2));
  return (a1 + a2 - k) / (std::numbers::pi * rmin * rmin);
}

}  // namespace

Vec3 Camera::forward() const {
  const double t = tilt_deg * std::numbers::pi / 180.0;
  return {0.0, std::cos(t), -std::sin(t)};
}

Vec3 Camera::right() const { return {1.0, 0.0, 0.0}; }

Vec3 Camera::up() const {
  const double t = tilt_deg * std::numbers::pi / 180.0;
  return {0.0, std::sin(t), std::cos(t)};
}

Vec3 Camera::ray_origin(double px, double py, int resolution) const {
  const double a = (px + 0.5) / resolution * 2.0 * extent - extent;
  const double b = extent - (py + 0.5) / resolution * 2.0 * extent;
  return right() * a + up() * b - forward() * distance;
}

std::array<double, 2> Camera::project(const Vec3& p, int resolution) const {
  const double a = dot(p, right());
  const double b = dot(p, up());
  return {(a + extent) / (2.0 * extent) * resolution - 0.5, (extent - b) / (2.0 * extent) * resolution - 0.5};
}

const std::vector<NamedColor>& palette() {
  static const std::vector<NamedColor> colors = {
      {"red", 0.85f, 0.15f, 0.15f},   {"green", 0.20f, 0.70f, 0.20f}, {"blue", 0.20f, 0.30f, 0.85f},
      {"yellow", 0.90f, 0.85f, 0.20f}, {"purple", 0.60f, 0.25f, 0.75f}, {"orange", 0.95f, 0.55f, 0.15f},
      {"white", 0.92f, 0.92f, 0.92f},  {"cyan", 0.20f, 0.80f, 0.85f},
  };
  return colors;
}

const char* primitive_name(Primitive p, bool plural) {
  switch (p) {
    case Primitive::Sphere: return plural ? "spheres" : "sphere";
    case Primitive::Box: return plural ? "boxes" : "box";
    case Primitive::Cylinder: return plural ? "cylinders" : "cylinder";
  }
  return "?";
}

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> vocab = [] {
    std::vector<std::string> v = {"<pad>", "<null>", "one", "two", "three", "four", "five"};
    for (const auto& c : palette()) v.emplace_back(c.name);
    for (Primitive p : {Primitive::Sphere, Primitive::Box, Primitive::Cylinder}) {
      v.emplace_back(primitive_name(p, false));
      v.emplace_back(primitive_name(p, true));
    }
    for (const char* w : {"and", "on", "a", "plane"}) v.emplace_back(w);
    return v;
  }();
  return vocab;
}

std::vector<int> tokenize(const std::string& caption) {
  const auto& vocab = vocabulary();
  std::vector<int> out;
  std::istringstream in(caption);
  std::string word;
  while (in >> word) {
    const auto it = std::find(vocab.begin() + 2, vocab.end(), word);
    if (it == vocab.end()) throw ContractError("word '" + word + "' is not in the caption vocabulary", "prompt");
    out.push_back(static_cast<int>(it - vocab.begin()));
  }
  return out;
}

std::string detokenize(const std::vector<int>& tokens) {
  const auto& vocab = vocabulary();
  std::string out;
  for (int t : tokens) {
    if (t < 0 || t >= static_cast<int>(vocab.size())) throw ContractError("token id out of range", "tokens");
    if (t <= 1) continue;
    if (!out.empty()) out += ' ';
    out += vocab[static_cast<std::size_t>(t)];
  }
  return out;
}

std::string caption_for(const SceneSpec& spec) {
  static const char* counts[] = {"one", "two", "three", "four", "five"};
  std::vector<std::pair<std::pair<int, Primitive>, int>> groups;
  for (const auto& o : spec.objects) {
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const auto& g) { return g.first.first == o.color && g.first.second == o.type; });
    if (it == groups.end()) {
      groups.push_back({{o.color, o.type}, 1});
    } else {
      ++it->second;
    }
  }
  std::string out;
  for (const auto& [key, n] : groups) {
    if (!out.empty()) out += " and ";
    out += std::string(counts[n - 1]) + " " + palette()[static_cast<std::size_t>(key.first)].name + " " +
           primitive_name(key.second, n > 1);
  }
  if (!out.empty()) out += " ";
  return out + "on a plane";
}

void validate(const SceneSpec& spec, int resolution) {
  if (resolution < 4) throw ConfigError("resolution must be at least 4", "res");
  if (spec.objects.size() > kMaxObjects) throw ContractError("scene has more than 5 objects", "objects");
  std::vector<int> ids;
  for (const auto& o : spec.objects) {
    if (o.instance < 1 || o.instance > 255) throw ContractError("instance ids must lie in [1,255]", "instance");
    if (std::find(ids.begin(), ids.end(), o.instance) != ids.end()) throw ContractError("duplicate instance id", "instance");
    ids.push_back(o.instance);
    if (o.color < 0 || o.color >= static_cast<int>(palette().size())) throw ContractError("unknown colour index", "color");
    if (!(o.size.x > 0 && o.size.y > 0 && o.size.z > 0)) throw ContractError("object sizes must be positive", "size");
    const double h = o.type == Primitive::Cylinder ? o.size.z : 0.0;
    const double zlo = o.type == Primitive::Cylinder ? o.center.z : o.center.z - o.size.z;
    const double zhi = o.type == Primitive::Cylinder ? o.center.z + h : o.center.z + o.size.z;
    for (int k = 0; k < 8; ++k) {
      const Vec3 corner{o.center.x + ((k & 1) ? o.size.x : -o.size.x), o.center.y + ((k & 2) ? o.size.y : -o.size.y),
                        (k & 4) ? zhi : zlo};
      const auto p = spec.camera.project(corner, resolution);
      if (p[0] < -0.5 || p[0] > resolution - 0.5 || p[1] < -0.5 || p[1] > resolution - 0.5) {
        throw ContractError("object " + std::to_string(o.instance) + " extends outside the frame", "objects");
      }
    }
  }
}

SceneSample render(const SceneSpec& spec, int resolution) {
  validate(spec, resolution);
  const int n = resolution;
  const std::size_t plane = static_cast<std::size_t>(n) * n;
  const Vec3 dir = spec.camera.forward();
  const Vec3 right = spec.camera.right(), up = spec.camera.up();
  const Vec3 light = normalized(spec.light);

  SceneSample out;
  out.image = Tensor({3, n, n});
  out.depth = Tensor({n, n});
  out.normals = Tensor({3, n, n});
  out.instances.assign(plane, 0);

  for (int py = 0; py < n; ++py) {
    for (int px = 0; px < n; ++px) {
      const std::size_t i = static_cast<std::size_t>(py) * n + px;
      const Vec3 origin = spec.camera.ray_origin(px, py, n);
      Hit hit;
      if (dir.z < 0.0) {
        hit.s = (spec.ground_height - origin.z) / dir.z;
        hit.normal = {0.0, 0.0, 1.0};
      }
      for (std::size_t k = 0; k < spec.objects.size(); ++k) {
        const auto& o = spec.objects[k];
        const int idx = static_cast<int>(k);
        switch (o.type) {
          case Primitive::Sphere: hit_sphere(o, origin, dir, idx, hit); break;
          case Primitive::Box: hit_box(o, origin, dir, idx, hit); break;
          case Primitive::Cylinder: hit_cylinder(o, origin, dir, idx, hit); break;
        }
      }
      if (!std::isfinite(hit.s)) throw ContractError("camera ray misses the ground plane", "camera");
      const Vec3 nrm = normalized(hit.normal);
      double albedo[3] = {kGroundAlbedo[0], kGroundAlbedo[1], kGroundAlbedo[2]};
      if (hit.object >= 0) {
        const auto& o = spec.objects[static_cast<std::size_t>(hit.object)];
        const auto& c = palette()[static_cast<std::size_t>(o.color)];
        albedo[0] = c.r;
        albedo[1] = c.g;
        albedo[2] = c.b;
        out.instances[i] = o.instance;
      }
      const double shade = kAmbient + (1.0 - kAmbient) * std::max(0.0, dot(nrm, light));
      for (int c = 0; c < 3; ++c) out.image[c * plane + i] = static_cast<float>(2.0 * std::min(1.0, albedo[c] * shade) - 1.0);
      out.depth[i] = static_cast<float>(hit.s);
      out.normals[i] = static_cast<float>(dot(nrm, right));
      out.normals[plane + i] = static_cast<float>(dot(nrm, up));
      out.normals[2 * plane + i] = static_cast<float>(-dot(nrm, dir));
    }
  }

  out.depth_norm = codec::normalize_depth_scalar(out.depth);
  out.intrinsics.depth = codec::normalize_depth(out.depth);
  out.intrinsics.normal = out.normals;
  out.intrinsics.segmentation = codec::segmentation_field(out.instances, n, n);
  out.intrinsics.line = codec::line_field(out.depth_norm);
  out.caption = caption_for(spec);
  out.tokens = tokenize(out.caption);
  return out;
}

std::uint64_t sample_seed(std::uint64_t seed, int index) {
  return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(index) + 1));
}

SceneSpec sample_spec(std::uint64_t seed, int resolution) {
  Rng rng(seed);
  std::uniform_int_distribution<int> count_dist(1, kMaxObjects);
  std::uniform_int_distribution<int> type_dist(0, 2);
  std::uniform_int_distribution<int> color_dist(0, static_cast<int>(palette().size()) - 1);
  std::uniform_real_distribution<double> pos(-2.6, 2.6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int attempt = 0; attempt < 1000; ++attempt) {
    SceneSpec spec;
    const int count = count_dist(rng);
    bool ok = true;
    for (int k = 0; k < count && ok; ++k) {
      SceneObject o;
      o.type = static_cast<Primitive>(type_dist(rng));
      o.color = color_dist(rng);
      o.instance = k + 1;
      switch (o.type) {
        case Primitive::Sphere: {
          const double r = 0.5 + 0.45 * unit(rng);
          o.size = {r, r, r};
          break;
        }
        case Primitive::Box:
          o.size = {0.4 + 0.5 * unit(rng), 0.4 + 0.5 * unit(rng), 0.35 + 0.5 * unit(rng)};
          break;
        case Primitive::Cylinder: {
          const double r = 0.35 + 0.4 * unit(rng);
          o.size = {r, r, 0.8 + 1.0 * unit(rng)};
          break;
        }
      }
      bool placed = false;
      for (int tries = 0; tries < 100 && !placed; ++tries) {
        o.center = {pos(rng), pos(rng), 0.0};
        o.center.z = o.type == Primitive::Cylinder ? spec.ground_height : spec.ground_height + o.size.z;
        placed = true;
        for (const auto& other : spec.objects) {
          if (disc_overlap(o.center.x, o.center.y, footprint_radius(o), other.center.x, other.center.y,
                           footprint_radius(other)) > 0.3) {
            placed = false;
            break;
          }
        }
        if (placed) {
          SceneSpec probe = spec;
          probe.objects.push_back(o);
          try {
            validate(probe, resolution);
          } catch (const ContractError&) {
            placed = false;
          }
        }
      }
      if (!placed) {
        ok = false;
      } else {
        spec.objects.push_back(o);
      }
    }
    if (ok) return spec;
  }
  throw NumericError("could not place a scene layout after 1000 attempts", "seed");
}

}  // namespace ildm::scene
