#include <algorithm>
#include <cmath>

#include "ildm/codec.hpp"
#include "ildm/error.hpp"

namespace ildm::codec {

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ContractError("percentile of an empty set", "values");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

Tensor normalize_depth_scalar(const Tensor& raw) {
  if (raw.rank() != 2) throw ContractError("depth must be [H,W], got " + shape_string(raw.shape()), "depth");
  if (!raw.all_finite()) throw ContractError("depth contains non-finite values", "depth");
  std::vector<double> v(raw.storage().begin(), raw.storage().end());
  const double lo = percentile(v, 2.0);
  const double hi = percentile(v, 98.0);
  if (!(hi > lo)) throw DegenerateInputError("depth field has zero 2%-98% percentile span", "depth");
  Tensor out(raw.shape());
  for (std::size_t i = 0; i < raw.numel(); ++i) {
    const double s = 2.0 * (raw[i] - lo) / (hi - lo) - 1.0;
    out[i] = static_cast<float>(std::clamp(s, -1.0, 1.0));
  }
  return out;
}

Rgb depth_to_color(float s) {
  s = std::clamp(s, -1.0f, 1.0f);
  const int seg = s < 0.0f ? 0 : 1;
  const float u = seg == 0 ? s + 1.0f : s;
  const Rgb& a = kDepthColormap[static_cast<std::size_t>(seg)];
  const Rgb& b = kDepthColormap[static_cast<std::size_t>(seg + 1)];
  auto mix = [u](float x, float y) { return 2.0f * (x + (y - x) * u) - 1.0f; };
  return {mix(a.r, b.r), mix(a.g, b.g), mix(a.b, b.b)};
}

float color_to_depth(const Rgb& c) {
  const float p[3] = {(c.r + 1.0f) * 0.5f, (c.g + 1.0f) * 0.5f, (c.b + 1.0f) * 0.5f};
  float best_s = 0.0f, best_d = INFINITY;
  for (int seg = 0; seg < 2; ++seg) {
    const Rgb& a = kDepthColormap[static_cast<std::size_t>(seg)];
    const Rgb& b = kDepthColormap[static_cast<std::size_t>(seg + 1)];
    const float d[3] = {b.r - a.r, b.g - a.g, b.b - a.b};
    const float ap[3] = {p[0] - a.r, p[1] - a.g, p[2] - a.b};
    const float len2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    const float u = std::clamp((ap[0] * d[0] + ap[1] * d[1] + ap[2] * d[2]) / len2, 0.0f, 1.0f);
    float dist = 0.0f;
    for (int k = 0; k < 3; ++k) {
      const float e = ap[k] - u * d[k];
      dist += e * e;
    }
    if (dist < best_d) {
      best_d = dist;
      best_s = seg == 0 ? u - 1.0f : u;
    }
  }
  return best_s;
}

Tensor normalize_depth(const Tensor& raw) {
  const Tensor s = normalize_depth_scalar(raw);
  const int h = raw.dim(0), w = raw.dim(1);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out({3, h, w});
  for (std::size_t i = 0; i < plane; ++i) {
    const Rgb c = depth_to_color(s[i]);
    out[i] = c.r;
    out[plane + i] = c.g;
    out[2 * plane + i] = c.b;
  }
  return out;
}

Tensor decode_depth(const Tensor& field) {
  if (field.rank() != 3 || field.dim(0) != 3) throw ContractError("depth field must be [3,H,W]", "depth");
  const int h = field.dim(1), w = field.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out({h, w});
  for (std::size_t i = 0; i < plane; ++i) out[i] = color_to_depth({field[i], field[plane + i], field[2 * plane + i]});
  return out;
}

Rgb segmentation_color(int id) {
  if (id <= 0) return {-1.0f, -1.0f, -1.0f};
  constexpr double kGolden = 0.6180339887498949;
  const double hue = std::fmod(id * kGolden, 1.0) * 6.0;
  const int sector = static_cast<int>(hue) % 6;
  const double f = hue - std::floor(hue);
  double r = 0, g = 0, b = 0;
  switch (sector) {
    case 0: r = 1; g = f; b = 0; break;
    case 1: r = 1 - f; g = 1; b = 0; break;
    case 2: r = 0; g = 1; b = f; break;
    case 3: r = 0; g = 1 - f; b = 1; break;
    case 4: r = f; g = 0; b = 1; break;
    default: r = 1; g = 0; b = 1 - f; break;
  }
  return {static_cast<float>(2 * r - 1), static_cast<float>(2 * g - 1), static_cast<float>(2 * b - 1)};
}

Tensor segmentation_field(const std::vector<int>& ids, int height, int width) {
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  if (ids.size() != plane) throw ContractError("instance map size does not match resolution", "ids");
  Tensor out({3, height, width});
  for (std::size_t i = 0; i < plane; ++i) {
    const Rgb c = segmentation_color(ids[i]);
    out[i] = c.r;
    out[plane + i] = c.g;
    out[2 * plane + i] = c.b;
  }
  return out;
}

Tensor line_field(const Tensor& depth, float threshold) {
  if (depth.rank() != 2) throw ContractError("depth must be [H,W]", "depth");
  const int h = depth.dim(0), w = depth.dim(1);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out({3, h, w}, -1.0f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      bool edge = false;
      const int nb[4][2] = {{0, -1}, {0, 1}, {-1, 0}, {1, 0}};
      for (const auto& d : nb) {
        const int yy = y + d[0], xx = x + d[1];
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        const std::size_t j = static_cast<std::size_t>(yy) * w + xx;
        if (std::fabs(depth[j] - depth[i]) > threshold) {
          edge = true;
          break;
        }
      }
      if (edge) {
        for (int c = 0; c < 3; ++c) out[c * plane + i] = 1.0f;
      }
    }
  }
  return out;
}

Tensor decode_normals(const Tensor& field) {
  if (field.rank() != 3 || field.dim(0) != 3) throw ContractError("normal field must be [3,H,W]", "normal");
  const std::size_t plane = field.numel() / 3;
  Tensor out(field.shape());
  for (std::size_t i = 0; i < plane; ++i) {
    const double x = field[i], y = field[plane + i], z = field[2 * plane + i];
    const double n = std::sqrt(x * x + y * y + z * z);
    if (n == 0.0) continue;
    out[i] = static_cast<float>(x / n);
    out[plane + i] = static_cast<float>(y / n);
    out[2 * plane + i] = static_cast<float>(z / n);
  }
  return out;
}

const Tensor& IntrinsicStack::field(int k) const {
  switch (k) {
    case 0: return depth;
    case 1: return normal;
    case 2: return segmentation;
    case 3: return line;
    default: throw ContractError("intrinsic index out of range", "intrinsic");
  }
}

Tensor& IntrinsicStack::field(int k) { return const_cast<Tensor&>(std::as_const(*this).field(k)); }

Tensor IntrinsicStack::channels() const {
  const int h = depth.dim(1), w = depth.dim(2);
  const std::size_t plane3 = 3 * static_cast<std::size_t>(h) * w;
  Tensor out({kIntrinsicChannels, h, w});
  for (int k = 0; k < kIntrinsicCount; ++k) {
    const Tensor& f = field(k);
    if (f.shape() != Shape{3, h, w}) throw ContractError("intrinsic fields differ in shape", kIntrinsicNames[static_cast<std::size_t>(k)]);
    std::copy(f.storage().begin(), f.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(k * plane3));
  }
  return out;
}

IntrinsicStack IntrinsicStack::from_channels(const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) != kIntrinsicChannels) {
    throw ContractError("intrinsic stack must be [12,H,W], got " + shape_string(chw.shape()), "intrinsics");
  }
  const int h = chw.dim(1), w = chw.dim(2);
  IntrinsicStack s;
  const std::size_t n = 3 * static_cast<std::size_t>(h) * w;
  for (int k = 0; k < kIntrinsicCount; ++k) {
    const auto first = chw.storage().begin() + static_cast<std::ptrdiff_t>(k * n);
    s.field(k) = Tensor({3, h, w}, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(n)));
  }
  return s;
}

}  // namespace ildm::codec
