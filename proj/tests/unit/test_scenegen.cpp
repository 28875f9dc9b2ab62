#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "ildm/checksum.hpp"
#include "ildm/error.hpp"
#include "ildm/scenegen.hpp"

using namespace ildm;
using namespace ildm::scene;

namespace {

constexpr int kRes = 64;

std::size_t plane_index(int y, int x) { return static_cast<std::size_t>(y) * kRes + x; }

/// Sphere of radius r resting on the ground whose centre lies on the ray of pixel (px, py).
SceneSpec sphere_on_pixel(int px, int py, double r) {
  SceneSpec spec;
  const Vec3 o = spec.camera.ray_origin(px, py, kRes);
  const Vec3 f = spec.camera.forward();
  const double s = (r - o.z) / f.z;
  SceneObject sphere;
  sphere.type = Primitive::Sphere;
  sphere.center = {o.x + s * f.x, o.y + s * f.y, r};
  sphere.size = {r, r, r};
  sphere.color = 0;
  sphere.instance = 1;
  spec.objects.push_back(sphere);
  return spec;
}

}  // namespace

TEST(Render, EmptySceneIsGroundOnly) {
  const SceneSample s = render(SceneSpec{}, kRes);
  const std::size_t plane = static_cast<std::size_t>(kRes) * kRes;
  const double t = SceneSpec{}.camera.tilt_deg * std::acos(-1.0) / 180.0;
  for (std::size_t i = 0; i < plane; ++i) {
    ASSERT_EQ(s.instances[i], 0);
    for (int c = 0; c < 3; ++c) {
      ASSERT_EQ(s.intrinsics.segmentation[c * plane + i], s.intrinsics.segmentation[c * plane]);
      ASSERT_EQ(s.intrinsics.line[c * plane + i], -1.0f);
      ASSERT_EQ(s.image[c * plane + i], s.image[c * plane]);
    }
    ASSERT_NEAR(s.normals[i], 0.0, 1e-6);
    ASSERT_NEAR(s.normals[plane + i], std::cos(t), 1e-6);
    ASSERT_NEAR(s.normals[2 * plane + i], std::sin(t), 1e-6);
  }
}

TEST(Render, CenteredSphereFacesCamera) {
  const int cx = kRes / 2, cy = kRes / 2;
  const SceneSample s = render(sphere_on_pixel(cx, cy, 1.2), kRes);
  const std::size_t plane = static_cast<std::size_t>(kRes) * kRes;
  const std::size_t c = plane_index(cy, cx);
  ASSERT_EQ(s.instances[c], 1);
  EXPECT_NEAR(s.normals[c], 0.0, 1e-3);
  EXPECT_NEAR(s.normals[plane + c], 0.0, 1e-3);
  EXPECT_NEAR(s.normals[2 * plane + c], 1.0, 1e-3);
  for (std::size_t i = 0; i < plane; ++i) {
    if (s.instances[i] == 1) {
      EXPECT_GE(s.depth[i], s.depth[c]);
      EXPECT_GE(s.depth_norm[i], s.depth_norm[c]);
    }
  }
}

TEST(Render, Deterministic) {
  const SceneSpec spec = sample_spec(77, kRes);
  const SceneSample a = render(spec, kRes);
  const SceneSample b = render(spec, kRes);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.intrinsics.channels(), b.intrinsics.channels());
  EXPECT_EQ(a.instances, b.instances);
  EXPECT_EQ(a.caption, b.caption);
}

TEST(Render, RejectsInvalidSpecs) {
  SceneSpec outside = sphere_on_pixel(kRes / 2, kRes / 2, 1.0);
  outside.objects[0].center.x = 100.0;
  EXPECT_THROW(render(outside, kRes), ContractError);

  SceneSpec duplicate = sphere_on_pixel(20, 32, 0.5);
  duplicate.objects.push_back(sphere_on_pixel(44, 32, 0.5).objects[0]);
  EXPECT_THROW(validate(duplicate, kRes), ContractError);
  duplicate.objects[1].instance = 2;
  EXPECT_NO_THROW(validate(duplicate, kRes));

  SceneSpec crowded;
  for (int k = 0; k < 6; ++k) {
    auto o = sphere_on_pixel(8 + 9 * k, 32, 0.3).objects[0];
    o.instance = k + 1;
    crowded.objects.push_back(o);
  }
  EXPECT_THROW(validate(crowded, kRes), ContractError);
}

class SampledScenes : public ::testing::TestWithParam<int> {};

TEST_P(SampledScenes, LineFieldFollowsDepthDiscontinuities) {
  const SceneSample s = render(sample_spec(sample_seed(5, GetParam()), kRes), kRes);
  // Re-derive from the stored normalized depth alone, 4-neighbourhood.
  int agree = 0;
  for (int y = 0; y < kRes; ++y) {
    for (int x = 0; x < kRes; ++x) {
      bool edge = false;
      const float d = s.depth_norm[plane_index(y, x)];
      for (auto [dy, dx] : {std::pair{0, 1}, {0, -1}, {1, 0}, {-1, 0}}) {
        const int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= kRes || xx < 0 || xx >= kRes) continue;
        edge |= std::fabs(s.depth_norm[plane_index(yy, xx)] - d) > 0.05f * 2.0f;
      }
      agree += (edge ? 1.0f : -1.0f) == s.intrinsics.line[plane_index(y, x)];
    }
  }
  EXPECT_GE(agree, 0.99 * kRes * kRes) << s.caption;
}

TEST_P(SampledScenes, NormalsAreUnitLength) {
  const SceneSample s = render(sample_spec(sample_seed(6, GetParam()), kRes), kRes);
  const std::size_t plane = static_cast<std::size_t>(kRes) * kRes;
  for (std::size_t i = 0; i < plane; ++i) {
    const double n2 = std::pow(s.normals[i], 2) + std::pow(s.normals[plane + i], 2) + std::pow(s.normals[2 * plane + i], 2);
    ASSERT_NEAR(std::sqrt(n2), 1.0, 1e-3);
  }
}

TEST_P(SampledScenes, SegmentationMatchesInstances) {
  const SceneSpec spec = sample_spec(sample_seed(7, GetParam()), kRes);
  const SceneSample s = render(spec, kRes);
  std::set<int> ids{0};
  for (const auto& o : spec.objects) ids.insert(o.instance);
  ASSERT_GE(spec.objects.size(), 1u);
  ASSERT_LE(spec.objects.size(), 5u);
  const std::size_t plane = static_cast<std::size_t>(kRes) * kRes;
  std::map<int, std::array<float, 3>> color_of;
  for (std::size_t i = 0; i < plane; ++i) {
    ASSERT_TRUE(ids.count(s.instances[i]));
    const std::array<float, 3> rgb = {s.intrinsics.segmentation[i], s.intrinsics.segmentation[plane + i],
                                      s.intrinsics.segmentation[2 * plane + i]};
    auto [it, fresh] = color_of.emplace(s.instances[i], rgb);
    ASSERT_EQ(it->second, rgb);
  }
  std::set<std::array<float, 3>> distinct;
  for (const auto& [id, rgb] : color_of) distinct.insert(rgb);
  EXPECT_EQ(distinct.size(), color_of.size());
}

INSTANTIATE_TEST_SUITE_P(Seeds, SampledScenes, ::testing::Range(0, 24));

TEST(Captions, VocabularyRoundTrip) {
  for (int k = 0; k < 200; ++k) {
    const SceneSpec spec = sample_spec(sample_seed(9, k), kRes);
    const std::string caption = caption_for(spec);
    const auto tokens = tokenize(caption);
    for (int t : tokens) {
      ASSERT_GE(t, 2);
      ASSERT_LT(t, static_cast<int>(vocabulary().size()));
    }
    EXPECT_EQ(detokenize(tokens), caption);
  }
  EXPECT_THROW(tokenize("a purple dodecahedron"), ContractError);
}

TEST(Dataset, ShardChecksumReproducible) {
  const auto dir = std::filesystem::temp_directory_path() / "ildm_scene_test";
  std::filesystem::remove_all(dir);
  save_dataset(generate_dataset(1, 42, kRes), dir / "a");
  save_dataset(generate_dataset(1, 42, kRes), dir / "b");
  for (const char* shard : {kImageShard, kIntrinsicShard}) {
    EXPECT_EQ(file_checksum(dir / "a" / shard), file_checksum(dir / "b" / shard));
  }
  std::filesystem::remove_all(dir);
}

TEST(Dataset, ImageLoaderIgnoresIntrinsicShard) {
  const auto dir = std::filesystem::temp_directory_path() / "ildm_scene_split";
  std::filesystem::remove_all(dir);
  const Dataset d = generate_dataset(3, 8, 32);
  save_dataset(d, dir);
  const Dataset full = load_dataset(dir);
  EXPECT_EQ(full.images, d.images);
  EXPECT_EQ(full.intrinsics, d.intrinsics);
  EXPECT_EQ(full.captions, d.captions);
  std::filesystem::remove(dir / kIntrinsicShard);
  const Dataset images = load_images(dir);
  EXPECT_EQ(images.images, d.images);
  EXPECT_TRUE(images.intrinsics.empty());
  EXPECT_THROW(load_dataset(dir), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Dataset, TrainingShardWithinBudget) {
  const auto start = std::chrono::steady_clock::now();
  const Dataset d = generate_dataset(512, 1, kRes);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_EQ(d.size(), 512);
  EXPECT_LT(seconds, 60.0);
}
