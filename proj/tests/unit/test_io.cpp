#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "ildm/checksum.hpp"
#include "ildm/config.hpp"
#include "ildm/container.hpp"
#include "ildm/error.hpp"
#include "ildm/image_io.hpp"

using namespace ildm;
using namespace ildm::io;

namespace {

TensorContainer sample_container() {
  TensorContainer c;
  c.put("weights", Tensor({2, 3}, std::vector<float>{1, -2, 3.5f, 0, 1e-30f, -0.0f}));
  c.put("scalar", Tensor({1}, std::vector<float>{42}));
  c.put_bytes("ids", {2, 2}, {0, 1, 255, 7});
  c.put_text("meta", "{\"kind\":\"test\"}");
  return c;
}

}  // namespace

TEST(Container, RoundTripIsByteIdentical) {
  const TensorContainer c = sample_container();
  const auto bytes = c.serialize();
  const TensorContainer back = TensorContainer::parse(bytes);
  EXPECT_EQ(back.serialize(), bytes);
  EXPECT_EQ(back.tensor("weights"), c.tensor("weights"));
  EXPECT_EQ(back.bytes("ids"), c.bytes("ids"));
  EXPECT_EQ(back.text("meta"), "{\"kind\":\"test\"}");
  EXPECT_EQ(std::memcmp(bytes.data(), kContainerMagic, 8), 0);
}

TEST(Container, EmptyIsHeaderOnly) {
  const auto bytes = TensorContainer{}.serialize();
  ASSERT_EQ(bytes.size(), 16u);
  EXPECT_EQ(bytes[8], kContainerVersion);
  EXPECT_EQ(TensorContainer::parse(bytes).size(), 0u);
}

TEST(Container, TruncationReportsOffset) {
  const auto bytes = sample_container().serialize();
  for (std::size_t cut : {std::size_t{3}, std::size_t{12}, std::size_t{20}, bytes.size() - 1}) {
    const std::span<const std::uint8_t> part(bytes.data(), cut);
    try {
      TensorContainer::parse(part, "shard.ildm");
      FAIL() << "accepted " << cut << " bytes";
    } catch (const IoError& e) {
      EXPECT_NE(e.message().find("offset"), std::string::npos) << e.message();
      EXPECT_EQ(e.key(), "shard.ildm");
    }
  }
  auto longer = bytes;
  longer.push_back(0);
  EXPECT_THROW(TensorContainer::parse(longer), IoError);
}

TEST(Container, BadMagicAndVersion) {
  auto bytes = sample_container().serialize();
  bytes[0] = 'X';
  try {
    TensorContainer::parse(bytes);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(e.message().find("offset 0"), std::string::npos);
  }
  bytes[0] = 'I';
  bytes[8] = 99;
  EXPECT_THROW(TensorContainer::parse(bytes), IoError);
}

TEST(Container, RejectsDuplicateNames) {
  TensorContainer c;
  c.put("a", Tensor({1}));
  EXPECT_THROW(c.put("a", Tensor({1})), ContractError);
  EXPECT_THROW(c.tensor("missing"), IoError);
  EXPECT_THROW(c.bytes("a"), IoError);
}

TEST(Container, FileRoundTripAndMissingFile) {
  const auto dir = std::filesystem::temp_directory_path() / "ildm_io_test";
  std::filesystem::remove_all(dir);
  const auto path = dir / "nested" / "c.ildm";
  sample_container().save(path);
  EXPECT_EQ(TensorContainer::load(path).serialize(), sample_container().serialize());
  EXPECT_EQ(file_checksum(path).size(), 16u);
  try {
    TensorContainer::load(dir / "absent.ildm");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(e.key().find("absent.ildm"), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST(Checksum, FnvReferenceValues) {
  Fnv1a empty;
  EXPECT_EQ(empty.digest(), 0xcbf29ce484222325ULL);
  Fnv1a a;
  a.update("a");
  EXPECT_EQ(a.digest(), 0xaf63dc4c8601ec8cULL);
  Fnv1a foobar;
  foobar.update("foobar");
  EXPECT_EQ(foobar.hex(), "85944171f73967e8");
}

TEST(Config, DefaultsOverridesAndUnknownKeys) {
  RunConfig c({{"steps", "100", ""}, {"lr", "1e-3", ""}, {"layers", "2,3,4", ""}, {"fixed", "false", ""}});
  c.load_text("# comment\nsteps = 5\n\nlr=0.5\n", "inline");
  EXPECT_EQ(c.integer("steps"), 5);
  EXPECT_DOUBLE_EQ(c.real("lr"), 0.5);
  EXPECT_EQ(c.int_set("layers"), (std::set<int>{2, 3, 4}));
  EXPECT_FALSE(c.flag("fixed"));
  EXPECT_EQ(c.resolved(), "steps = 5\nlr = 0.5\nlayers = 2,3,4\nfixed = false\n");
  try {
    c.load_text("stpes = 3\n", "inline");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "stpes");
  }
  c.set("steps", "many");
  EXPECT_THROW(c.integer("steps"), ConfigError);
  EXPECT_THROW(c.load_text("just words\n", "inline"), ConfigError);
}

TEST(ErrorEnvelope, IsSingleLineJson) {
  const ConfigError e("bad \"value\"", "lr");
  const std::string env = e.envelope();
  EXPECT_EQ(env.find('\n'), std::string::npos);
  EXPECT_NE(env.find("\"category\":\"config\""), std::string::npos) << env;
  EXPECT_NE(env.find("\"key\":\"lr\""), std::string::npos) << env;
}

TEST(Png, EncodesSignatureAndSize) {
  Tensor t({3, 4, 5}, 0.0f);
  const Rgb8 img = to_rgb8(t);
  EXPECT_EQ(img.width, 5);
  EXPECT_EQ(img.height, 4);
  EXPECT_EQ(img.pixels[0], 128);
  const auto png = encode_png(img);
  const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  ASSERT_GT(png.size(), 8u);
  EXPECT_EQ(std::memcmp(png.data(), sig, 8), 0);
  EXPECT_EQ(encode_png(img), png);
  const Rgb8 up = upscale(img, 3);
  EXPECT_EQ(up.width, 15);
  EXPECT_EQ(up.height, 12);
}
