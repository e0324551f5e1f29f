#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "histokt/checkpoint.hpp"
#include "histokt/crc32.hpp"
#include "test_util.hpp"

using namespace histokt;

TEST_CASE("crc32 matches known vectors") {
  // "123456789" -> 0xCBF43926 is the standard check value for CRC-32/IEEE.
  CHECK(crc32("123456789", 9) == 0xCBF43926u);
  CHECK(crc32("", 0) == 0x00000000u);
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor(std::vector<std::uint32_t>{}), DataError);
  CHECK_THROWS_AS(Tensor({2, 0, 3}), DataError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f}), DataError);
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.all_finite());
  t.data[4] = std::nanf("");
  CHECK(!t.all_finite());
}

TEST_CASE("checkpoint write/read round-trip is value-identical") {
  auto dir = testutil::scratch_dir("ckpt_roundtrip");
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 99ull}) {
    Checkpoint c = testutil::random_checkpoint(seed);
    const std::string path = dir + "/c.hktw";
    write_checkpoint(c, path);
    Checkpoint loaded = read_checkpoint(path);
    CHECK(loaded == c);
  }
}

TEST_CASE("two serializations of one checkpoint are byte-identical") {
  Checkpoint c = testutil::random_checkpoint(7);
  auto b1 = serialize_checkpoint(c);
  auto b2 = serialize_checkpoint(c);
  CHECK(b1 == b2);
  CHECK(crc32(b1.data(), b1.size()) == crc32(b2.data(), b2.size()));
}

TEST_CASE("non-finite parameter refuses to serialize") {
  Checkpoint c = testutil::random_checkpoint(5);
  c.at("conv1.weight").data[3] = std::nanf("");
  CHECK_THROWS_WITH_AS(serialize_checkpoint(c),
                       "non-finite parameter in layer: conv1.weight", DataError);
  c.at("conv1.weight").data[3] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(serialize_checkpoint(c), DataError);
}

TEST_CASE("single flipped payload byte is caught by the CRC") {
  Checkpoint c = testutil::random_checkpoint(11);
  auto bytes = serialize_checkpoint(c);
  // Flip one byte inside the tensor payload region.
  auto corrupted = bytes;
  corrupted[bytes.size() / 2] ^= 0x01;
  CHECK_THROWS_AS(deserialize_checkpoint(corrupted), DataError);
}

TEST_CASE("every single-byte corruption is detected") {
  Checkpoint tiny;
  tiny.arch_id = "t";
  tiny.class_count = 1;
  tiny.add("w", Tensor({2}, {1.5f, -2.5f}));
  auto bytes = serialize_checkpoint(tiny);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    auto corrupted = bytes;
    corrupted[i] ^= 0xA5;
    CHECK_THROWS_AS(deserialize_checkpoint(corrupted), DataError);
  }
}

TEST_CASE("degenerate files fail with clear errors") {
  CHECK_THROWS_WITH_AS(deserialize_checkpoint({}), "bad magic: not an HKTW checkpoint",
                       DataError);
  std::vector<std::uint8_t> junk = {'P', 'N', 'G', '!', 0, 0, 0, 0};
  CHECK_THROWS_AS(deserialize_checkpoint(junk), DataError);

  // Valid prefix, truncated tail.
  Checkpoint c = testutil::random_checkpoint(13);
  auto bytes = serialize_checkpoint(c);
  bytes.resize(bytes.size() / 2);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), DataError);

  // Unsupported version (re-CRC so the version check is what trips).
  auto v2 = serialize_checkpoint(c);
  v2[4] = 2;
  std::uint32_t crc = crc32(v2.data(), v2.size() - 4);
  for (int i = 0; i < 4; ++i) v2[v2.size() - 4 + i] = (crc >> (8 * i)) & 0xFF;
  CHECK_THROWS_WITH_AS(deserialize_checkpoint(v2), "unsupported HKTW version: 2", DataError);
}

TEST_CASE("read_checkpoint missing file") {
  CHECK_THROWS_AS(read_checkpoint("/nonexistent/path/x.hktw"), IoError);
}

TEST_CASE("assert_compatible") {
  Checkpoint a = testutil::random_checkpoint(21);

  SUBCASE("reflexive") { CHECK_NOTHROW(assert_compatible(a, a)); }

  SUBCASE("same arch, one conv reshaped -> error names the layer") {
    Checkpoint b = testutil::random_checkpoint(22);
    b.at("conv1.weight") = Tensor({3, 3, 5, 2});
    try {
      assert_compatible(a, b);
      FAIL("expected incompatibility");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("conv1.weight") != std::string::npos);
    }
  }

  SUBCASE("different arch_id") {
    Checkpoint b = testutil::random_checkpoint(23);
    b.arch_id = "other-arch";
    CHECK_THROWS_AS(assert_compatible(a, b), DataError);
  }

  SUBCASE("head mismatch allowed only when requested") {
    Checkpoint b = testutil::random_checkpoint(24);
    b.class_count = 7;
    b.at("head.fc.weight") = Tensor({7, 5});
    b.at("head.fc.bias") = Tensor({7});
    CHECK_THROWS_AS(assert_compatible(a, b), DataError);
    CHECK_NOTHROW(assert_compatible(a, b, /*allow_head_mismatch=*/true));
  }

  SUBCASE("missing layer") {
    Checkpoint b;
    b.arch_id = a.arch_id;
    b.class_count = a.class_count;
    b.add("conv1.weight", a.at("conv1.weight"));
    CHECK_THROWS_AS(assert_compatible(a, b), DataError);
  }
}

TEST_CASE("meta strings survive the round-trip") {
  auto dir = testutil::scratch_dir("ckpt_meta");
  Checkpoint c = testutil::random_checkpoint(31);
  c.meta["epoch"] = "17";
  c.meta["val_top1"] = "0.9325";
  c.meta["source"] = "adp-like";
  write_checkpoint(c, dir + "/m.hktw");
  Checkpoint loaded = read_checkpoint(dir + "/m.hktw");
  CHECK(loaded.meta.at("epoch") == "17");
  CHECK(loaded.meta.at("val_top1") == "0.9325");
  CHECK(loaded.meta.at("source") == "adp-like");
}
