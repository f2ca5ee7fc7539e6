#include <gtest/gtest.h>

#include <bit>

#include "checkpoint_fuzz.hpp"
#include "nanolens/checkpoint.hpp"
#include "test_support.hpp"

namespace nanolens {
namespace {

ModelSpec<float> small_classifier() {
  ClassifierConfig cfg;
  cfg.input_size = 16;
  cfg.conv_channels = {4, 8};
  cfg.hidden_units = 8;
  cfg.num_classes = 3;
  cfg.seed = 5;
  auto m = build_classifier<float>(cfg);
  m.frozen_mask[0] = true;
  m.frozen_mask[2] = true;
  return m;
}

TEST(Checkpoint, RoundTripIsBitwiseIdentity) {
  test::TempDir dir("ckpt");
  for (const auto& m : {small_classifier(), build_autoencoder<float>(AutoencoderConfig{})}) {
    save_checkpoint(m, dir / "m.ckpt");
    const auto loaded = load_checkpoint(dir / "m.ckpt");
    EXPECT_EQ(loaded, m);
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      for (std::size_t j = 0; j < m.layers[i].weight.size(); ++j) {
        EXPECT_EQ(std::bit_cast<std::uint32_t>(loaded.layers[i].weight[j]),
                  std::bit_cast<std::uint32_t>(m.layers[i].weight[j]));
      }
    }
    EXPECT_EQ(serialize_checkpoint(loaded), serialize_checkpoint(m));
  }
}

TEST(Checkpoint, PreservesMarkersAndEcho) {
  const auto m = small_classifier();
  const auto loaded = parse_checkpoint(serialize_checkpoint(m));
  EXPECT_EQ(loaded.frozen_mask, m.frozen_mask);
  EXPECT_EQ(loaded.encoder_len, m.encoder_len);
  EXPECT_EQ(loaded.config_echo, m.config_echo);
  EXPECT_EQ(loaded.kind, ModelKind::kClassifier);
}

TEST(Checkpoint, LayoutStartsWithMagicAndVersion) {
  const auto bytes = serialize_checkpoint(small_classifier());
  ASSERT_GT(bytes.size(), 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "NLNS");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
}

TEST(Checkpoint, FlippedBlobByteFailsCrc) {
  auto bytes = serialize_checkpoint(small_classifier());
  bytes[bytes.size() - 20] ^= 0x01;
  try {
    parse_checkpoint(bytes);
    FAIL() << "corruption not detected";
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.reason(), CheckpointError::Reason::kCrc);
  }
}

// The CRC spans the header too, so a flip in the echo or a frozen flag is caught.
TEST(Checkpoint, EverySingleByteFlipIsRejected) {
  const auto good = serialize_checkpoint(small_classifier());
  for (std::size_t i = 0; i < good.size(); ++i) {
    auto bytes = good;
    bytes[i] ^= 0x40;
    EXPECT_THROW(parse_checkpoint(bytes), CheckpointError) << "byte " << i;
  }
}

TEST(Checkpoint, TruncatedFileIsStructuredError) {
  const auto bytes = serialize_checkpoint(small_classifier());
  for (std::size_t len : {std::size_t{0}, std::size_t{3}, std::size_t{30}, bytes.size() / 2,
                          bytes.size() - 1}) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(len));
    try {
      parse_checkpoint(cut);
      FAIL() << "accepted truncated file of " << len << " bytes";
    } catch (const CheckpointError& e) {
      EXPECT_EQ(e.reason(), CheckpointError::Reason::kTruncated) << e.what();
    }
  }
}

TEST(Checkpoint, VersionMismatchRejected) {
  auto bytes = serialize_checkpoint(small_classifier());
  bytes[4] = 2;
  try {
    parse_checkpoint(bytes);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.reason(), CheckpointError::Reason::kVersion);
  }
}

TEST(Checkpoint, UnknownLayerKindNamesVersion) {
  auto m = small_classifier();
  auto bytes = serialize_checkpoint(m);
  // first layer-table entry follows the fixed header and the echo
  const std::size_t table = 36 + m.config_echo.size();
  bytes[table] = 9;
  try {
    parse_checkpoint(bytes);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.reason(), CheckpointError::Reason::kLayerKind);
    EXPECT_NE(std::string(e.what()).find("version 1"), std::string::npos);
  }
}

TEST(Checkpoint, MissingFileIsIoError) {
  try {
    load_checkpoint("/nonexistent/dir/model.ckpt");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.reason(), CheckpointError::Reason::kIo);
  }
}

TEST(Checkpoint, FuzzedMutationsNeverEscapeAsOtherErrors) {
  const auto good = serialize_checkpoint(small_classifier());
  const auto report = test::fuzz_checkpoint(good, 1000, 77);
  EXPECT_EQ(report.mutations, 1000);
  EXPECT_EQ(report.other_failures, 0);
  EXPECT_GT(report.rejected, 900);
}

}  // namespace
}  // namespace nanolens
