#pragma once

// Binary checkpoint format, version 1. All integers and floats little-endian.
//
//   "NLNS"                        magic
//   u32 version                   = 1
//   u32 model_kind                0 autoencoder, 1 classifier
//   u32 input_c, input_h, input_w
//   u32 encoder_len
//   u32 layer_count
//   u32 echo_len, echo bytes      build configuration as key=value lines
//   layer_count x {
//     u32 kind, u32 units, u32 kernel_size, u32 activation, u32 frozen, u32 in_features,
//     u64 param_offset, u64 weight_count, u64 bias_count     (offsets/counts in floats)
//   }
//   u64 blob_bytes
//   blob                          f32 parameters in layer order, weights then bias
//   u32 crc32 of every preceding byte, header included

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "nanolens/error.hpp"
#include "nanolens/files.hpp"
#include "nanolens/model.hpp"

namespace nanolens {

inline constexpr std::array<char, 4> kCheckpointMagic{'N', 'L', 'N', 'S'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline constexpr std::uint32_t kMaxLayers = 4096;
inline constexpr std::uint32_t kMaxEcho = 1u << 20;
inline constexpr std::uint32_t kMaxExtent = 1u << 20;
inline constexpr std::uint32_t kMaxKernel = 63;

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::size_t size() const { return bytes_.size(); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (n > bytes_.size() - pos_) {
      throw CheckpointError(CheckpointError::Reason::kTruncated,
                            std::string("checkpoint truncated while reading ") + what + " at byte " +
                                std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> data) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks
  std::size_t off = 0;
  while (off < data.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(data.size() - off, 1u << 30));
    crc = ::crc32(crc, data.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline CheckpointError layout_error(const std::string& what) {
  return CheckpointError(CheckpointError::Reason::kLayout, "checkpoint layout: " + what);
}

}  // namespace detail

/// Serializes a model to checkpoint bytes.
inline std::vector<std::uint8_t> serialize_checkpoint(const ModelSpec<float>& model) {
  validate(model);
  detail::ByteWriter w;
  w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(model.kind));
  w.u32(static_cast<std::uint32_t>(model.input_shape.c));
  w.u32(static_cast<std::uint32_t>(model.input_shape.h));
  w.u32(static_cast<std::uint32_t>(model.input_shape.w));
  w.u32(static_cast<std::uint32_t>(model.encoder_len));
  w.u32(static_cast<std::uint32_t>(model.layers.size()));
  w.u32(static_cast<std::uint32_t>(model.config_echo.size()));
  w.raw(model.config_echo.data(), model.config_echo.size());

  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    w.u32(static_cast<std::uint32_t>(l.kind));
    w.u32(static_cast<std::uint32_t>(l.units));
    w.u32(static_cast<std::uint32_t>(l.kernel_size));
    w.u32(static_cast<std::uint32_t>(l.activation));
    w.u32(model.frozen_mask[i] ? 1u : 0u);
    w.u32(static_cast<std::uint32_t>(l.has_params() ? l.weight.shape().c : 0));
    w.u64(offset);
    w.u64(l.weight.size());
    w.u64(l.bias.size());
    offset += l.param_count();
  }

  detail::ByteWriter blob;
  for (const auto& l : model.layers) {
    for (float v : l.weight.data()) blob.f32(v);
    for (float v : l.bias) blob.f32(v);
  }
  w.u64(blob.size());
  w.raw(blob.bytes().data(), blob.size());
  w.u32(detail::crc32_of(w.bytes()));
  return std::move(w.bytes());
}

/// Parses checkpoint bytes. Every failure mode raises CheckpointError.
inline ModelSpec<float> parse_checkpoint(std::span<const std::uint8_t> bytes) {
  using Reason = CheckpointError::Reason;
  detail::ByteReader r(bytes);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic.data(), 4) != 0) {
    throw CheckpointError(Reason::kMagic, "not a checkpoint: bad magic");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(Reason::kVersion, "unsupported checkpoint version " +
                                                std::to_string(version) + " (expected " +
                                                std::to_string(kCheckpointVersion) + ")");
  }
  ModelSpec<float> m;
  const std::uint32_t kind = r.u32("model kind");
  if (kind > 1) throw detail::layout_error("unknown model kind " + std::to_string(kind));
  m.kind = static_cast<ModelKind>(kind);
  const std::uint32_t c = r.u32("input shape");
  const std::uint32_t h = r.u32("input shape");
  const std::uint32_t wd = r.u32("input shape");
  if (c == 0 || h == 0 || wd == 0 || c > detail::kMaxExtent || h > detail::kMaxExtent ||
      wd > detail::kMaxExtent) {
    throw detail::layout_error("implausible input shape");
  }
  m.input_shape = InputShape{c, h, wd};
  m.encoder_len = r.u32("encoder_len");
  const std::uint32_t layer_count = r.u32("layer count");
  if (layer_count == 0 || layer_count > detail::kMaxLayers) {
    throw detail::layout_error("implausible layer count " + std::to_string(layer_count));
  }
  const std::uint32_t echo_len = r.u32("config echo length");
  if (echo_len > detail::kMaxEcho) throw detail::layout_error("config echo too long");
  const auto echo = r.take(echo_len, "config echo");
  m.config_echo.assign(echo.begin(), echo.end());

  struct Entry {
    std::uint32_t in_features;
    std::uint64_t offset, weight_count, bias_count;
  };
  std::vector<Entry> entries(layer_count);
  std::uint64_t expected_offset = 0;
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    const std::uint32_t lk = r.u32("layer table");
    if (lk > static_cast<std::uint32_t>(LayerKind::kDense)) {
      throw CheckpointError(Reason::kLayerKind,
                            "layer " + std::to_string(i) + ": unknown layer kind " +
                                std::to_string(lk) + " for checkpoint format version " +
                                std::to_string(version));
    }
    LayerSpec<float> l;
    l.kind = static_cast<LayerKind>(lk);
    l.units = r.u32("layer table");
    l.kernel_size = r.u32("layer table");
    const std::uint32_t act = r.u32("layer table");
    const std::uint32_t frozen = r.u32("layer table");
    Entry e{};
    e.in_features = r.u32("layer table");
    e.offset = r.u64("layer table");
    e.weight_count = r.u64("layer table");
    e.bias_count = r.u64("layer table");
    const auto label = "layer " + std::to_string(i) + ": ";
    if (act > static_cast<std::uint32_t>(Activation::kSigmoid)) {
      throw detail::layout_error(label + "unknown activation " + std::to_string(act));
    }
    if (frozen > 1) throw detail::layout_error(label + "bad frozen flag");
    l.activation = static_cast<Activation>(act);

    std::uint64_t weight_count = 0;
    if (l.has_params()) {
      if (l.units == 0 || l.units > detail::kMaxExtent || e.in_features == 0 ||
          e.in_features > detail::kMaxExtent) {
        throw detail::layout_error(label + "implausible parameter extents");
      }
      if (l.kind == LayerKind::kConv2D &&
          (l.kernel_size % 2 == 0 || l.kernel_size > detail::kMaxKernel)) {
        throw detail::layout_error(label + "bad kernel size " + std::to_string(l.kernel_size));
      }
      if (l.kind == LayerKind::kDense && l.kernel_size != 1) {
        throw detail::layout_error(label + "dense kernel size must be 1");
      }
      weight_count = std::uint64_t{l.units} * e.in_features * l.kernel_size * l.kernel_size;
    } else if (l.units != 0 || l.kernel_size != 0 || e.in_features != 0) {
      throw detail::layout_error(label + "parameterless layer with extents");
    }
    const std::uint64_t bias_count = l.has_params() ? l.units : 0;
    if (weight_count + bias_count > r.remaining() / 4) {
      throw CheckpointError(Reason::kTruncated, label + "parameters exceed file size");
    }
    if (e.weight_count != weight_count || e.bias_count != bias_count) {
      throw detail::layout_error(label + "declared parameter count does not match shape");
    }
    if (e.offset != expected_offset) throw detail::layout_error(label + "parameter offset gap");
    expected_offset += weight_count + bias_count;
    m.layers.push_back(std::move(l));
    m.frozen_mask.push_back(frozen == 1);
    entries[i] = e;
  }

  const std::uint64_t blob_bytes = r.u64("blob length");
  if (blob_bytes != expected_offset * 4) {
    throw detail::layout_error("blob length " + std::to_string(blob_bytes) + " does not match " +
                               std::to_string(expected_offset) + " declared parameters");
  }
  if (blob_bytes + 4 != r.remaining()) {
    throw CheckpointError(blob_bytes + 4 > r.remaining() ? Reason::kTruncated : Reason::kLayout,
                          "checkpoint size mismatch: " + std::to_string(r.remaining()) +
                              " bytes remain, expected " + std::to_string(blob_bytes + 4));
  }
  const auto blob = r.take(blob_bytes, "parameter blob");
  const std::uint32_t stored_crc = r.u32("crc");
  const std::uint32_t actual_crc = detail::crc32_of(bytes.first(bytes.size() - 4));
  if (stored_crc != actual_crc) {
    throw CheckpointError(Reason::kCrc, "checkpoint CRC mismatch: stored " +
                                            std::to_string(stored_crc) + ", computed " +
                                            std::to_string(actual_crc));
  }

  detail::ByteReader pr(blob);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    auto& l = m.layers[i];
    if (!l.has_params()) continue;
    l.weight = Tensor<float>(Shape{l.units, entries[i].in_features, l.kernel_size, l.kernel_size});
    for (float& v : l.weight.data()) v = std::bit_cast<float>(pr.u32("parameters"));
    l.bias.resize(l.units);
    for (float& v : l.bias) v = std::bit_cast<float>(pr.u32("parameters"));
  }
  try {
    validate(m);
  } catch (const Error& e) {
    throw detail::layout_error(e.what());
  }
  return m;
}

inline void save_checkpoint(const ModelSpec<float>& model, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(model));
}

inline ModelSpec<float> load_checkpoint(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const IoError& e) {
    throw CheckpointError(CheckpointError::Reason::kIo, e.what());
  }
  return parse_checkpoint(bytes);
}

}  // namespace nanolens
