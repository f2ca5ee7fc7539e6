#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "nanolens/error.hpp"
#include "nanolens/tensor.hpp"

namespace nanolens {

/// 8-bit single-channel raster, row-major.
struct GrayImage8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }

  friend bool operator==(const GrayImage8&, const GrayImage8&) = default;
};

/// Float grayscale raster with values in [0, 1].
struct GrayImageF {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> pixels;

  float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
};

/// Decodes PNG/TIFF/JPEG bytes (gray, RGB or RGBA; 8 or 16 bit) to luminance in [0, 1].
inline GrayImageF decode_grayscale(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw DecodeError("empty image data");
  cv::Mat decoded;
  try {
    const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1,
                      const_cast<std::uint8_t*>(bytes.data()));
    decoded = cv::imdecode(buf, cv::IMREAD_UNCHANGED | cv::IMREAD_ANYDEPTH);
  } catch (const cv::Exception& e) {
    throw DecodeError(std::string("image decode failed: ") + e.what());
  }
  if (decoded.empty() || decoded.dims != 2) throw DecodeError("unrecognized or corrupt image data");

  double scale = 0;
  switch (decoded.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    case CV_32F: scale = 1.0; break;
    default: throw DecodeError("unsupported image sample depth");
  }
  const int channels = decoded.channels();
  if (channels != 1 && channels != 3 && channels != 4) {
    throw DecodeError("unsupported channel count " + std::to_string(channels));
  }
  cv::Mat f;
  decoded.convertTo(f, CV_MAKETYPE(CV_64F, channels), scale);

  GrayImageF img;
  img.width = static_cast<std::size_t>(f.cols);
  img.height = static_cast<std::size_t>(f.rows);
  img.pixels.resize(img.width * img.height);
  for (int y = 0; y < f.rows; ++y) {
    const double* row = f.ptr<double>(y);
    for (int x = 0; x < f.cols; ++x) {
      double v;
      if (channels == 1) {
        v = row[x];
      } else {
        // OpenCV orders colour samples B, G, R
        const double* px = row + static_cast<std::ptrdiff_t>(x) * channels;
        v = 0.299 * px[2] + 0.587 * px[1] + 0.114 * px[0];
      }
      img.pixels[static_cast<std::size_t>(y) * img.width + static_cast<std::size_t>(x)] =
          static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return img;
}

/// Bilinear resampling with half-pixel centres (edge samples clamped).
///
/// Interpolates as a + t*(b - a), so constant images stay exactly constant.
inline GrayImageF resize_bilinear(const GrayImageF& src, std::size_t out_w, std::size_t out_h) {
  if (src.width == 0 || src.height == 0 || out_w == 0 || out_h == 0) {
    throw ConfigError("resize_bilinear: empty extent");
  }
  GrayImageF dst;
  dst.width = out_w;
  dst.height = out_h;
  dst.pixels.resize(out_w * out_h);
  const double sx = static_cast<double>(src.width) / static_cast<double>(out_w);
  const double sy = static_cast<double>(src.height) / static_cast<double>(out_h);
  auto coord = [](double pos, std::size_t extent, std::size_t& i0, std::size_t& i1, double& t) {
    pos = std::clamp(pos, 0.0, static_cast<double>(extent - 1));
    i0 = static_cast<std::size_t>(std::floor(pos));
    i1 = std::min(i0 + 1, extent - 1);
    t = pos - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double ty;
    coord((static_cast<double>(y) + 0.5) * sy - 0.5, src.height, y0, y1, ty);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double tx;
      coord((static_cast<double>(x) + 0.5) * sx - 0.5, src.width, x0, x1, tx);
      const double a = src.at(y0, x0), b = src.at(y0, x1);
      const double c = src.at(y1, x0), d = src.at(y1, x1);
      const double top = a + tx * (b - a);
      const double bottom = c + tx * (d - c);
      dst.pixels[y * out_w + x] = static_cast<float>(top + ty * (bottom - top));
    }
  }
  return dst;
}

/// Decode, convert to luminance, resize to size x size; result shape (1, 1, size, size).
inline Tensor<float> preprocess(std::span<const std::uint8_t> bytes, std::size_t size) {
  if (size == 0) throw ConfigError("preprocess: image size must be positive");
  const GrayImageF img = resize_bilinear(decode_grayscale(bytes), size, size);
  return Tensor<float>(Shape{1, 1, size, size}, img.pixels);
}

inline std::vector<std::uint8_t> encode_png(const GrayImage8& img) {
  if (img.width == 0 || img.height == 0 || img.pixels.size() != img.width * img.height) {
    throw ConfigError("encode_png: inconsistent image extents");
  }
  const cv::Mat m(static_cast<int>(img.height), static_cast<int>(img.width), CV_8UC1,
                  const_cast<std::uint8_t*>(img.pixels.data()));
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", m, out)) throw IoError("PNG encoding failed");
  return out;
}

/// Decodes 8-bit grayscale PNG bytes without any conversion.
inline GrayImage8 decode_png8(std::span<const std::uint8_t> bytes) {
  cv::Mat m;
  try {
    const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1,
                      const_cast<std::uint8_t*>(bytes.data()));
    m = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw DecodeError(std::string("PNG decode failed: ") + e.what());
  }
  if (m.empty() || m.type() != CV_8UC1) throw DecodeError("not an 8-bit grayscale image");
  GrayImage8 img;
  img.width = static_cast<std::size_t>(m.cols);
  img.height = static_cast<std::size_t>(m.rows);
  img.pixels.resize(img.width * img.height);
  for (int y = 0; y < m.rows; ++y) {
    std::copy_n(m.ptr<std::uint8_t>(y), m.cols, img.pixels.begin() + y * m.cols);
  }
  return img;
}

/// Quantizes a [0, 1] plane to 8 bits (round to nearest, clamped).
inline GrayImage8 quantize(std::span<const float> values, std::size_t width, std::size_t height) {
  GrayImage8 img;
  img.width = width;
  img.height = height;
  img.pixels.resize(width * height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const float v = std::clamp(values[i], 0.0f, 1.0f);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return img;
}

}  // namespace nanolens
