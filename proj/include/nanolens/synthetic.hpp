#pragma once

// Procedural texture corpora: vertical stripes vs. dot lattices (a two-class stand-in for
// fibre-like vs. particle-like micrographs) and oriented gratings for surrogate pretraining.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "nanolens/dataset.hpp"
#include "nanolens/files.hpp"
#include "nanolens/image_io.hpp"

namespace nanolens::synthetic {

inline constexpr float kLow = 0.15f;
inline constexpr float kHigh = 0.85f;
inline constexpr float kNoise = 0.02f;

namespace detail {

inline void add_noise(GrayImageF& img, std::mt19937_64& rng, float sigma) {
  std::normal_distribution<float> noise(0.0f, sigma);
  for (float& v : img.pixels) v = std::clamp(v + noise(rng), 0.0f, 1.0f);
}

inline GrayImageF blank(std::size_t size) {
  GrayImageF img;
  img.width = img.height = size;
  img.pixels.assign(size * size, kLow);
  return img;
}

}  // namespace detail

/// Sinusoidal vertical stripes with random period in [size/8, size/4] and random phase.
inline GrayImageF stripes(std::size_t size, std::mt19937_64& rng) {
  const double s = static_cast<double>(size);
  const double period = std::uniform_real_distribution<double>(s / 4.0, s / 2.0)(rng);
  const double phase = std::uniform_real_distribution<double>(0.0, period)(rng);
  GrayImageF img = detail::blank(size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double t = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * (static_cast<double>(x) + phase) / period);
      img.pixels[y * size + x] = kLow + (kHigh - kLow) * static_cast<float>(t);
    }
  }
  detail::add_noise(img, rng, kNoise);
  return img;
}

/// Gaussian dots on a square lattice with random spacing in [size/6, size/4] and offset.
inline GrayImageF dots(std::size_t size, std::mt19937_64& rng) {
  const double s = static_cast<double>(size);
  const double spacing = std::uniform_real_distribution<double>(s / 4.0, s / 3.0)(rng);
  const double ox = std::uniform_real_distribution<double>(0.0, spacing)(rng);
  const double oy = std::uniform_real_distribution<double>(0.0, spacing)(rng);
  const double sigma = spacing / 4.0;
  GrayImageF img = detail::blank(size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      // distance to the nearest lattice point
      const double fx = std::remainder(static_cast<double>(x) - ox, spacing);
      const double fy = std::remainder(static_cast<double>(y) - oy, spacing);
      const double t = std::exp(-(fx * fx + fy * fy) / (2.0 * sigma * sigma));
      img.pixels[y * size + x] = kLow + (kHigh - kLow) * static_cast<float>(t);
    }
  }
  detail::add_noise(img, rng, kNoise);
  return img;
}

inline constexpr double kGratingAngles[] = {0.0, 45.0, 90.0, 135.0};
inline constexpr double kGratingPeriodFractions[] = {1.0 / 8.0, 1.0 / 4.0};  // of image size

/// Oriented sinusoidal grating; class = angle_index * 2 + period_index.
inline GrayImageF grating(std::size_t size, std::size_t cls, std::mt19937_64& rng) {
  const double angle = kGratingAngles[(cls / 2) % 4] * std::numbers::pi / 180.0;
  const double period = kGratingPeriodFractions[cls % 2] * static_cast<double>(size);
  const double phase = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  const double contrast = std::uniform_real_distribution<double>(0.6, 1.0)(rng);
  const double ca = std::cos(angle), sa = std::sin(angle);
  GrayImageF img = detail::blank(size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double u = ca * static_cast<double>(x) + sa * static_cast<double>(y);
      const double t = 0.5 + 0.5 * contrast * std::sin(2.0 * std::numbers::pi * u / period + phase);
      img.pixels[y * size + x] = kLow + (kHigh - kLow) * static_cast<float>(t);
    }
  }
  detail::add_noise(img, rng, kNoise);
  return img;
}

inline std::string grating_class_name(std::size_t cls) {
  return "grating_a" + std::to_string(static_cast<int>(kGratingAngles[(cls / 2) % 4])) + "_p" +
         std::to_string(cls % 2);
}

inline Tensor<float> to_tensor(const GrayImageF& img) {
  return Tensor<float>(Shape{1, 1, img.height, img.width}, img.pixels);
}

/// Writes `root/dots/*.png` and `root/stripes/*.png`, `per_class` images each.
inline void write_stripes_dots_corpus(const std::filesystem::path& root, std::size_t per_class,
                                      std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const char* cls : {"dots", "stripes"}) std::filesystem::create_directories(root / cls);
  for (std::size_t i = 0; i < per_class; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%04zu.png", i);
    const auto s = stripes(size, rng);
    write_file_atomic(root / "stripes" / name,
                      encode_png(quantize(s.pixels, s.width, s.height)));
    const auto d = dots(size, rng);
    write_file_atomic(root / "dots" / name, encode_png(quantize(d.pixels, d.width, d.height)));
  }
}

/// In-memory grating corpus with 8 classes (4 orientations x 2 periods).
inline LoadedDataset grating_corpus(std::size_t per_class, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LoadedDataset d;
  d.image_size = size;
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t cls = 0; cls < 8; ++cls) {
      d.images.push_back(to_tensor(grating(size, cls, rng)));
      d.labels.push_back(cls);
    }
  }
  return d;
}

}  // namespace nanolens::synthetic
