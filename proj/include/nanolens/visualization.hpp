#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "nanolens/error.hpp"
#include "nanolens/image_io.hpp"
#include "nanolens/model.hpp"

namespace nanolens {

inline constexpr std::size_t kTileGutter = 2;

/// Tile placement shared by activation grids and filter atlases: ceil(sqrt(n)) columns,
/// row-major, each cell (tile + gutter) wide and tall with the gutter on the right/bottom.
struct GridLayout {
  std::size_t tiles = 0;
  std::size_t tile_w = 0;
  std::size_t tile_h = 0;
  std::size_t gutter = kTileGutter;
  std::size_t cols = 0;
  std::size_t rows = 0;

  static GridLayout make(std::size_t tiles, std::size_t tile_w, std::size_t tile_h,
                         std::size_t gutter = kTileGutter) {
    if (tiles == 0 || tile_w == 0 || tile_h == 0) throw ShapeError("grid needs at least one non-empty tile");
    GridLayout g{tiles, tile_w, tile_h, gutter, 0, 0};
    g.cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(tiles))));
    while (g.cols * g.cols < tiles) ++g.cols;  // guard against sqrt rounding
    while (g.cols > 1 && (g.cols - 1) * (g.cols - 1) >= tiles) --g.cols;
    g.rows = (tiles + g.cols - 1) / g.cols;
    return g;
  }

  std::size_t width() const { return cols * (tile_w + gutter); }
  std::size_t height() const { return rows * (tile_h + gutter); }
  std::size_t origin_x(std::size_t tile) const { return (tile % cols) * (tile_w + gutter); }
  std::size_t origin_y(std::size_t tile) const { return (tile / cols) * (tile_h + gutter); }
};

struct ChannelStats {
  float min = 0;
  float max = 0;
  double mean = 0;
  bool constant() const { return !(max > min); }
};

/// Intermediate activations of one layer rendered as a tile per channel.
struct ActivationGrid {
  std::size_t layer = 0;  // source layer index (depth - 1)
  Shape shape;            // (1, C, H, W) activation shape
  std::vector<std::vector<float>> maps;  // raw per-channel maps, row-major H x W
  std::vector<ChannelStats> stats;
  GridLayout layout;
  GrayImage8 image;

  std::size_t tile_count() const { return maps.size(); }
};

/// Per-channel min-max normalization to [0, 255]; constant channels render 128.
inline std::uint8_t normalize_to_byte(float v, const ChannelStats& s) {
  if (s.constant()) return 128;
  const double t = (static_cast<double>(v) - s.min) / (static_cast<double>(s.max) - s.min);
  return static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
}

/// Inverse of normalize_to_byte, exact up to quantization (half a level of the channel range).
inline float denormalize_byte(std::uint8_t q, const ChannelStats& s) {
  if (s.constant()) return s.min;
  return static_cast<float>(s.min + (static_cast<double>(q) / 255.0) * (static_cast<double>(s.max) - s.min));
}

inline GrayImage8 crop_tile(const GrayImage8& grid, const GridLayout& layout, std::size_t tile) {
  if (tile >= layout.tiles) throw RangeError("tile " + std::to_string(tile) + " outside grid");
  GrayImage8 out{layout.tile_w, layout.tile_h, std::vector<std::uint8_t>(layout.tile_w * layout.tile_h)};
  const std::size_t ox = layout.origin_x(tile), oy = layout.origin_y(tile);
  for (std::size_t y = 0; y < layout.tile_h; ++y) {
    for (std::size_t x = 0; x < layout.tile_w; ++x) out.at(y, x) = grid.at(oy + y, ox + x);
  }
  return out;
}

inline void paste_tile(GrayImage8& grid, const GridLayout& layout, std::size_t tile, const GrayImage8& src) {
  const std::size_t ox = layout.origin_x(tile), oy = layout.origin_y(tile);
  for (std::size_t y = 0; y < layout.tile_h; ++y) {
    for (std::size_t x = 0; x < layout.tile_w; ++x) grid.at(oy + y, ox + x) = src.at(y, x);
  }
}

inline GrayImage8 blank_grid(const GridLayout& layout) {
  return GrayImage8{layout.width(), layout.height(),
                    std::vector<std::uint8_t>(layout.width() * layout.height(), 0)};
}

/// Renders the output of `truncate(model, depth)` for a single image.
inline ActivationGrid extract_activations(const ModelSpec<float>& model, std::size_t depth,
                                          const Tensor<float>& image) {
  if (image.shape().n != 1) {
    throw ShapeError("extract_activations expects a single image, got " + image.shape().str());
  }
  const Tensor<float> act = forward_model(truncate(model, depth), image).back();
  const Shape s = act.shape();

  ActivationGrid g;
  g.layer = depth - 1;
  g.shape = s;
  g.layout = GridLayout::make(s.c, s.w, s.h);
  g.image = blank_grid(g.layout);
  for (std::size_t c = 0; c < s.c; ++c) {
    const auto plane = act.plane(0, c);
    std::vector<float> map(plane.begin(), plane.end());
    ChannelStats st;
    const auto [lo, hi] = std::minmax_element(map.begin(), map.end());
    st.min = *lo;
    st.max = *hi;
    double sum = 0;
    for (float v : map) sum += v;
    st.mean = sum / static_cast<double>(map.size());
    GrayImage8 tile{s.w, s.h, std::vector<std::uint8_t>(map.size())};
    for (std::size_t i = 0; i < map.size(); ++i) tile.pixels[i] = normalize_to_byte(map[i], st);
    paste_tile(g.image, g.layout, c, tile);
    g.maps.push_back(std::move(map));
    g.stats.push_back(st);
  }
  return g;
}

/// Sidecar for a lens grid: `tile_index,layer,filter,score,dead,min,max` (score = channel mean,
/// dead = constant channel).
inline std::string activation_csv(const ActivationGrid& g) {
  std::ostringstream out;
  out.precision(9);
  out << "tile_index,layer,filter,score,dead,min,max\n";
  for (std::size_t c = 0; c < g.stats.size(); ++c) {
    const auto& s = g.stats[c];
    out << c << "," << g.layer << "," << c << "," << s.mean << "," << (s.constant() ? 1 : 0) << ","
        << s.min << "," << s.max << "\n";
  }
  return out.str();
}

enum class AscentInit { kGrayNoise, kZeros };

struct GradientAscentConfig {
  std::size_t steps = 40;
  double step_size = 1.0;  // in 8-bit gray levels: each step moves x by step_size/255 in RMS
  AscentInit init = AscentInit::kGrayNoise;
  double grad_norm_epsilon = 1e-5;
  std::uint64_t seed = 0;
  bool clamp = true;  // keep x in [0, 1] after each step

  void validate() const {
    if (steps < 1) throw ConfigError("gradient ascent needs at least 1 step");
    if (!(step_size > 0.0)) throw ConfigError("gradient ascent step size must be positive");
    if (!(grad_norm_epsilon > 0.0)) throw ConfigError("gradient normalization epsilon must be positive");
  }
};

struct FilterVisualization {
  std::size_t layer = 0;
  std::size_t filter = 0;
  Tensor<float> image;  // (1, C, H, W) synthesized input
  double initial_score = 0;
  double score = 0;             // objective at the returned image
  std::vector<double> history;  // objective before each step and at the end (steps + 1 values)
  bool dead_filter = false;
};

namespace detail {

/// Mean pre-activation of channel `filter` at the last layer of `prefix`, and its input gradient.
struct AscentEval {
  double value = 0;
  Tensor<float> grad;
};

inline AscentEval ascent_objective(const ModelSpec<float>& prefix, std::size_t filter, const Tensor<float>& x) {
  const auto caches = forward_train(prefix, x);
  const Tensor<float>& out = caches.back().output;
  const Shape s = out.shape();
  const auto plane = out.plane(0, filter);
  double sum = 0;
  for (float v : plane) sum += v;
  AscentEval r;
  r.value = sum / static_cast<double>(plane.size());
  Tensor<float> g(s, 0.0f);
  const float w = 1.0f / static_cast<float>(s.h * s.w);
  for (std::size_t i = 0; i < s.h * s.w; ++i) g[g.offset(0, filter, 0, 0) + i] = w;
  r.grad = backward_model(prefix, caches, g).grad_input;
  return r;
}

/// Layers [0, layer] with the last activation replaced by linear, so its output is the
/// pre-activation.
inline ModelSpec<float> ascent_prefix(const ModelSpec<float>& model, std::size_t layer, std::size_t filter) {
  if (layer >= model.layers.size()) {
    throw RangeError("layer " + std::to_string(layer) + " outside valid range [0, " +
                     std::to_string(model.layers.size() - 1) + "]");
  }
  const auto& target = model.layers[layer];
  if (target.kind != LayerKind::kConv2D) {
    throw ConfigError("layer " + std::to_string(layer) + " is " + std::string(to_string(target.kind)) +
                      ", not a Conv2D layer");
  }
  if (filter >= target.units) {
    throw RangeError("filter " + std::to_string(filter) + " outside valid range [0, " +
                     std::to_string(target.units - 1) + "] for layer " + std::to_string(layer));
  }
  ModelSpec<float> p;
  p.kind = model.kind;
  p.input_shape = model.input_shape;
  p.layers.assign(model.layers.begin(), model.layers.begin() + static_cast<std::ptrdiff_t>(layer + 1));
  p.layers.back().activation = Activation::kLinear;
  p.frozen_mask.assign(p.layers.size(), false);
  p.encoder_len = std::min(model.encoder_len, p.layers.size());
  return p;
}

inline Tensor<float> ascent_init(const ModelSpec<float>& model, const GradientAscentConfig& cfg) {
  Tensor<float> x(model.input_shape.batch(1), 0.0f);
  if (cfg.init == AscentInit::kGrayNoise) {
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<float> u(-0.1f, 0.1f);
    for (float& v : x.data()) v = 0.5f + u(rng);
  }
  return x;
}

}  // namespace detail

/// Gradient ascent in input space on the mean pre-activation of one conv filter.
inline FilterVisualization visualize_filter(const ModelSpec<float>& model, std::size_t layer, std::size_t filter,
                                            const GradientAscentConfig& cfg) {
  cfg.validate();
  const ModelSpec<float> prefix = detail::ascent_prefix(model, layer, filter);
  FilterVisualization out;
  out.layer = layer;
  out.filter = filter;
  Tensor<float> x = detail::ascent_init(model, cfg);
  detail::AscentEval e = detail::ascent_objective(prefix, filter, x);
  out.initial_score = e.value;
  out.history.push_back(e.value);
  if (std::all_of(e.grad.data().begin(), e.grad.data().end(), [](float g) { return g == 0.0f; })) {
    out.dead_filter = true;
    out.image = std::move(x);
    out.score = e.value;
    return out;
  }
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    double sq = 0;
    for (float g : e.grad.data()) sq += static_cast<double>(g) * g;
    const double rms = std::sqrt(sq / static_cast<double>(e.grad.size()));
    const auto scale = static_cast<float>(cfg.step_size / 255.0 / (rms + cfg.grad_norm_epsilon));
    auto xs = x.data();
    const auto gs = e.grad.data();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      xs[i] += scale * gs[i];
      if (cfg.clamp) xs[i] = std::clamp(xs[i], 0.0f, 1.0f);
    }
    e = detail::ascent_objective(prefix, filter, x);
    out.history.push_back(e.value);
  }
  out.image = std::move(x);
  out.score = e.value;
  return out;
}

/// Zero mean, std 0.25, shifted to 0.5, clamped and quantized. Constant input maps to 128.
inline GrayImage8 deprocess(const Tensor<float>& x) {
  const Shape s = x.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("deprocess expects (1,1,H,W), got " + s.str());
  const auto v = x.data();
  double mean = 0;
  for (float f : v) mean += f;
  mean /= static_cast<double>(v.size());
  double var = 0;
  for (float f : v) var += (f - mean) * (f - mean);
  const double sd = std::sqrt(var / static_cast<double>(v.size()));
  GrayImage8 img{s.w, s.h, std::vector<std::uint8_t>(v.size())};
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double t = sd > 0 ? (v[i] - mean) / sd * 0.25 + 0.5 : 0.5;
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
  }
  return img;
}

struct FilterAtlas {
  std::size_t layer = 0;
  std::vector<FilterVisualization> filters;
  GridLayout layout;
  GrayImage8 image;

  std::string csv() const {
    std::ostringstream out;
    out.precision(9);
    out << "tile_index,layer,filter,score,dead\n";
    for (std::size_t i = 0; i < filters.size(); ++i) {
      out << i << "," << layer << "," << filters[i].filter << "," << filters[i].score << ","
          << (filters[i].dead_filter ? 1 : 0) << "\n";
    }
    return out.str();
  }
};

/// Per-filter config: filter i uses seed `cfg.seed + i`, so any execution order gives the same bytes.
inline GradientAscentConfig filter_seed_config(const GradientAscentConfig& cfg, std::size_t filter) {
  GradientAscentConfig c = cfg;
  c.seed = cfg.seed + filter;
  return c;
}

inline FilterAtlas assemble_atlas(std::size_t layer, std::vector<FilterVisualization> filters) {
  if (filters.empty()) throw ConfigError("atlas needs at least one filter");
  FilterAtlas atlas;
  atlas.layer = layer;
  const Shape s = filters.front().image.shape();
  atlas.layout = GridLayout::make(filters.size(), s.w, s.h);
  atlas.image = blank_grid(atlas.layout);
  for (std::size_t i = 0; i < filters.size(); ++i) paste_tile(atlas.image, atlas.layout, i, deprocess(filters[i].image));
  atlas.filters = std::move(filters);
  return atlas;
}

/// Synthesizes every filter of conv `layer` and tiles them row-major by filter index.
inline FilterAtlas filter_atlas(const ModelSpec<float>& model, std::size_t layer, const GradientAscentConfig& cfg) {
  detail::ascent_prefix(model, layer, 0);  // validates the layer before any work
  std::vector<FilterVisualization> filters;
  for (std::size_t f = 0; f < model.layers[layer].units; ++f) {
    filters.push_back(visualize_filter(model, layer, f, filter_seed_config(cfg, f)));
  }
  return assemble_atlas(layer, std::move(filters));
}

/// Power spectrum of a mean-removed plane (DC bin is therefore zero).
inline std::vector<double> power_spectrum(std::span<const float> v, std::size_t width, std::size_t height) {
  if (v.size() != width * height || v.empty()) throw ShapeError("power_spectrum: extent mismatch");
  double mean = 0;
  for (float f : v) mean += f;
  mean /= static_cast<double>(v.size());
  cv::Mat m(static_cast<int>(height), static_cast<int>(width), CV_64F);
  for (std::size_t i = 0; i < v.size(); ++i) m.at<double>(static_cast<int>(i / width), static_cast<int>(i % width)) = v[i] - mean;
  cv::Mat spectrum;
  cv::dft(m, spectrum, cv::DFT_COMPLEX_OUTPUT);
  std::vector<double> p(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto c = spectrum.at<cv::Vec2d>(static_cast<int>(i / width), static_cast<int>(i % width));
    p[i] = c[0] * c[0] + c[1] * c[1];
  }
  return p;
}

/// Cosine similarity of two power spectra: a shift-invariant texture match (orientation and
/// frequency content), used to ask which images a synthesized pattern resembles.
inline double spectral_similarity(std::span<const float> a, std::span<const float> b, std::size_t width,
                                  std::size_t height) {
  const auto pa = power_spectrum(a, width, height);
  const auto pb = power_spectrum(b, width, height);
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    dot += pa[i] * pb[i];
    na += pa[i] * pa[i];
    nb += pb[i] * pb[i];
  }
  return na > 0 && nb > 0 ? dot / std::sqrt(na * nb) : 0.0;
}

}  // namespace nanolens
