#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "nanolens/error.hpp"
#include "nanolens/files.hpp"
#include "nanolens/image_io.hpp"

namespace nanolens {

namespace fs = std::filesystem;

struct DatasetEntry {
  fs::path path;
  std::size_t label = 0;

  friend bool operator==(const DatasetEntry&, const DatasetEntry&) = default;
};

/// Images of a one-directory-per-class corpus with labels in lexicographic class order.
struct DatasetIndex {
  fs::path root;
  std::vector<std::string> class_names;
  std::vector<DatasetEntry> entries;
  std::vector<std::string> warnings;  // skipped files and dropped classes

  std::size_t class_count() const { return class_names.size(); }
  std::size_t size() const { return entries.size(); }

  friend bool operator==(const DatasetIndex&, const DatasetIndex&) = default;
};

inline bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return ext == ".png" || ext == ".tif" || ext == ".tiff" || ext == ".jpg" || ext == ".jpeg";
}

/// Enumerates `root/<class>/*.{png,tif,tiff,jpg,jpeg}`. Files that fail to decode are skipped
/// and reported in `warnings`; classes left without images are dropped.
inline DatasetIndex ingest_dataset(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw IoError("dataset root is not a directory: " + root.string());
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) class_dirs.push_back(e.path());
  }
  if (class_dirs.empty()) throw IoError("dataset root has no class subdirectories: " + root.string());
  std::sort(class_dirs.begin(), class_dirs.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });

  DatasetIndex index;
  index.root = root;
  for (const auto& dir : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && has_image_extension(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<fs::path> good;
    for (const auto& f : files) {
      try {
        decode_grayscale(read_file_bytes(f));
        good.push_back(f);
      } catch (const Error& err) {
        index.warnings.push_back("skipped " + f.string() + ": " + err.what());
      }
    }
    const std::string name = dir.filename().string();
    if (good.empty()) {
      index.warnings.push_back("dropped class '" + name + "': no decodable images");
      continue;
    }
    const std::size_t label = index.class_names.size();
    index.class_names.push_back(name);
    for (auto& f : good) index.entries.push_back({std::move(f), label});
  }
  if (index.entries.empty()) throw IoError("no decodable images under " + root.string());
  return index;
}

/// Preprocessed tensors and labels for every entry, in index order.
struct LoadedDataset {
  std::vector<Tensor<float>> images;  // each (1, 1, size, size)
  std::vector<std::size_t> labels;
  std::size_t image_size = 0;
};

inline LoadedDataset load_dataset(const DatasetIndex& index, std::size_t image_size) {
  LoadedDataset d;
  d.image_size = image_size;
  d.images.reserve(index.size());
  for (const auto& e : index.entries) {
    try {
      d.images.push_back(preprocess(read_file_bytes(e.path), image_size));
    } catch (const Error& err) {
      throw IoError("failed to load " + e.path.string() + ": " + err.what());
    }
    d.labels.push_back(e.label);
  }
  return d;
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Seeded, disjoint and exhaustive partition of [0, n). Validation is empty only when n == 1.
inline Split split_indices(std::size_t n, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, std::min<std::size_t>(n, 1), n);
  if (n >= 2 && n_train == n) n_train = n - 1;
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return s;
}

}  // namespace nanolens
