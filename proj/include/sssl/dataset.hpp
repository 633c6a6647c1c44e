#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "sssl/augment.hpp"
#include "sssl/image.hpp"

namespace sssl {

struct LabeledDataset {
  std::vector<std::pair<std::string, int>> items;  // (path, class index)
  std::vector<std::string> class_names;

  std::size_t class_count() const { return class_names.size(); }
};

// root/<class_name>/<file>.ppm; class order is lexicographic directory order,
// files within a class are sorted by name.
inline LabeledDataset load_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) fail(errc::io, "dataset directory not found: " + root);
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  LabeledDataset ds;
  for (const auto& dir : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
    if (files.empty()) fail(errc::invalid_dataset, "class '" + dir.filename().string() + "' has no samples");
    std::sort(files.begin(), files.end());
    const int label = static_cast<int>(ds.class_names.size());
    ds.class_names.push_back(dir.filename().string());
    for (const auto& f : files) ds.items.emplace_back(f.string(), label);
  }
  if (ds.class_names.empty()) fail(errc::invalid_dataset, "no class directories under " + root);
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic leaf images: green textured background with round lesions.

struct Blob {
  double cy = 0, cx = 0, radius = 0;
};

struct LeafImage {
  Image image;
  std::vector<Blob> blobs;
};

struct LeafSpec {
  std::size_t size = 64;
  std::size_t blob_count = 1;
  double blob_radius = 8.0;  // pixels, before +-5% jitter
  double hue_drift = 0.1;    // lesion colour change along a random axis
};

// Non-overlapping blobs (at least 2px apart) so they can be counted as
// separate connected components of the lesion mask (red > green).
inline LeafImage make_leaf_image(const LeafSpec& spec, Rng& rng) {
  const double s = static_cast<double>(spec.size);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  LeafImage leaf{Image(spec.size, spec.size), {}};

  // Background: leaf green with low-frequency shading and fine noise.
  const double phase_a = u01(rng) * 2 * std::numbers::pi, phase_b = u01(rng) * 2 * std::numbers::pi;
  const double base_g = 0.50 + 0.08 * u01(rng);
  std::normal_distribution<double> noise(0.0, 0.015);
  for (std::size_t y = 0; y < spec.size; ++y)
    for (std::size_t x = 0; x < spec.size; ++x) {
      const double shade = 0.05 * std::sin(2 * std::numbers::pi * x / s + phase_a) *
                           std::cos(2 * std::numbers::pi * y / s + phase_b);
      leaf.image.at(y, x, 0) = static_cast<float>(std::clamp(0.16 + shade + noise(rng), 0.0, 1.0));
      leaf.image.at(y, x, 1) = static_cast<float>(std::clamp(base_g + shade + noise(rng), 0.0, 1.0));
      leaf.image.at(y, x, 2) = static_cast<float>(std::clamp(0.12 + 0.5 * shade + noise(rng), 0.0, 1.0));
    }

  // Lesion placement by rejection sampling.
  std::uniform_real_distribution<double> radius_jitter(0.95, 1.05);
  for (std::size_t b = 0; b < spec.blob_count; ++b) {
    const double r = std::max(1.5, spec.blob_radius * radius_jitter(rng));
    for (int attempt = 0; attempt < 2000; ++attempt) {
      const double cy = r + 1 + u01(rng) * (s - 2 * r - 2);
      const double cx = r + 1 + u01(rng) * (s - 2 * r - 2);
      bool clear = true;
      for (const auto& other : leaf.blobs)
        if (std::hypot(cy - other.cy, cx - other.cx) < r + other.radius + 3.0) clear = false;
      if (clear) {
        leaf.blobs.push_back({cy, cx, r});
        break;
      }
    }
  }

  // Lesion colour drifts from brown toward yellow along a random axis.
  const double angle = u01(rng) * 2 * std::numbers::pi;
  const double ax = std::cos(angle), ay = std::sin(angle);
  for (const auto& blob : leaf.blobs) {
    const double t = std::clamp(((blob.cx - s / 2) * ax + (blob.cy - s / 2) * ay) / (s / 2), -1.0, 1.0);
    for (std::size_t y = 0; y < spec.size; ++y)
      for (std::size_t x = 0; x < spec.size; ++x) {
        const double d = std::hypot(y + 0.5 - blob.cy, x + 0.5 - blob.cx);
        if (d > blob.radius) continue;
        const double local = t + 0.5 * ((x + 0.5 - blob.cx) * ax + (y + 0.5 - blob.cy) * ay) / blob.radius;
        const double drift = spec.hue_drift * local;
        const double core = 1.0 - 0.35 * d / blob.radius;
        leaf.image.at(y, x, 0) = static_cast<float>(std::clamp((0.55 + drift) * core + 0.1, 0.0, 1.0));
        leaf.image.at(y, x, 1) = static_cast<float>(std::clamp((0.30 + 1.5 * drift) * core, 0.0, 1.0));
        leaf.image.at(y, x, 2) = static_cast<float>(std::clamp(0.08 * core, 0.0, 1.0));
      }
  }
  return leaf;
}

// Class c has c+1 lesions with slowly shrinking radii, so lesion area (and
// with it the mean colour) grows with c; the colour drift also grows with c.
inline LeafSpec class_leaf_spec(std::size_t class_index, std::size_t image_size) {
  const double c = static_cast<double>(class_index);
  LeafSpec spec;
  spec.size = image_size;
  spec.blob_count = class_index + 1;
  spec.blob_radius = static_cast<double>(image_size) * std::max(0.06, 0.11 * (1.0 - 0.05 * c));
  spec.hue_drift = std::min(0.3, 0.05 + 0.05 * c);
  return spec;
}

inline std::string class_dir_name(std::size_t c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "class_%02zu", c);
  return buf;
}

// Writes `classes * per_class` PPM files under root/class_XX/ and returns the
// dataset as it would be loaded back.
inline LabeledDataset synth_dataset(const std::string& root, std::size_t classes, std::size_t per_class,
                                    std::size_t image_size, std::uint64_t seed) {
  namespace fs = std::filesystem;
  if (classes < 2) fail(errc::invalid_argument, "synth: need at least 2 classes");
  if (per_class < 1) fail(errc::invalid_argument, "synth: need at least 1 image per class");
  if (image_size < 16) fail(errc::invalid_argument, "synth: image size must be >= 16");
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root)) fail(errc::io, "cannot create output directory " + root);
  LabeledDataset ds;
  for (std::size_t c = 0; c < classes; ++c) {
    const std::string dir = (fs::path(root) / class_dir_name(c)).string();
    fs::create_directories(dir, ec);
    if (ec) fail(errc::io, "cannot create " + dir);
    ds.class_names.push_back(class_dir_name(c));
    const LeafSpec spec = class_leaf_spec(c, image_size);
    for (std::size_t i = 0; i < per_class; ++i) {
      Rng rng = item_rng(seed, c, i);
      const auto leaf = make_leaf_image(spec, rng);
      char name[32];
      std::snprintf(name, sizeof name, "img_%04zu.ppm", i);
      const std::string path = (fs::path(dir) / name).string();
      save_ppm(leaf.image, path);
      ds.items.emplace_back(path, static_cast<int>(c));
    }
  }
  return ds;
}

// Connected components (4-neighbour) of the lesion mask red > green.
inline std::size_t count_lesions(const Image& img) {
  std::vector<char> seen(img.height * img.width, 0);
  auto lesion = [&](std::size_t y, std::size_t x) { return img.at(y, x, 0) > img.at(y, x, 1); };
  std::size_t count = 0;
  std::vector<std::pair<std::size_t, std::size_t>> stack;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      if (seen[y * img.width + x] || !lesion(y, x)) continue;
      ++count;
      stack.push_back({y, x});
      seen[y * img.width + x] = 1;
      while (!stack.empty()) {
        auto [cy, cx] = stack.back();
        stack.pop_back();
        const std::pair<long, long> steps[] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
        for (auto [dy, dx] : steps) {
          const long ny = static_cast<long>(cy) + dy, nx = static_cast<long>(cx) + dx;
          if (ny < 0 || nx < 0 || ny >= static_cast<long>(img.height) || nx >= static_cast<long>(img.width)) continue;
          const std::size_t idx = static_cast<std::size_t>(ny) * img.width + static_cast<std::size_t>(nx);
          if (seen[idx] || !lesion(ny, nx)) continue;
          seen[idx] = 1;
          stack.push_back({static_cast<std::size_t>(ny), static_cast<std::size_t>(nx)});
        }
      }
    }
  return count;
}

}  // namespace sssl
