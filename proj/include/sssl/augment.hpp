#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "sssl/image.hpp"
#include "sssl/tensor.hpp"

namespace sssl {

struct CropRect {
  std::size_t y = 0, x = 0, height = 0, width = 0;
  bool operator==(const CropRect&) const = default;
};

using Range = std::pair<double, double>;

// Independent generator for one (seed, epoch, item) triple, so worker
// threads can build views in any order without changing results.
inline Rng item_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t item) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(item),
                    static_cast<std::uint32_t>(item >> 32)};
  return Rng(seq);
}

// Area fraction uniform in `area`, aspect ratio (w/h) uniform in `aspect`;
// ten attempts, then the request is clamped to the image bounds.
inline CropRect sample_crop_rect(std::size_t height, std::size_t width, Range area, Range aspect, Rng& rng) {
  const double total = static_cast<double>(height * width);
  std::uniform_real_distribution<double> area_dist(area.first, area.second);
  std::uniform_real_distribution<double> aspect_dist(aspect.first, aspect.second);
  std::size_t h = 0, w = 0;
  bool found = false;
  for (int attempt = 0; attempt < 10 && !found; ++attempt) {
    const double target = area_dist(rng) * total;
    const double ratio = aspect_dist(rng);
    w = static_cast<std::size_t>(std::lround(std::sqrt(target * ratio)));
    h = static_cast<std::size_t>(std::lround(std::sqrt(target / ratio)));
    found = w >= 1 && h >= 1 && w <= width && h <= height;
  }
  if (!found) {
    w = std::clamp<std::size_t>(w, 1, width);
    h = std::clamp<std::size_t>(h, 1, height);
  }
  std::uniform_int_distribution<std::size_t> ys(0, height - h), xs(0, width - w);
  const std::size_t y = ys(rng);
  const std::size_t x = xs(rng);
  return {y, x, h, w};
}

// Bilinear resample of `rect` to out_size x out_size, sampling at pixel centres.
inline Image resize_crop(const Image& src, const CropRect& rect, std::size_t out_size) {
  Image out(out_size, out_size);
  const double sy = static_cast<double>(rect.height) / static_cast<double>(out_size);
  const double sx = static_cast<double>(rect.width) / static_cast<double>(out_size);
  for (std::size_t oy = 0; oy < out_size; ++oy) {
    const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(rect.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, rect.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out_size; ++ox) {
      const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(rect.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, rect.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = (1 - wx) * src.at(rect.y + y0, rect.x + x0, c) + wx * src.at(rect.y + y0, rect.x + x1, c);
        const double bot = (1 - wx) * src.at(rect.y + y1, rect.x + x0, c) + wx * src.at(rect.y + y1, rect.x + x1, c);
        out.at(oy, ox, c) = static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

inline Image random_resized_crop(const Image& img, std::size_t out_size, Range area, Rng& rng,
                                 Range aspect = {3.0 / 4.0, 4.0 / 3.0}, CropRect* chosen = nullptr) {
  if (img.height < 2 || img.width < 2) fail(errc::invalid_argument, "random_resized_crop: image smaller than 2x2");
  if (out_size < 2) fail(errc::invalid_argument, "random_resized_crop: out_size must be >= 2");
  if (!(area.first > 0.0 && area.first <= area.second && area.second <= 1.0))
    fail(errc::invalid_argument, "random_resized_crop: need 0 < lo <= hi <= 1");
  const CropRect rect = sample_crop_rect(img.height, img.width, area, aspect, rng);
  if (chosen) *chosen = rect;
  return resize_crop(img, rect, out_size);
}

inline void flip_horizontal(Image& img) {
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width / 2; ++x)
      for (std::size_t c = 0; c < 3; ++c) std::swap(img.at(y, x, c), img.at(y, img.width - 1 - x, c));
}

// v <- clamp((v - mean) * contrast + mean + brightness, 0, 1)
inline void jitter(Image& img, double brightness, double contrast) {
  double mean = 0.0;
  for (float v : img.pixels) mean += v;
  mean /= static_cast<double>(img.pixels.size());
  for (float& v : img.pixels)
    v = static_cast<float>(std::clamp((v - mean) * contrast + mean + brightness, 0.0, 1.0));
}

struct ViewConfig {
  std::size_t global_size = 224;
  std::size_t local_size = 96;
  std::size_t global_count = 2;
  std::size_t local_count = 6;
  Range global_area{0.4, 1.0};
  Range local_area{0.05, 0.4};
  double flip_prob = 0.5;
  double jitter_strength = 0.2;
};

struct ViewBatch {
  std::vector<Image> globals;
  std::vector<Image> locals;
  std::uint64_t source_id = 0;
};

inline Image augment_view(const Image& img, std::size_t size, Range area, const ViewConfig& cfg, Rng& rng) {
  Image view = random_resized_crop(img, size, area, rng);
  std::bernoulli_distribution flip(cfg.flip_prob);
  std::uniform_real_distribution<double> delta(-cfg.jitter_strength, cfg.jitter_strength);
  if (flip(rng)) flip_horizontal(view);
  const double brightness = delta(rng);
  const double contrast = 1.0 + delta(rng);
  jitter(view, brightness, contrast);
  return view;
}

inline ViewBatch make_views(const Image& img, Rng& rng, const ViewConfig& cfg = {}, std::uint64_t source_id = 0) {
  ViewBatch batch;
  batch.source_id = source_id;
  for (std::size_t i = 0; i < cfg.global_count; ++i)
    batch.globals.push_back(augment_view(img, cfg.global_size, cfg.global_area, cfg, rng));
  for (std::size_t i = 0; i < cfg.local_count; ++i)
    batch.locals.push_back(augment_view(img, cfg.local_size, cfg.local_area, cfg, rng));
  return batch;
}

}  // namespace sssl
