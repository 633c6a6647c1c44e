#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "sssl/augment.hpp"
#include "sssl/dataset.hpp"

using namespace sssl;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("sssl_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Image gradient_image(std::size_t h, std::size_t w) {
  Image img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      img.at(y, x, 0) = static_cast<float>(y) / static_cast<float>(h);
      img.at(y, x, 1) = static_cast<float>(x) / static_cast<float>(w);
      img.at(y, x, 2) = 0.5f;
    }
  return img;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

// ---- PPM -------------------------------------------------------------------

TEST(Ppm, SinglePixel) {
  std::string bytes = "P6\n1 1\n255\n";
  bytes += {'\xff', '\x00', '\x00'};
  auto img = decode_ppm(bytes);
  EXPECT_EQ(img.height, 1u);
  EXPECT_EQ(img.width, 1u);
  EXPECT_EQ(img.pixels, (std::vector<float>{1.0f, 0.0f, 0.0f}));
}

TEST(Ppm, CommentsInHeader) {
  std::string bytes = "P6 # made by hand\n2 1 255\n";
  bytes += std::string("\x00\x80\xff\x10\x20\x30", 6);
  auto img = decode_ppm(bytes);
  EXPECT_EQ(img.width, 2u);
  EXPECT_FLOAT_EQ(img.at(0, 0, 1), 128.0f / 255.0f);
}

TEST(Ppm, FormatErrors) {
  auto code_of = [](const std::string& bytes) {
    try {
      decode_ppm(bytes);
    } catch (const error& e) {
      return std::make_pair(e.code(), std::string(e.what()));
    }
    return std::make_pair(errc::io, std::string("no error"));
  };
  auto [c1, m1] = code_of("P5\n1 1\n255\n\x01");
  EXPECT_EQ(c1, errc::format);
  EXPECT_NE(m1.find("byte 0"), std::string::npos);

  auto [c2, m2] = code_of("P6\n2 2\n255\n\x01\x02\x03");
  EXPECT_EQ(c2, errc::format);
  EXPECT_NE(m2.find("truncated"), std::string::npos);

  auto [c3, m3] = code_of("P6\n1 1\n65535\n\x01\x02\x03\x04\x05\x06");
  EXPECT_EQ(c3, errc::format);
  EXPECT_NE(m3.find("maxval"), std::string::npos);

  EXPECT_THROW(load_ppm("/nonexistent/file.ppm"), error);
}

TEST(Ppm, RoundTripOnQuantizedPixels) {
  auto dir = temp_dir("ppm");
  Rng rng(3);
  std::uniform_int_distribution<int> byte(0, 255);
  Image img(5, 7);
  for (auto& v : img.pixels) v = static_cast<float>(byte(rng)) / 255.0f;
  save_ppm(img, (dir / "a.ppm").string());
  EXPECT_EQ(load_ppm((dir / "a.ppm").string()), img);
}

// ---- crops and views ---------------------------------------------------------

TEST(RandomResizedCrop, DegenerateFullArea) {
  auto img = gradient_image(40, 40);
  Rng rng(1);
  CropRect rect;
  auto out = random_resized_crop(img, 20, {1.0, 1.0}, rng, {1.0, 1.0}, &rect);
  EXPECT_EQ(rect, (CropRect{0, 0, 40, 40}));
  EXPECT_EQ(out.height, 20u);
  EXPECT_EQ(out.pixels, resize_crop(img, {0, 0, 40, 40}, 20).pixels);
}

TEST(RandomResizedCrop, SameSizeFullCropIsIdentity) {
  auto img = gradient_image(32, 32);
  Rng rng(2);
  auto out = random_resized_crop(img, 32, {1.0, 1.0}, rng, {1.0, 1.0});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(out.pixels[i], img.pixels[i], 1e-6);
}

TEST(RandomResizedCrop, DeterministicAndInBounds) {
  auto img = gradient_image(50, 70);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng a(seed), b(seed);
    CropRect ra, rb;
    random_resized_crop(img, 8, {0.05, 0.4}, a, {3.0 / 4.0, 4.0 / 3.0}, &ra);
    random_resized_crop(img, 8, {0.05, 0.4}, b, {3.0 / 4.0, 4.0 / 3.0}, &rb);
    EXPECT_EQ(ra, rb);
    EXPECT_GE(ra.height, 1u);
    EXPECT_LE(ra.y + ra.height, img.height);
    EXPECT_LE(ra.x + ra.width, img.width);
  }
}

TEST(RandomResizedCrop, AreaFractionFollowsRange) {
  Rng rng(9);
  double lo = 1, hi = 0;
  for (int i = 0; i < 500; ++i) {
    auto r = sample_crop_rect(200, 200, {0.4, 1.0}, {3.0 / 4.0, 4.0 / 3.0}, rng);
    const double frac = static_cast<double>(r.height * r.width) / 40000.0;
    lo = std::min(lo, frac);
    hi = std::max(hi, frac);
  }
  EXPECT_GT(lo, 0.38);
  EXPECT_LE(hi, 1.0);
  EXPECT_GT(hi, 0.9);
}

TEST(RandomResizedCrop, RejectsBadArguments) {
  Rng rng(0);
  EXPECT_THROW(random_resized_crop(Image(1, 5), 4, {0.5, 1.0}, rng), error);
  EXPECT_THROW(random_resized_crop(Image(8, 8), 1, {0.5, 1.0}, rng), error);
  EXPECT_THROW(random_resized_crop(Image(8, 8), 4, {0.0, 1.0}, rng), error);
  EXPECT_THROW(random_resized_crop(Image(8, 8), 4, {0.6, 0.5}, rng), error);
}

TEST(MakeViews, DefaultCountsAndSizes) {
  auto img = gradient_image(256, 256);
  Rng rng(4);
  auto views = make_views(img, rng);
  ASSERT_EQ(views.globals.size(), 2u);
  ASSERT_EQ(views.locals.size(), 6u);
  for (const auto& g : views.globals) {
    EXPECT_EQ(g.height, 224u);
    EXPECT_EQ(g.width, 224u);
  }
  for (const auto& l : views.locals) {
    EXPECT_EQ(l.height, 96u);
    EXPECT_EQ(l.width, 96u);
  }
}

TEST(MakeViews, PixelsStayInUnitRangeAndRunsReproduce) {
  Image bright(64, 64, 0.98f), dark(64, 64, 0.02f);
  ViewConfig cfg;
  cfg.global_size = 32;
  cfg.local_size = 16;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const Image* src : {&bright, &dark}) {
      Rng a(seed), b(seed);
      auto va = make_views(*src, a, cfg);
      auto vb = make_views(*src, b, cfg);
      for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(va.globals[i], vb.globals[i]);
      for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(va.locals[i], vb.locals[i]);
      for (const auto* group : {&va.globals, &va.locals})
        for (const auto& v : *group)
          for (float p : v.pixels) {
            EXPECT_GE(p, 0.0f);
            EXPECT_LE(p, 1.0f);
          }
    }
  }
}

TEST(MakeViews, ItemRngIsIndependentOfCallOrder) {
  auto a = item_rng(7, 2, 11);
  auto other = item_rng(7, 2, 12);
  other();
  auto b = item_rng(7, 2, 11);
  EXPECT_EQ(a(), b());
  EXPECT_NE(item_rng(7, 2, 11)(), item_rng(7, 3, 11)());
}

// ---- synthetic dataset ---------------------------------------------------------

TEST(Synth, CountsAndLayout) {
  auto dir = temp_dir("synth_counts");
  auto ds = synth_dataset(dir.string(), 2, 5, 32, 1);
  EXPECT_EQ(ds.items.size(), 10u);
  std::size_t files = 0, dirs = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) (e.is_directory() ? dirs : files)++;
  EXPECT_EQ(files, 10u);
  EXPECT_EQ(dirs, 2u);
  auto loaded = load_dataset(dir.string());
  EXPECT_EQ(loaded.items, ds.items);
  EXPECT_EQ(loaded.class_names, (std::vector<std::string>{"class_00", "class_01"}));
}

TEST(Synth, SameSeedIsByteIdentical) {
  auto a = temp_dir("synth_a"), b = temp_dir("synth_b");
  synth_dataset(a.string(), 3, 2, 32, 42);
  synth_dataset(b.string(), 3, 2, 32, 42);
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    auto rel = fs::relative(e.path(), a);
    EXPECT_EQ(file_bytes(e.path()), file_bytes(b / rel)) << rel;
  }
}

TEST(Synth, SeparableByPixelMeanAndBlobCount) {
  // Oracle classifier: nearest class centroid in (blob count, mean RGB) space.
  auto dir = temp_dir("synth_sep");
  auto ds = synth_dataset(dir.string(), 4, 12, 64, 5);
  struct Feat {
    double count, r, g, b;
  };
  std::vector<Feat> feats;
  for (const auto& [path, label] : ds.items) {
    auto img = load_ppm(path);
    Feat f{static_cast<double>(count_lesions(img)), 0, 0, 0};
    for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
      f.r += img.pixels[i];
      f.g += img.pixels[i + 1];
      f.b += img.pixels[i + 2];
    }
    const double n = static_cast<double>(img.pixels.size() / 3);
    f.r /= n;
    f.g /= n;
    f.b /= n;
    feats.push_back(f);
  }
  std::vector<Feat> centroid(4, Feat{0, 0, 0, 0});
  std::vector<int> counts(4, 0);
  for (std::size_t i = 0; i < feats.size(); ++i) {
    auto& c = centroid[ds.items[i].second];
    c.count += feats[i].count;
    c.r += feats[i].r;
    c.g += feats[i].g;
    c.b += feats[i].b;
    counts[ds.items[i].second]++;
  }
  for (int c = 0; c < 4; ++c) {
    centroid[c].count /= counts[c];
    centroid[c].r /= counts[c];
    centroid[c].g /= counts[c];
    centroid[c].b /= counts[c];
  }
  int correct = 0;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < 4; ++c) {
      const double d = std::pow(feats[i].count - centroid[c].count, 2) + std::pow(feats[i].r - centroid[c].r, 2) +
                       std::pow(feats[i].g - centroid[c].g, 2) + std::pow(feats[i].b - centroid[c].b, 2);
      if (d < best_d) best_d = d, best = c;
    }
    correct += best == ds.items[i].second;
  }
  EXPECT_EQ(correct, static_cast<int>(feats.size()));
}

TEST(Synth, ErrorsAndEmptyClass) {
  EXPECT_THROW(synth_dataset(temp_dir("synth_err").string(), 1, 5, 32, 1), error);
  EXPECT_THROW(synth_dataset("/proc/definitely/not/writable", 2, 1, 32, 1), error);
  auto dir = temp_dir("synth_empty");
  synth_dataset(dir.string(), 2, 1, 32, 1);
  fs::create_directories(dir / "class_99");
  try {
    load_dataset(dir.string());
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::invalid_dataset);
  }
}

TEST(Synth, LeafImageBlobsAreCountable) {
  for (std::size_t c = 0; c < 6; ++c) {
    Rng rng(100 + c);
    auto leaf = make_leaf_image(class_leaf_spec(c, 64), rng);
    EXPECT_EQ(leaf.blobs.size(), c + 1);
    EXPECT_EQ(count_lesions(leaf.image), c + 1);
  }
}
