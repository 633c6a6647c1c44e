#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "sssl/eval.hpp"

using namespace sssl;
namespace fs = std::filesystem;
using T64 = Tensor<double>;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("sssl_eval_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

EncoderConfig small_encoder() {
  EncoderConfig cfg;
  cfg.patch_size = 4;
  cfg.model_dim = 8;
  cfg.state_dim = 6;
  cfg.depth = 2;
  return cfg;
}

Model<double> small_model(std::uint64_t seed, const EncoderConfig& cfg) {
  Rng rng(seed);
  HeadConfig head;
  head.hidden_dim = 8;
  head.proj_dim = 4;
  head.prototypes = 6;
  return Model<double>::init(cfg, head, rng);
}

Image blob_image(std::size_t size, double cy, double cx, double radius) {
  Image img(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const bool in = std::hypot(y + 0.5 - cy, x + 0.5 - cx) <= radius;
      img.at(y, x, 0) = in ? 0.85f : 0.16f;
      img.at(y, x, 1) = in ? 0.35f : 0.52f;
      img.at(y, x, 2) = in ? 0.05f : 0.12f;
    }
  return img;
}

}  // namespace

// ---- entropy monitor -----------------------------------------------------------

TEST(EntropyMonitor, AnalyticValues) {
  EXPECT_NEAR(entropy_monitor(T64({2, 4}, {0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.25})), std::log(4.0), 1e-15);
  EXPECT_EQ(entropy_monitor(T64({2, 3}, {0, 1, 0, 1, 0, 0})), 0.0);
  EXPECT_NEAR(entropy_monitor(T64({1, 4}, {0.5, 0.5, 0, 0})), std::log(2.0), 1e-15);
}

TEST(EntropyMonitor, PermutationInvariantAndValidated) {
  T64 a({1, 4}, {0.1, 0.2, 0.3, 0.4}), b({1, 4}, {0.3, 0.1, 0.4, 0.2});
  EXPECT_NEAR(entropy_monitor(a), entropy_monitor(b), 1e-15);
  EXPECT_THROW(entropy_monitor(T64({1, 2}, {0.5, 0.4})), error);
  EXPECT_THROW(entropy_monitor(T64({1, 2}, {1.5, -0.5})), error);
  EXPECT_THROW(entropy_monitor(T64({4}, {0.25, 0.25, 0.25, 0.25})), error);
}

// ---- linear probe --------------------------------------------------------------

TEST(Probe, SplitIsStratifiedAndSeeded) {
  std::vector<int> labels;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 10; ++i) labels.push_back(c);
  auto a = stratified_split(labels, 3, 0.8, 4), b = stratified_split(labels, 3, 0.8, 4);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.test.size(), 6u);
  EXPECT_EQ(a.train.size(), 24u);
  std::vector<int> per_class(3, 0);
  for (auto i : a.test) per_class[labels[i]]++;
  EXPECT_EQ(per_class, (std::vector<int>{2, 2, 2}));
  EXPECT_NE(stratified_split(labels, 3, 0.8, 5).test, a.test);
}

TEST(Probe, ShuffledLabelsGiveChance) {
  Rng rng(11);
  const std::size_t classes = 4, n = 200;
  std::vector<std::vector<double>> feats(n, std::vector<double>(6));
  std::normal_distribution<double> g(0, 1);
  double total = 0;
  const int trials = 10;
  for (int t = 0; t < trials; ++t) {
    for (auto& f : feats)
      for (auto& v : f) v = g(rng);
    std::vector<int> labels;
    for (std::size_t i = 0; i < n; ++i) labels.push_back(static_cast<int>(i % classes));
    std::shuffle(labels.begin(), labels.end(), rng);
    ProbeConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(t);
    total += linear_probe(feats, labels, classes, cfg);
  }
  EXPECT_NEAR(total / trials, 1.0 / classes, 0.1);
}

TEST(Probe, PixelMeanFeaturesSeparateSynthClasses) {
  auto dir = temp_dir("probe_synth");
  auto ds = synth_dataset(dir.string(), 4, 25, 48, 3);
  std::vector<std::vector<double>> feats;
  std::vector<int> labels;
  for (const auto& [path, label] : ds.items) {
    auto img = load_ppm(path);
    std::vector<double> f(6, 0.0);
    const double n = static_cast<double>(img.height * img.width);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) f[i % 3] += img.pixels[i] / n;
    for (std::size_t i = 0; i < img.pixels.size(); ++i) f[3 + i % 3] += std::pow(img.pixels[i] - f[i % 3], 2) / n;
    feats.push_back(f);
    labels.push_back(label);
  }
  EXPECT_GE(linear_probe(feats, labels, 4), 0.9);
}

TEST(Probe, Errors) {
  std::vector<std::vector<double>> feats(6, std::vector<double>{1.0, 2.0});
  EXPECT_THROW(linear_probe(feats, {0, 0, 0, 2, 2, 2}, 3), error);
  try {
    linear_probe(feats, {0, 0, 0, 2, 2, 2}, 3);
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::invalid_dataset);
  }
  EXPECT_THROW(linear_probe(feats, {0, 0, 0, 0, 0, 0}, 1), error);
  EXPECT_THROW(linear_probe(feats, {0, 1}, 2), error);
}

TEST(Probe, DeterministicFromCheckpoint) {
  auto dir = temp_dir("probe_ckpt");
  synth_dataset((dir / "data").string(), 2, 6, 16, 1);
  TrainConfig cfg;
  cfg.encoder = small_encoder();
  cfg.head.prototypes = 6;
  cfg.views.global_size = 16;
  cfg.views.local_size = 8;
  save_checkpoint(TrainState::init(cfg), (dir / "a.ckpt").string());
  const double a = linear_probe((dir / "a.ckpt").string(), (dir / "data").string());
  const double b = linear_probe((dir / "a.ckpt").string(), (dir / "data").string());
  EXPECT_EQ(a, b);
  EXPECT_GE(a, 0.0);
  EXPECT_LE(a, 1.0);
}

// ---- scaling -------------------------------------------------------------------

TEST(Scaling, FitRecoversPowerLaw) {
  std::vector<double> xs{64, 128, 256, 512, 1024}, ys;
  for (double x : xs) ys.push_back(3.0 * std::pow(x, 1.5));
  auto fit = fit_loglog(xs, ys);
  EXPECT_NEAR(fit.exponent, 1.5, 1e-12);
  EXPECT_NEAR(fit.intercept, std::log(3.0), 1e-10);
  EXPECT_NEAR(fit.r2, 1.0, 1e-12);
  EXPECT_THROW(fit_loglog({1, 1}, {2, 3}), error);
  EXPECT_THROW(fit_loglog({1, 2}, {0, 3}), error);
}

TEST(Scaling, ReportShapeAndCsv) {
  auto report = scaling_benchmark({16, 32, 64, 128}, 8, 8, 5);
  ASSERT_EQ(report.rows.size(), 8u);
  for (const auto& r : report.rows) {
    EXPECT_GT(r.mean_ms, 0.0);
    EXPECT_GE(r.std_ms, 0.0);
    EXPECT_EQ(r.repeats, 5u);
  }
  EXPECT_EQ(report.fits.size(), 2u);
  const auto csv = scaling_csv(report);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "mixer,N,mean_ms,std_ms,median_ms,repeats");
  int data = 0, exponents = 0;
  while (std::getline(in, line)) {
    if (line.rfind("# exponent=", 0) == 0) ++exponents;
    else if (line[0] != '#') ++data;
  }
  EXPECT_EQ(data, 8);
  EXPECT_EQ(exponents, 2);
}

TEST(Scaling, RejectsWeakDesigns) {
  EXPECT_THROW(scaling_benchmark({16, 32, 64}, 8, 8, 5), error);
  EXPECT_THROW(scaling_benchmark({16, 32, 64, 100}, 8, 8, 5), error);
  EXPECT_THROW(scaling_benchmark({16, 32, 64, 128}, 8, 8, 4), error);
}

TEST(Scaling, DoublingRepeatsIsStable) {
  NoGradGuard g;
  Rng rng(1);
  auto block = MambaParams<float>::init(16, 16, rng);
  auto tokens = Tensor<float>::normal({256, 16}, 0, 1, rng);
  auto fn = [&] { ssm_scan(tokens, block); };
  auto a = time_calls(fn, 10, 2);
  auto b = time_calls(fn, 20, 2);
  EXPECT_LE(std::abs(a.mean_ms - b.mean_ms), 2.0 * std::max(a.std_ms, b.std_ms) + 1e-9);
}

// ---- timing report ---------------------------------------------------------------

TEST(TimingReport, MeanStdAndPeak) {
  auto dir = temp_dir("timing");
  std::ofstream(dir / "a.csv") << "epoch,loss,teacher_entropy,momentum,lr,epoch_ms\n"
                               << "1,3.1,2.0,0.996,0.001,100\n2,3.0,2.1,0.997,0.001,200\n3,2.9,2.2,0.998,0.001,300\n"
                               << "# peak_mb=12.5\n";
  fs::copy_file(dir / "a.csv", dir / "b.csv");
  auto rows = epoch_timing_report({(dir / "a.csv").string(), (dir / "b.csv").string()});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].epochs, 3u);
  EXPECT_DOUBLE_EQ(rows[0].mean_ms, 200.0);
  EXPECT_DOUBLE_EQ(rows[0].std_ms, 100.0);
  EXPECT_DOUBLE_EQ(rows[0].peak_mb, 12.5);
  EXPECT_EQ(rows[0].mean_ms, rows[1].mean_ms);
  EXPECT_EQ(rows[0].std_ms, rows[1].std_ms);
  EXPECT_EQ(rows[0].peak_mb, rows[1].peak_mb);
  EXPECT_NE(timing_csv(rows).find("run,epochs,mean_epoch_ms,std_epoch_ms,peak_mb"), std::string::npos);
}

TEST(TimingReport, MalformedRowsNameTheLine) {
  auto message = [](const std::string& text) {
    try {
      parse_metrics_csv(text, "m.csv");
    } catch (const error& e) {
      EXPECT_EQ(e.code(), errc::format);
      return std::string(e.what());
    }
    return std::string("no error");
  };
  const std::string header = "epoch,loss,teacher_entropy,momentum,lr,epoch_ms\n";
  EXPECT_NE(message(header + "1,2,3,4,5,6\n1,2,3\n").find("line 3"), std::string::npos);
  EXPECT_NE(message(header + "1,2,x,4,5,6\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("a,b\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("").find("line 1"), std::string::npos);
}

TEST(TimingReport, ScanMixerEpochsAreCheaperThanAttentionAt196Tokens) {
  auto dir = temp_dir("mixers");
  const auto ssm = mixer_epoch_benchmark(mixer_kind::ssm, 196, 32, 32, 3, 4, (dir / "ssm.csv").string());
  const auto att = mixer_epoch_benchmark(mixer_kind::attention, 196, 32, 32, 3, 4, (dir / "att.csv").string());
  EXPECT_EQ(ssm.epochs.size(), 3u);
  auto rows = epoch_timing_report({(dir / "ssm.csv").string(), (dir / "att.csv").string()});
  EXPECT_LT(rows[0].mean_ms, rows[1].mean_ms);
  EXPECT_GT(rows[0].peak_mb, 0.0);
}

// ---- saliency --------------------------------------------------------------------

TEST(Saliency, ConstantImageWithMemorylessScanIsUniform) {
  auto cfg = small_encoder();
  auto model = small_model(2, cfg);
  for (auto& b : model.encoder.blocks) b.W_s = T64(b.W_s.shape());
  Image flat(16, 16, 0.4f);
  for (const char* target : {"norm", "proto:3"}) {
    auto map = saliency_map(model, cfg, flat, parse_saliency_target(target));
    const auto [lo, hi] = std::minmax_element(map.token_relevance.begin(), map.token_relevance.end());
    EXPECT_LT(*hi - *lo, 1e-6) << target;
    EXPECT_GT(*hi, 0.0);
  }
}

TEST(Saliency, MapShapeRangeAndFiles) {
  auto cfg = small_encoder();
  auto model = small_model(3, cfg);
  auto img = blob_image(24, 8, 14, 3);
  auto rect = Image(16, 24, 0.3f);
  for (std::size_t i = 0; i < rect.pixels.size(); i += 7) rect.pixels[i] = 0.9f;
  for (const auto* source : {&img, &rect}) {
    auto map = saliency_map(model, cfg, *source);
    EXPECT_EQ(map.values.size(), source->height * source->width);
    EXPECT_EQ(map.grid_h * map.grid_w, map.token_relevance.size());
    EXPECT_EQ(*std::max_element(map.values.begin(), map.values.end()), 1.0f);
    EXPECT_EQ(*std::min_element(map.values.begin(), map.values.end()), 0.0f);
  }
  auto dir = temp_dir("saliency");
  auto map = saliency_map(model, cfg, rect);
  write_saliency(map, (dir / "s.pgm").string());
  const auto bytes = slurp(dir / "s.pgm");
  EXPECT_EQ(bytes.substr(0, 13), "P5\n24 16\n255\n");
  EXPECT_EQ(bytes.size(), 13u + 24u * 16u);
  const auto csv = slurp(dir / "s.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 4 * 6);
}

TEST(Saliency, TargetParsingAndErrors) {
  EXPECT_TRUE(parse_saliency_target("norm").pooled_norm);
  auto t = parse_saliency_target("proto:12");
  EXPECT_FALSE(t.pooled_norm);
  EXPECT_EQ(t.prototype, 12u);
  EXPECT_THROW(parse_saliency_target("proto:"), error);
  EXPECT_THROW(parse_saliency_target("proto:x"), error);
  EXPECT_THROW(parse_saliency_target("class:1"), error);
  auto cfg = small_encoder();
  auto model = small_model(4, cfg);
  EXPECT_THROW(saliency_map(model, cfg, Image(10, 12)), error);
  EXPECT_THROW(saliency_map(model, cfg, Image(16, 16, 0.5f), {false, 6}), error);
}
