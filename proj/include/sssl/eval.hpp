#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sssl/checkpoint.hpp"
#include "sssl/dataset.hpp"
#include "sssl/encoder.hpp"
#include "sssl/head.hpp"
#include "sssl/train.hpp"

namespace sssl {

// Mean Shannon entropy over the rows of a [B,K] matrix of distributions.
template <typename T>
double entropy_monitor(const Tensor<T>& dists) {
  if (dists.rank() != 2 || dists.dim(0) == 0) fail(errc::invalid_argument, "entropy_monitor: expected [B,K]");
  const std::size_t b = dists.dim(0), k = dists.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    double s = 0.0, h = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double v = static_cast<double>(dists.at(r, i));
      if (!(v >= 0.0)) fail(errc::invalid_argument, "entropy_monitor: row " + std::to_string(r) + " has a negative entry");
      s += v;
      if (v > 0.0) h -= v * std::log(v);
    }
    if (std::abs(s - 1.0) > 1e-6)
      fail(errc::invalid_argument, "entropy_monitor: row " + std::to_string(r) + " does not sum to 1");
    total += h;
  }
  return total / static_cast<double>(b);
}

template <typename U, typename T>
Model<U> cast_model(const Model<T>& m) {
  Model<U> out;
  out.encoder.W_e = m.encoder.W_e.template cast<U>();
  out.encoder.b_e = m.encoder.b_e.template cast<U>();
  for (const auto& b : m.encoder.blocks)
    out.encoder.blocks.push_back({b.W_s.template cast<U>(), b.W_x.template cast<U>(), b.W_g.template cast<U>(),
                                  b.b_g.template cast<U>(), b.W_o.template cast<U>(), b.norm_scale.template cast<U>(),
                                  b.norm_bias.template cast<U>()});
  out.head = {m.head.W_1.template cast<U>(), m.head.W_2.template cast<U>(), m.head.prototypes.template cast<U>()};
  return out;
}

// ---------------------------------------------------------------------------
// Linear probe

struct ProbeConfig {
  std::size_t epochs = 300;
  double lr = 0.5;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
};

// Pooled embeddings from a frozen encoder, one row per image.
inline std::vector<std::vector<double>> extract_features(const EncoderParams<float>& encoder, const EncoderConfig& cfg,
                                                         const std::vector<Image>& images) {
  NoGradGuard no_grad;
  std::vector<std::vector<double>> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    const auto pooled = encode(img, cfg, encoder).pooled;
    out.emplace_back(pooled.data().begin(), pooled.data().end());
  }
  return out;
}

struct ProbeSplit {
  std::vector<std::size_t> train, test;
};

// Per class: shuffle with the seed and hold out round((1 - train_fraction) * n)
// items (at least one when the class has two or more).
inline ProbeSplit stratified_split(const std::vector<int>& labels, std::size_t classes, double train_fraction,
                                   std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      fail(errc::invalid_dataset, "label out of range at item " + std::to_string(i));
    by_class[labels[i]].push_back(i);
  }
  Rng rng(seed);
  ProbeSplit split;
  for (std::size_t c = 0; c < classes; ++c) {
    auto& items = by_class[c];
    if (items.empty()) fail(errc::invalid_dataset, "class " + std::to_string(c) + " has zero samples");
    std::shuffle(items.begin(), items.end(), rng);
    std::size_t n_test = static_cast<std::size_t>(std::lround((1.0 - train_fraction) * items.size()));
    if (items.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, items.size() - 1);
    else n_test = 0;
    split.test.insert(split.test.end(), items.begin(), items.begin() + static_cast<std::ptrdiff_t>(n_test));
    split.train.insert(split.train.end(), items.begin() + static_cast<std::ptrdiff_t>(n_test), items.end());
  }
  return split;
}

// Softmax regression on standardised features, full-batch gradient descent.
// Returns held-out accuracy in [0,1].
inline double linear_probe(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                           std::size_t classes, const ProbeConfig& cfg = {}) {
  if (classes < 2) fail(errc::invalid_dataset, "linear probe needs at least 2 classes");
  if (features.size() != labels.size() || features.empty())
    fail(errc::invalid_argument, "linear probe: features and labels differ in length");
  if (!(cfg.lr > 0.0) || cfg.epochs < 1) fail(errc::invalid_argument, "linear probe: need lr > 0 and epochs >= 1");
  const auto split = stratified_split(labels, classes, cfg.train_fraction, cfg.seed);
  if (split.test.empty()) fail(errc::invalid_dataset, "linear probe: no held-out samples");
  const std::size_t d = features[0].size();

  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (auto i : split.train)
    for (std::size_t j = 0; j < d; ++j) mean[j] += features[i][j];
  for (auto& m : mean) m /= static_cast<double>(split.train.size());
  for (auto i : split.train)
    for (std::size_t j = 0; j < d; ++j) sd[j] += (features[i][j] - mean[j]) * (features[i][j] - mean[j]);
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(split.train.size()));
  auto standardized = [&](std::size_t i) {
    std::vector<double> x(d + 1, 1.0);
    for (std::size_t j = 0; j < d; ++j) x[j] = sd[j] > 1e-12 ? (features[i][j] - mean[j]) / sd[j] : 0.0;
    return x;
  };
  std::vector<std::vector<double>> xtr, xte;
  for (auto i : split.train) xtr.push_back(standardized(i));
  for (auto i : split.test) xte.push_back(standardized(i));

  std::vector<double> w(classes * (d + 1), 0.0), grad(w.size()), probs(classes);
  auto scores = [&](const std::vector<double>& x) {
    for (std::size_t c = 0; c < classes; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j <= d; ++j) s += w[c * (d + 1) + j] * x[j];
      probs[c] = s;
    }
  };
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t n = 0; n < xtr.size(); ++n) {
      scores(xtr[n]);
      const double mx = *std::max_element(probs.begin(), probs.end());
      double z = 0.0;
      for (auto& p : probs) z += (p = std::exp(p - mx));
      for (std::size_t c = 0; c < classes; ++c) {
        const double err = probs[c] / z - (labels[split.train[n]] == static_cast<int>(c) ? 1.0 : 0.0);
        for (std::size_t j = 0; j <= d; ++j) grad[c * (d + 1) + j] += err * xtr[n][j];
      }
    }
    const double step = cfg.lr / static_cast<double>(xtr.size());
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= step * grad[k];
  }
  std::size_t correct = 0;
  for (std::size_t n = 0; n < xte.size(); ++n) {
    scores(xte[n]);
    const auto best = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    correct += best == labels[split.test[n]];
  }
  return static_cast<double>(correct) / static_cast<double>(xte.size());
}

// Probe with the student encoder of a checkpoint.
inline double linear_probe(const TrainState& state, const LabeledDataset& dataset, const ProbeConfig& cfg = {}) {
  std::vector<int> labels;
  for (const auto& item : dataset.items) labels.push_back(item.second);
  const auto features = extract_features(state.student.encoder, state.cfg.encoder, load_images(dataset));
  return linear_probe(features, labels, dataset.class_count(), cfg);
}

inline double linear_probe(const std::string& checkpoint, const std::string& data_dir, const ProbeConfig& cfg = {}) {
  return linear_probe(load_checkpoint(checkpoint), load_dataset(data_dir), cfg);
}

// ---------------------------------------------------------------------------
// Scaling benchmark

struct LogLogFit {
  double exponent = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

// Least squares fit of log(y) = a + b log(x).
inline LogLogFit fit_loglog(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) fail(errc::invalid_argument, "fit_loglog: need >= 2 points");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!(xs[i] > 0.0 && ys[i] > 0.0)) fail(errc::invalid_argument, "fit_loglog: values must be positive");
    lx.push_back(std::log(xs[i]));
    ly.push_back(std::log(ys[i]));
  }
  const double n = static_cast<double>(lx.size());
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n;
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (sxx == 0.0) fail(errc::invalid_argument, "fit_loglog: x values are all equal");
  LogLogFit fit;
  fit.exponent = sxy / sxx;
  fit.intercept = my - fit.exponent * mx;
  double ss_res = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double r = ly[i] - (fit.intercept + fit.exponent * lx[i]);
    ss_res += r * r;
  }
  fit.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  return fit;
}

struct ScalingRow {
  std::string mixer;
  std::size_t tokens = 0;
  double mean_ms = 0, std_ms = 0, median_ms = 0;
  std::size_t repeats = 0;
};

struct ScalingReport {
  std::vector<ScalingRow> rows;
  std::vector<std::pair<std::string, LogLogFit>> fits;
  std::vector<std::string> warnings;

  const LogLogFit& fit(const std::string& mixer) const {
    for (const auto& [name, f] : fits)
      if (name == mixer) return f;
    fail(errc::invalid_argument, "no fit for mixer " + mixer);
  }
  const ScalingRow& row(const std::string& mixer, std::size_t n) const {
    for (const auto& r : rows)
      if (r.mixer == mixer && r.tokens == n) return r;
    fail(errc::invalid_argument, "no row for " + mixer + " at N=" + std::to_string(n));
  }
};

struct TimingSample {
  double mean_ms = 0, std_ms = 0, median_ms = 0, fastest_ms = 0;
};

// Times `fn` `repeats` times after `warmup` untimed calls. Each sample loops
// enough calls to last about a millisecond and reports the per-call time.
template <typename Fn>
TimingSample time_calls(Fn&& fn, std::size_t repeats, std::size_t warmup) {
  using clock = std::chrono::steady_clock;
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::size_t inner = 1;
  for (;;) {
    const auto t0 = clock::now();
    for (std::size_t i = 0; i < inner; ++i) fn();
    const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    if (ms >= 1.0 || inner >= (1u << 20)) break;
    inner *= 2;
  }
  std::vector<double> samples;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = clock::now();
    for (std::size_t i = 0; i < inner; ++i) fn();
    samples.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count() / static_cast<double>(inner));
  }
  TimingSample out;
  const double n = static_cast<double>(samples.size());
  out.mean_ms = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double var = 0;
  for (double s : samples) var += (s - out.mean_ms) * (s - out.mean_ms);
  out.std_ms = samples.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  std::sort(samples.begin(), samples.end());
  const std::size_t mid = samples.size() / 2;
  out.median_ms = samples.size() % 2 ? samples[mid] : 0.5 * (samples[mid - 1] + samples[mid]);
  out.fastest_ms = samples.front() * static_cast<double>(inner);
  return out;
}

// Forward-pass timings of the selective scan and of quadratic attention at
// every token count, with a log-log fit per mixer.
inline ScalingReport scaling_benchmark(std::vector<std::size_t> lengths, std::size_t d, std::size_t ds,
                                       std::size_t repeats, std::uint64_t seed = 0, std::size_t warmup = 2) {
  std::sort(lengths.begin(), lengths.end());
  lengths.erase(std::unique(lengths.begin(), lengths.end()), lengths.end());
  if (lengths.size() < 4) fail(errc::invalid_argument, "scaling benchmark needs >= 4 distinct lengths");
  if (lengths.front() == 0 || lengths.back() < 8 * lengths.front())
    fail(errc::invalid_argument, "scaling benchmark lengths must span at least 8x");
  if (repeats < 5) fail(errc::invalid_argument, "scaling benchmark needs >= 5 repeats");
  if (d < 1 || ds < 1) fail(errc::invalid_argument, "scaling benchmark dims must be >= 1");

  NoGradGuard no_grad;
  Rng rng(seed);
  const auto block = MambaParams<float>::init(d, ds, rng);
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  const auto W_q = Tensor<float>::normal({d, d}, 0, s, rng);
  const auto W_k = Tensor<float>::normal({d, d}, 0, s, rng);
  const auto W_v = Tensor<float>::normal({d, d}, 0, s, rng);

  ScalingReport report;
  double fastest = std::numeric_limits<double>::infinity();
  for (const char* mixer : {"ssm", "attention"}) {
    std::vector<double> ns, ms;
    for (std::size_t n : lengths) {
      const auto tokens = Tensor<float>::normal({n, d}, 0, 1, rng);
      const bool ssm = std::string(mixer) == "ssm";
      const auto sample = time_calls(
          [&] {
            if (ssm)
              ssm_scan(tokens, block);
            else
              attention_reference(tokens, W_q, W_k, W_v);
          },
          repeats, warmup);
      report.rows.push_back({mixer, n, sample.mean_ms, sample.std_ms, sample.median_ms, repeats});
      fastest = std::min(fastest, sample.fastest_ms);
      ns.push_back(static_cast<double>(n));
      ms.push_back(sample.mean_ms);
    }
    report.fits.emplace_back(mixer, fit_loglog(ns, ms));
  }
  const double tick_ms = 1e3 * static_cast<double>(std::chrono::steady_clock::period::num) /
                         static_cast<double>(std::chrono::steady_clock::period::den);
  if (tick_ms > 0.01 * fastest) report.warnings.push_back("unreliable-timing: clock resolution exceeds 1% of fastest sample");
  return report;
}

inline std::string scaling_csv(const ScalingReport& report) {
  std::ostringstream os;
  os << "mixer,N,mean_ms,std_ms,median_ms,repeats\n";
  char buf[256];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.6f,%.6f,%.6f,%zu\n", r.mixer.c_str(), r.tokens, r.mean_ms, r.std_ms,
                  r.median_ms, r.repeats);
    os << buf;
  }
  for (const auto& [mixer, fit] : report.fits) {
    std::snprintf(buf, sizeof buf, "# exponent=%.4f r2=%.4f\n", fit.exponent, fit.r2);
    os << "# mixer=" << mixer << "\n" << buf;
  }
  for (const auto& w : report.warnings) os << "# warning: " << w << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Epoch timing report

struct MetricsFile {
  std::vector<EpochMetrics> rows;
  double peak_mb = 0.0;
  bool has_peak = false;
};

inline MetricsFile parse_metrics_csv(const std::string& text, const std::string& name = "<metrics>") {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  MetricsFile out;
  auto bad = [&](const std::string& why) {
    fail(errc::format, name + " line " + std::to_string(line_no) + ": " + why);
  };
  if (!std::getline(in, line)) {
    line_no = 1;
    bad("missing header");
  }
  ++line_no;
  if (detail::trim(line) != metrics_header) bad("unexpected header '" + line + "'");
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# peak_mb=", 0) == 0) {
        out.peak_mb = detail::parse_number<double>("peak_mb", line.substr(10));
        out.has_peak = true;
      }
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(detail::trim(cell));
    if (cells.size() != 6) bad("expected 6 fields, got " + std::to_string(cells.size()));
    EpochMetrics m;
    try {
      m.epoch = detail::parse_number<std::size_t>("epoch", cells[0]);
      m.loss = detail::parse_number<double>("loss", cells[1]);
      m.teacher_entropy = detail::parse_number<double>("teacher_entropy", cells[2]);
      m.momentum = detail::parse_number<double>("momentum", cells[3]);
      m.lr = detail::parse_number<double>("lr", cells[4]);
      m.epoch_ms = detail::parse_number<double>("epoch_ms", cells[5]);
    } catch (const error& e) {
      bad(e.what());
    }
    out.rows.push_back(m);
  }
  return out;
}

struct TimingRow {
  std::string run;
  std::size_t epochs = 0;
  double mean_ms = 0, std_ms = 0, peak_mb = 0;
};

inline TimingRow summarize_metrics(const MetricsFile& file, const std::string& run) {
  TimingRow row;
  row.run = run;
  row.epochs = file.rows.size();
  row.peak_mb = file.peak_mb;
  if (file.rows.empty()) return row;
  for (const auto& m : file.rows) row.mean_ms += m.epoch_ms;
  row.mean_ms /= static_cast<double>(row.epochs);
  double var = 0;
  for (const auto& m : file.rows) var += (m.epoch_ms - row.mean_ms) * (m.epoch_ms - row.mean_ms);
  row.std_ms = row.epochs > 1 ? std::sqrt(var / static_cast<double>(row.epochs - 1)) : 0.0;
  return row;
}

inline std::vector<TimingRow> epoch_timing_report(const std::vector<std::string>& paths) {
  std::vector<TimingRow> rows;
  for (const auto& p : paths) rows.push_back(summarize_metrics(parse_metrics_csv(detail::read_file_bytes(p), p), p));
  return rows;
}

inline std::string timing_csv(const std::vector<TimingRow>& rows) {
  std::ostringstream os;
  os << "run,epochs,mean_epoch_ms,std_epoch_ms,peak_mb\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%zu,%.3f,%.3f,%.3f\n", r.epochs, r.mean_ms, r.std_ms, r.peak_mb);
    os << r.run << buf;
  }
  return os.str();
}

enum class mixer_kind { ssm, attention };

// Trains one token mixer (a gated-scan block or a single attention layer)
// to regress a fixed random target on N tokens and writes a metrics CSV in
// the pretraining format. Used to compare per-epoch cost at equal settings.
inline TrainResult mixer_epoch_benchmark(mixer_kind kind, std::size_t tokens, std::size_t d, std::size_t ds,
                                         std::size_t epochs, std::size_t steps, const std::string& metrics_path,
                                         std::uint64_t seed = 0) {
  Rng rng(seed);
  const auto x = Tensor<float>::normal({tokens, d}, 0, 1, rng);
  const auto target = Tensor<float>::normal({tokens, d}, 0, 1, rng);
  auto block = MambaParams<float>::init(d, ds, rng);
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  NamedTensors<float> params;
  Tensor<float> W_q, W_k, W_v;
  if (kind == mixer_kind::ssm) {
    block.collect("", params);
  } else {
    W_q = Tensor<float>::normal({d, d}, 0, s, rng);
    W_k = Tensor<float>::normal({d, d}, 0, s, rng);
    W_v = Tensor<float>::normal({d, d}, 0, s, rng);
    params = {{"W_q", W_q}, {"W_k", W_k}, {"W_v", W_v}};
  }
  for (auto [name, p] : params) p.set_requires_grad(true);
  auto state = AdamState<float>::zeros_like(params);
  AdamWConfig opt;
  opt.lr = 1e-3;
  opt.weight_decay = 0.0;

  std::ofstream out(metrics_path);
  if (!out) fail(errc::io, "cannot write " + metrics_path);
  out << metrics_header << "\n";
  reset_peak_memory();
  const std::size_t base = tensor_memory().current_bytes;
  TrainResult result;
  result.metrics_path = metrics_path;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = opt.lr;
    for (std::size_t step = 0; step < steps; ++step) {
      for (auto [name, p] : params) p.zero_grad();
      Tape tape;
      auto y = kind == mixer_kind::ssm ? mamba_block(x, block, true) : attention_reference(x, W_q, W_k, W_v);
      auto diff = sub(y, target);
      auto loss = scale(sum(mul(diff, diff)), 1.0f / static_cast<float>(diff.numel()));
      m.loss += static_cast<double>(loss.item()) / static_cast<double>(steps);
      backward(loss);
      adamw_step(params, state, opt);
    }
    m.epoch_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    out << format_metrics_row(m) << "\n";
    result.epochs.push_back(m);
  }
  const std::size_t peak = tensor_memory().peak_bytes;
  result.peak_mb = static_cast<double>(peak > base ? peak - base : 0) / (1024.0 * 1024.0);
  char footer[64];
  std::snprintf(footer, sizeof footer, "# peak_mb=%.3f", result.peak_mb);
  out << footer << "\n";
  return result;
}

// ---------------------------------------------------------------------------
// Saliency

struct SaliencyTarget {
  bool pooled_norm = true;
  std::size_t prototype = 0;
};

// "norm" or "proto:I".
inline SaliencyTarget parse_saliency_target(const std::string& text) {
  if (text == "norm") return {};
  if (text.rfind("proto:", 0) == 0 && text.size() > 6)
    return {false, detail::parse_number<std::size_t>("target", text.substr(6))};
  fail(errc::invalid_argument, "saliency target must be 'norm' or 'proto:I', got '" + text + "'");
}

struct SaliencyMap {
  std::size_t height = 0, width = 0;
  std::vector<float> values;  // [height*width], min-max normalised
  std::size_t grid_h = 0, grid_w = 0;
  std::vector<double> token_relevance;  // raw, raster order

  std::size_t argmax_token() const {
    return static_cast<std::size_t>(std::max_element(token_relevance.begin(), token_relevance.end()) -
                                    token_relevance.begin());
  }
};

// Gradient x activation on the final token features Z: relevance of token n
// is sum_c |d(target)/dZ[n,c] * Z[n,c]|, bilinearly upsampled to the image.
inline SaliencyMap saliency_map(const Model<double>& model, const EncoderConfig& cfg, const Image& img,
                                const SaliencyTarget& target = {}) {
  const std::size_t p = cfg.patch_size;
  if (img.height % p || img.width % p) fail(errc::invalid_shape, "saliency: image size not divisible by patch size");
  if (!target.pooled_norm && target.prototype >= model.head.prototypes.dim(0))
    fail(errc::invalid_argument, "saliency: prototype index out of range");
  Tensor<double> Z;
  {
    NoGradGuard no_grad;
    Z = encode(img, cfg, model.encoder).Z;
  }
  auto leaf = Z.detach().set_requires_grad(true);
  {
    Tape tape;
    auto pooled = cfg.pool == pooling::mean ? mean_rows(leaf) : row(leaf, leaf.dim(0) - 1);
    Tensor<double> value;
    if (target.pooled_norm) {
      value = exp(scale(log(sum(mul(pooled, pooled))), 0.5));
    } else {
      auto logits = prototype_logits(project(pooled, model.head), model.head);
      Tensor<double> pick(logits.shape());
      pick[target.prototype] = 1.0;
      value = sum(mul(logits, pick));
    }
    backward(value);
  }
  SaliencyMap map;
  map.height = img.height;
  map.width = img.width;
  map.grid_h = img.height / p;
  map.grid_w = img.width / p;
  const std::size_t n = Z.dim(0), d = Z.dim(1);
  map.token_relevance.assign(n, 0.0);
  if (leaf.has_grad()) {
    const auto g = leaf.grad();
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t c = 0; c < d; ++c) map.token_relevance[t] += std::abs(g[t * d + c] * Z[t * d + c]);
  }

  std::vector<double> up(img.height * img.width);
  const auto gh = static_cast<double>(map.grid_h), gw = static_cast<double>(map.grid_w);
  for (std::size_t y = 0; y < img.height; ++y) {
    const double fy = std::clamp((y + 0.5) / static_cast<double>(p) - 0.5, 0.0, gh - 1.0);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, map.grid_h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < img.width; ++x) {
      const double fx = std::clamp((x + 0.5) / static_cast<double>(p) - 0.5, 0.0, gw - 1.0);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, map.grid_w - 1);
      const double wx = fx - static_cast<double>(x0);
      auto at = [&](std::size_t r, std::size_t c) { return map.token_relevance[r * map.grid_w + c]; };
      up[y * img.width + x] =
          (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) + wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
    }
  }
  const auto [lo, hi] = std::minmax_element(up.begin(), up.end());
  const double range = *hi - *lo;
  map.values.resize(up.size());
  for (std::size_t i = 0; i < up.size(); ++i)
    map.values[i] = range > 0.0 ? static_cast<float>((up[i] - *lo) / range) : 0.0f;
  return map;
}

inline SaliencyMap saliency_map(const TrainState& state, const Image& img, const SaliencyTarget& target = {}) {
  return saliency_map(cast_model<double>(state.student), state.cfg.encoder, img, target);
}

// Writes the map as P5 and the raw token relevances as <path>.csv.
inline void write_saliency(const SaliencyMap& map, const std::string& pgm_path) {
  save_pgm(map.values, map.height, map.width, pgm_path);
  std::ostringstream os;
  os << "row,col,relevance\n";
  char buf[96];
  for (std::size_t r = 0; r < map.grid_h; ++r)
    for (std::size_t c = 0; c < map.grid_w; ++c) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g\n", r, c, map.token_relevance[r * map.grid_w + c]);
      os << buf;
    }
  detail::write_file_bytes(std::filesystem::path(pgm_path).replace_extension(".csv").string(), os.str());
}

}  // namespace sssl
