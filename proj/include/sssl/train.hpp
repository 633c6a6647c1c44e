#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sssl/augment.hpp"
#include "sssl/checkpoint.hpp"
#include "sssl/dataset.hpp"
#include "sssl/head.hpp"
#include "sssl/optim.hpp"

namespace sssl {

struct StepStats {
  double loss = 0.0;
  double teacher_entropy = 0.0;
  double momentum = 0.0;
  double lr = 0.0;
  std::size_t student_encodes = 0;
  std::size_t teacher_encodes = 0;
};

inline std::size_t steps_per_epoch(std::size_t items, std::size_t batch_size) {
  return (items + batch_size - 1) / batch_size;
}

// One optimisation step over a batch of multi-crop views. The student sees
// the second global view and every local view; the teacher sees the first
// global view (or both when teacher_views = 2). Crop ids: globals 0..G-1,
// locals follow.
inline StepStats train_step(const std::vector<ViewBatch>& batch, TrainState& state, std::size_t total_steps) {
  const TrainConfig& cfg = state.cfg;
  if (batch.empty()) fail(errc::invalid_argument, "train_step: empty batch");
  const auto student_params = state.student.named();
  for (auto [name, p] : student_params) {
    p.zero_grad();
    p.set_requires_grad(true);
  }
  StepStats stats;
  stats.lr = lr_schedule(state.step, total_steps, cfg.lr, cfg.warmup);
  stats.momentum = momentum_schedule(state.step, total_steps, cfg.m_start, cfg.m_end);

  std::vector<Tensor<float>> batch_teacher_logits;
  for (const auto& views : batch) {
    if (views.globals.size() < 2) fail(errc::invalid_argument, "train_step: need two global views");
    if (views.globals.size() < cfg.teacher_views) fail(errc::invalid_argument, "train_step: too few global views");
    NoGradGuard no_grad;
    for (std::size_t g = 0; g < cfg.teacher_views; ++g) {
      auto z = encode(views.globals[g], cfg.encoder, state.teacher.encoder).pooled;
      ++stats.teacher_encodes;
      batch_teacher_logits.push_back(teacher_logits(z, state.teacher.head));
    }
  }
  // The center starts at the first batch mean rather than at zero.
  if (state.step == 0) state.center = center_update(state.center, batch_teacher_logits, 0.0);
  {
    Tape tape;
    Tensor<float> total;
    std::size_t next_logits = 0;
    for (const auto& views : batch) {
      std::vector<ViewDist<float>> teachers, students;
      for (std::size_t g = 0; g < cfg.teacher_views; ++g) {
        auto p_t = teacher_dist_from_logits(batch_teacher_logits[next_logits++], state.center, cfg.head);
        stats.teacher_entropy += entropy(p_t);
        teachers.push_back({p_t, static_cast<int>(g)});
      }
      auto add_student = [&](const Image& view, int crop) {
        auto z = encode(view, cfg.encoder, state.student.encoder).pooled;
        ++stats.student_encodes;
        students.push_back({student_dist(z, state.student.head, cfg.head), crop});
      };
      add_student(views.globals[1], 1);
      for (std::size_t l = 0; l < views.locals.size(); ++l)
        add_student(views.locals[l], static_cast<int>(views.globals.size() + l));
      auto item_loss = distill_loss(teachers, students);
      total = total.defined() ? add(total, item_loss) : item_loss;
    }
    auto loss = scale(total, 1.0f / static_cast<float>(batch.size()));
    stats.loss = static_cast<double>(loss.item());
    if (!std::isfinite(stats.loss)) {
      std::ostringstream dump;
      dump << "non-finite loss at step " << state.step << " (lr=" << stats.lr << ", momentum=" << stats.momentum
           << ", batch=" << batch.size() << ")";
      for (const auto& [name, p] : student_params) {
        double mx = 0.0;
        for (float v : p.data()) mx = std::max(mx, std::abs(static_cast<double>(v)));
        dump << "\n  max|" << name << "| = " << mx;
      }
      fail(errc::non_finite, dump.str());
    }
    backward(loss);
  }
  stats.teacher_entropy /= static_cast<double>(batch_teacher_logits.size());

  AdamWConfig opt;
  opt.lr = stats.lr > 0.0 ? stats.lr : std::numeric_limits<double>::min();
  opt.weight_decay = cfg.weight_decay;
  adamw_step(student_params, state.adam, opt);
  for (auto [name, p] : student_params) p.zero_grad();
  ema_update(state.teacher.named(), student_params, stats.momentum);
  state.center = center_update(state.center, batch_teacher_logits, cfg.head.center_momentum);
  ++state.step;
  return stats;
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;
  double teacher_entropy = 0.0;
  double momentum = 0.0;
  double lr = 0.0;
  double epoch_ms = 0.0;
};

inline const char* metrics_header = "epoch,loss,teacher_entropy,momentum,lr,epoch_ms";

inline std::string format_metrics_row(const EpochMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.3f", m.epoch, m.loss, m.teacher_entropy, m.momentum,
                m.lr, m.epoch_ms);
  return buf;
}

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  std::string metrics_path;
  std::string final_checkpoint;
  std::string best_checkpoint;  // empty when no epoch ran
  double peak_mb = 0.0;
};

// Views for every item in `indices`; per-item generators make the result
// independent of whether workers are used.
inline std::vector<ViewBatch> build_views(const std::vector<Image>& images, const std::vector<std::size_t>& indices,
                                          const TrainConfig& cfg, std::size_t epoch) {
  auto one = [&](std::size_t idx) {
    Rng rng = item_rng(cfg.seed, epoch, idx);
    return make_views(images[idx], rng, cfg.views, idx);
  };
  std::vector<ViewBatch> out(indices.size());
  if (cfg.deterministic || cfg.workers <= 1) {
    for (std::size_t i = 0; i < indices.size(); ++i) out[i] = one(indices[i]);
    return out;
  }
  for (std::size_t start = 0; start < indices.size(); start += cfg.workers) {
    std::vector<std::future<ViewBatch>> jobs;
    const std::size_t end = std::min(indices.size(), start + cfg.workers);
    for (std::size_t i = start; i < end; ++i) jobs.push_back(std::async(std::launch::async, one, indices[i]));
    for (std::size_t i = start; i < end; ++i) out[i] = jobs[i - start].get();
  }
  return out;
}

inline std::vector<Image> load_images(const LabeledDataset& ds) {
  std::vector<Image> images;
  images.reserve(ds.items.size());
  for (const auto& [path, label] : ds.items) images.push_back(load_ppm(path));
  return images;
}

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Full pretraining run. Writes <out>/metrics.csv, <out>/final.ckpt and
// <out>/best.ckpt (lowest epoch loss).
inline TrainResult train(const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  namespace fs = std::filesystem;
  const auto dataset = load_dataset(cfg.data);
  const auto images = load_images(dataset);
  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (!fs::is_directory(cfg.out)) fail(errc::io, "cannot create output directory " + cfg.out);

  TrainResult result;
  result.metrics_path = (fs::path(cfg.out) / "metrics.csv").string();
  result.final_checkpoint = (fs::path(cfg.out) / "final.ckpt").string();
  const std::string best_path = (fs::path(cfg.out) / "best.ckpt").string();

  reset_peak_memory();
  const std::size_t base_bytes = tensor_memory().current_bytes;
  TrainState state = TrainState::init(cfg);
  const std::size_t per_epoch = steps_per_epoch(images.size(), cfg.batch_size);
  const std::size_t total_steps = std::max<std::size_t>(1, cfg.epochs * per_epoch);

  std::ofstream metrics(result.metrics_path);
  if (!metrics) fail(errc::io, "cannot write " + result.metrics_path);
  metrics << metrics_header << "\n";

  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(images.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), state.rng);
    EpochMetrics m;
    m.epoch = epoch;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const auto first = order.begin() + static_cast<std::ptrdiff_t>(b * cfg.batch_size);
      const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), (b + 1) * cfg.batch_size));
      const auto batch = build_views(images, std::vector<std::size_t>(first, last), cfg, epoch);
      const auto stats = train_step(batch, state, total_steps);
      m.loss += stats.loss;
      m.teacher_entropy += stats.teacher_entropy;
      m.momentum = stats.momentum;
      m.lr = stats.lr;
    }
    m.loss /= static_cast<double>(per_epoch);
    m.teacher_entropy /= static_cast<double>(per_epoch);
    m.epoch_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    metrics << format_metrics_row(m) << "\n" << std::flush;
    result.epochs.push_back(m);
    if (m.loss < best_loss) {
      best_loss = m.loss;
      save_checkpoint(state, best_path);
      result.best_checkpoint = best_path;
    }
    if (on_epoch) on_epoch(m);
  }
  save_checkpoint(state, result.final_checkpoint);
  const std::size_t peak = tensor_memory().peak_bytes;
  result.peak_mb = static_cast<double>(peak > base_bytes ? peak - base_bytes : 0) / (1024.0 * 1024.0);
  char footer[64];
  std::snprintf(footer, sizeof footer, "# peak_mb=%.3f", result.peak_mb);
  metrics << footer << "\n";
  if (!metrics) fail(errc::io, "write failed for " + result.metrics_path);
  return result;
}

}  // namespace sssl
