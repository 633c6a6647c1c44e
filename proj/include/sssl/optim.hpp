#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "sssl/encoder.hpp"
#include "sssl/head.hpp"

namespace sssl {

// Encoder plus projection head; both student and teacher have this shape.
template <typename T>
struct Model {
  EncoderParams<T> encoder;
  HeadParams<T> head;

  static Model init(const EncoderConfig& enc, const HeadConfig& head_cfg, Rng& rng) {
    Model m;
    m.encoder = EncoderParams<T>::init(enc, rng);
    m.head = HeadParams<T>::init(enc.model_dim, head_cfg, rng);
    return m;
  }

  NamedTensors<T> named() const {
    auto out = encoder.named();
    for (auto& entry : head.named()) out.push_back(entry);
    return out;
  }

  // Deep copy with fresh storage and no gradient state.
  Model clone() const {
    Model m;
    m.encoder.W_e = encoder.W_e.clone();
    m.encoder.b_e = encoder.b_e.clone();
    for (const auto& b : encoder.blocks)
      m.encoder.blocks.push_back({b.W_s.clone(), b.W_x.clone(), b.W_g.clone(), b.b_g.clone(), b.W_o.clone(),
                                  b.norm_scale.clone(), b.norm_bias.clone()});
    m.head = {head.W_1.clone(), head.W_2.clone(), head.prototypes.clone()};
    return m;
  }
};

// m(t) = m_end - (m_end - m_start) * (cos(pi t / T) + 1) / 2, clamped at t = T.
inline double momentum_schedule(std::size_t step, std::size_t total_steps, double m_start, double m_end) {
  if (total_steps < 1) fail(errc::invalid_argument, "momentum_schedule: total_steps must be >= 1");
  if (!(0.0 <= m_start && m_start <= m_end && m_end <= 1.0))
    fail(errc::invalid_argument, "momentum_schedule: need 0 <= m_start <= m_end <= 1");
  if (step >= total_steps) return m_end;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return m_end - (m_end - m_start) * (std::cos(std::numbers::pi * t) + 1.0) / 2.0;
}

// Linear warmup over the first warmup_frac of steps, cosine decay to zero after.
inline double lr_schedule(std::size_t step, std::size_t total_steps, double base_lr, double warmup_frac) {
  if (total_steps < 1) fail(errc::invalid_argument, "lr_schedule: total_steps must be >= 1");
  const double warmup = std::floor(warmup_frac * static_cast<double>(total_steps));
  const double s = static_cast<double>(step);
  if (s < warmup) return base_lr * (s + 1.0) / warmup;
  const double span = std::max(1.0, static_cast<double>(total_steps) - warmup);
  const double progress = std::min(1.0, (s - warmup) / span);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// xi <- m xi + (1 - m) theta, in place on the teacher storage.
template <typename T>
void ema_update(const NamedTensors<T>& teacher, const NamedTensors<T>& student, double m) {
  if (!(m >= 0.0 && m <= 1.0)) fail(errc::invalid_argument, "ema_update: momentum must lie in [0,1]");
  if (teacher.size() != student.size()) fail(errc::invalid_argument, "ema_update: parameter count differs");
  for (std::size_t i = 0; i < teacher.size(); ++i)
    if (teacher[i].second.shape() != student[i].second.shape())
      fail(errc::invalid_argument, "ema_update: shape mismatch for " + teacher[i].first + ": " +
                                       shape_str(teacher[i].second.shape()) + " vs " +
                                       shape_str(student[i].second.shape()));
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    auto xi = Tensor<T>(teacher[i].second);
    const auto theta = student[i].second.data();
    auto dst = xi.data();
    if (m == 1.0) continue;
    if (m == 0.0) {
      std::copy(theta.begin(), theta.end(), dst.begin());
      continue;
    }
    const T a = static_cast<T>(m), b = static_cast<T>(1.0 - m);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = a * dst[k] + b * theta[k];
  }
}

struct AdamWConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.04;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  std::size_t step = 0;

  static AdamState zeros_like(const NamedTensors<T>& params) {
    AdamState s;
    for (const auto& [name, p] : params) {
      s.m.emplace_back(p.shape());
      s.v.emplace_back(p.shape());
    }
    return s;
  }
};

// Decoupled weight decay, then the bias-corrected Adam update. Parameters
// without a gradient are treated as having a zero gradient.
template <typename T>
void adamw_step(const NamedTensors<T>& params, AdamState<T>& state, const AdamWConfig& cfg) {
  if (!(cfg.lr > 0.0)) fail(errc::invalid_argument, "adamw: lr must be > 0");
  if (state.m.size() != params.size() || state.v.size() != params.size())
    fail(errc::invalid_argument, "adamw: moment buffers do not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i].second;
    if (state.m[i].shape() != p.shape() || state.v[i].shape() != p.shape())
      fail(errc::invalid_shape, "adamw: moment shape mismatch for " + params[i].first);
    if (p.has_grad())
      for (T g : p.grad())
        if (!std::isfinite(static_cast<double>(g)))
          fail(errc::non_finite, "adamw: non-finite gradient in " + params[i].first);
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = Tensor<T>(params[i].second);
    auto w = p.data();
    const bool has = p.has_grad();
    const auto g = p.grad();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = has ? static_cast<double>(g[k]) : 0.0;
      double wk = static_cast<double>(w[k]);
      wk -= cfg.lr * cfg.weight_decay * wk;
      const double mk = cfg.beta1 * static_cast<double>(m[k]) + (1.0 - cfg.beta1) * gk;
      const double vk = cfg.beta2 * static_cast<double>(v[k]) + (1.0 - cfg.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double m_hat = c1 > 0.0 ? mk / c1 : mk;
      const double v_hat = c2 > 0.0 ? vk / c2 : vk;
      const double denom = std::sqrt(v_hat) + cfg.eps;
      if (denom > 0.0) wk -= cfg.lr * m_hat / denom;
      w[k] = static_cast<T>(wk);
    }
  }
}

}  // namespace sssl
