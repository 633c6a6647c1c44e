#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sssl/encoder.hpp"
#include "sssl/ops.hpp"

namespace sssl {

struct HeadConfig {
  std::size_t hidden_dim = 64;  // d_h
  std::size_t proj_dim = 32;    // d_p
  std::size_t prototypes = 64;  // K
  double student_temp = 0.1;
  double teacher_temp = 0.04;
  double center_momentum = 0.9;
  bool centering = true;

  void validate() const {
    if (hidden_dim < 1 || proj_dim < 1) fail(errc::invalid_argument, "head dims must be >= 1");
    if (prototypes < 2) fail(errc::invalid_argument, "need at least 2 prototypes");
    if (!(student_temp > 0.0) || !(teacher_temp > 0.0))
      fail(errc::invalid_argument, "temperatures must be > 0");
    if (teacher_temp > student_temp)
      fail(errc::invalid_argument, "teacher temperature must not exceed student temperature");
    if (!(center_momentum >= 0.0 && center_momentum < 1.0))
      fail(errc::invalid_argument, "center momentum must lie in [0,1)");
  }

  std::string canonical() const {
    return "hidden_dim=" + std::to_string(hidden_dim) + ";proj_dim=" + std::to_string(proj_dim) +
           ";prototypes=" + std::to_string(prototypes);
  }
};

// Projection weights and prototype matrix. No biases: h(z) = W_2 sigmoid(W_1 z).
template <typename T>
struct HeadParams {
  Tensor<T> W_1;         // [d_h, d]
  Tensor<T> W_2;         // [d_p, d_h]
  Tensor<T> prototypes;  // [K, d_p]

  static HeadParams init(std::size_t model_dim, const HeadConfig& cfg, Rng& rng) {
    cfg.validate();
    HeadParams h;
    h.W_1 = Tensor<T>::normal({cfg.hidden_dim, model_dim}, 0.0, 1.0 / std::sqrt(double(model_dim)), rng);
    h.W_2 = Tensor<T>::normal({cfg.proj_dim, cfg.hidden_dim}, 0.0, 1.0 / std::sqrt(double(cfg.hidden_dim)), rng);
    h.prototypes = Tensor<T>::normal({cfg.prototypes, cfg.proj_dim}, 0.0, 1.0, rng);
    return h;
  }

  NamedTensors<T> named() const {
    return {{"head.W_1", W_1}, {"head.W_2", W_2}, {"head.prototypes", prototypes}};
  }
};

// W_2 * sigmoid(W_1 z) for a pooled embedding z [d]; returns [d_p].
template <typename T>
Tensor<T> project(const Tensor<T>& z, const HeadParams<T>& head) {
  auto zr = reshape(z, {1, z.numel()});
  auto hidden = sigmoid(matmul_nt(zr, head.W_1));
  auto out = matmul_nt(hidden, head.W_2);
  return reshape(out, {out.numel()});
}

// Cosine similarity to every prototype row; values in [-1, 1]. Returns [K].
template <typename T>
Tensor<T> prototype_logits(const Tensor<T>& v, const HeadParams<T>& head) {
  auto unit = normalize_rows(reshape(v, {1, v.numel()}));
  auto protos = normalize_rows(head.prototypes);
  auto logits = matmul_nt(unit, protos);
  return reshape(logits, {logits.numel()});
}

template <typename T>
Tensor<T> student_dist(const Tensor<T>& z, const HeadParams<T>& head, const HeadConfig& cfg) {
  return softmax(prototype_logits(project(z, head), head), static_cast<T>(cfg.student_temp));
}

// Teacher logits before centering, computed without recording.
template <typename T>
Tensor<T> teacher_logits(const Tensor<T>& z, const HeadParams<T>& head) {
  NoGradGuard no_grad;
  return prototype_logits(project(z.detach(), head), head);
}

template <typename T>
Tensor<T> teacher_dist_from_logits(const Tensor<T>& logits, const Tensor<T>& center, const HeadConfig& cfg) {
  NoGradGuard no_grad;
  const Tensor<T> shifted = cfg.centering ? sub(logits, center) : logits.detach();
  return softmax(shifted, static_cast<T>(cfg.teacher_temp));
}

template <typename T>
Tensor<T> teacher_dist(const Tensor<T>& z, const HeadParams<T>& head, const HeadConfig& cfg, const Tensor<T>& center) {
  return teacher_dist_from_logits(teacher_logits(z, head), center, cfg);
}

// center <- c * center + (1 - c) * mean over rows of teacher logits [B,K].
template <typename T>
Tensor<T> center_update(const Tensor<T>& center, const std::vector<Tensor<T>>& teacher_logits_batch, double momentum) {
  if (teacher_logits_batch.empty()) fail(errc::invalid_argument, "center_update: empty batch");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail(errc::invalid_argument, "center_update: momentum must be in [0,1)");
  const std::size_t k = center.numel();
  std::vector<double> mean(k, 0.0);
  for (const auto& row_logits : teacher_logits_batch) {
    if (row_logits.numel() != k) fail(errc::invalid_shape, "center_update: logits width differs from center");
    for (std::size_t i = 0; i < k; ++i) mean[i] += static_cast<double>(row_logits[i]);
  }
  Tensor<T> out(center.shape());
  const double inv = 1.0 / static_cast<double>(teacher_logits_batch.size());
  for (std::size_t i = 0; i < k; ++i)
    out[i] = static_cast<T>(momentum * static_cast<double>(center[i]) + (1.0 - momentum) * mean[i] * inv);
  return out;
}

// ---------------------------------------------------------------------------

// Cross-entropy -sum_i p_t(i) log max(p_s(i), 1e-12); gradients flow into p_s only.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& p_t, const Tensor<T>& p_s) {
  if (p_t.numel() != p_s.numel())
    fail(errc::invalid_argument, "distribution lengths differ: " + std::to_string(p_t.numel()) + " vs " +
                                     std::to_string(p_s.numel()));
  auto target = reshape(p_t.detach(), p_s.shape());
  return scale(sum(mul(target, log(clamp_min(p_s, T(1e-12))))), T{-1});
}

// A distribution tagged with the crop it was computed from.
template <typename T>
struct ViewDist {
  Tensor<T> p;
  int crop = 0;
};

// Mean cross-entropy over every (teacher, student) pair whose crops differ.
template <typename T>
Tensor<T> distill_loss(const std::vector<ViewDist<T>>& teachers, const std::vector<ViewDist<T>>& students) {
  Tensor<T> total;
  std::size_t pairs = 0;
  for (const auto& t : teachers)
    for (const auto& s : students) {
      if (t.crop == s.crop) continue;
      auto ce = cross_entropy(t.p, s.p);
      total = total.defined() ? add(total, ce) : ce;
      ++pairs;
    }
  if (pairs == 0) fail(errc::invalid_argument, "distill_loss: no cross-view pairs");
  return scale(total, T{1} / static_cast<T>(pairs));
}

// Shannon entropy of one distribution (natural log); zero entries contribute 0.
template <typename T>
double entropy(const Tensor<T>& p) {
  double h = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double v = static_cast<double>(p[i]);
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

}  // namespace sssl
