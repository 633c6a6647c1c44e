#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sssl/image.hpp"
#include "sssl/ops.hpp"

namespace sssl {

enum class pooling { mean, last_token };
enum class scan_direction { forward, backward };

struct EncoderConfig {
  std::size_t patch_size = 16;
  std::size_t model_dim = 64;
  std::size_t state_dim = 64;
  std::size_t depth = 4;
  bool bidirectional = true;
  pooling pool = pooling::mean;

  std::size_t token_dim() const { return 3 * patch_size * patch_size; }

  void validate() const {
    if (patch_size < 1 || model_dim < 1 || state_dim < 1 || depth < 1)
      fail(errc::invalid_argument, "encoder config: patch_size, model_dim, state_dim and depth must be >= 1");
  }

  // Stable textual form; its hash identifies checkpoints built for this shape.
  std::string canonical() const {
    std::ostringstream os;
    os << "patch_size=" << patch_size << ";model_dim=" << model_dim << ";state_dim=" << state_dim
       << ";depth=" << depth << ";bidirectional=" << (bidirectional ? 1 : 0)
       << ";pooling=" << (pool == pooling::mean ? "mean" : "last");
    return os.str();
  }

  bool operator==(const EncoderConfig&) const = default;
};

// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

// Learnables of one gated state-space block. Shapes (d = model, ds = state):
//   W_s [ds,ds]  W_x [ds,d]  W_g [ds,d]  b_g [ds]  W_o [d,ds]  norm_scale, norm_bias [d]
template <typename T>
struct MambaParams {
  Tensor<T> W_s, W_x, W_g, b_g, W_o, norm_scale, norm_bias;

  static MambaParams init(std::size_t d, std::size_t ds, Rng& rng) {
    MambaParams p;
    const double in_scale = 1.0 / std::sqrt(static_cast<double>(d));
    const double state_scale = 1.0 / std::sqrt(static_cast<double>(ds));
    p.W_s = Tensor<T>::uniform({ds, ds}, -0.5 * state_scale, 0.5 * state_scale, rng);
    p.W_x = Tensor<T>::normal({ds, d}, 0.0, in_scale, rng);
    p.W_g = Tensor<T>::normal({ds, d}, 0.0, in_scale, rng);
    p.b_g = Tensor<T>({ds});
    p.W_o = Tensor<T>::normal({d, ds}, 0.0, 0.5 * state_scale, rng);
    p.norm_scale = Tensor<T>({d}, T{1});
    p.norm_bias = Tensor<T>({d});
    return p;
  }

  void collect(const std::string& prefix, NamedTensors<T>& out) const {
    out.emplace_back(prefix + "W_s", W_s);
    out.emplace_back(prefix + "W_x", W_x);
    out.emplace_back(prefix + "W_g", W_g);
    out.emplace_back(prefix + "b_g", b_g);
    out.emplace_back(prefix + "W_o", W_o);
    out.emplace_back(prefix + "norm_scale", norm_scale);
    out.emplace_back(prefix + "norm_bias", norm_bias);
  }
};

template <typename T>
struct EncoderParams {
  Tensor<T> W_e;  // [d, 3p^2]
  Tensor<T> b_e;  // [d]
  std::vector<MambaParams<T>> blocks;

  static EncoderParams init(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    EncoderParams p;
    const std::size_t d = cfg.model_dim;
    p.W_e = Tensor<T>::normal({d, cfg.token_dim()}, 0.0, 1.0 / std::sqrt(static_cast<double>(cfg.token_dim())), rng);
    p.b_e = Tensor<T>({d});
    for (std::size_t l = 0; l < cfg.depth; ++l) p.blocks.push_back(MambaParams<T>::init(d, cfg.state_dim, rng));
    return p;
  }

  // Handles share storage with the parameters; order is stable.
  NamedTensors<T> named() const {
    NamedTensors<T> out;
    out.emplace_back("encoder.embed.W_e", W_e);
    out.emplace_back("encoder.embed.b_e", b_e);
    for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].collect("encoder.block" + std::to_string(l) + ".", out);
    return out;
  }
};

// Exact scalar count of embedding + block learnables.
inline std::size_t param_count(const EncoderConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.model_dim, ds = cfg.state_dim;
  const std::size_t embed = d * cfg.token_dim() + d;
  const std::size_t block = ds * ds + 2 * ds * d + ds + d * ds + 2 * d;
  return embed + cfg.depth * block;
}

// ---------------------------------------------------------------------------

template <typename T>
struct PatchSequence {
  Tensor<T> tokens;  // [N, 3p^2]
  std::size_t count = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t patch = 0;
};

// Raster-order patches; token i is patch i flattened as [row][col][channel].
template <typename T>
PatchSequence<T> patchify(const Image& img, std::size_t p) {
  if (p < 1) fail(errc::invalid_argument, "patch size must be >= 1");
  if (img.height % p != 0 || img.width % p != 0)
    fail(errc::invalid_shape, "image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                                  " not divisible by patch size " + std::to_string(p));
  const std::size_t gh = img.height / p, gw = img.width / p, n = gh * gw, td = 3 * p * p;
  Tensor<T> tokens({n, td});
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px) {
      T* dst = tokens.ptr() + (py * gw + px) * td;
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x)
          for (std::size_t c = 0; c < 3; ++c) *dst++ = static_cast<T>(img.at(py * p + y, px * p + x, c));
    }
  return {std::move(tokens), n, img.height, img.width, p};
}

template <typename T>
Image unpatchify(const PatchSequence<T>& seq) {
  const std::size_t p = seq.patch, gw = seq.width / p, td = 3 * p * p;
  Image img(seq.height, seq.width);
  for (std::size_t i = 0; i < seq.count; ++i) {
    const T* src = seq.tokens.ptr() + i * td;
    const std::size_t py = i / gw, px = i % gw;
    for (std::size_t y = 0; y < p; ++y)
      for (std::size_t x = 0; x < p; ++x)
        for (std::size_t c = 0; c < 3; ++c) img.at(py * p + y, px * p + x, c) = static_cast<float>(*src++);
  }
  return img;
}

// Token-wise affine map X W_e^T + b_e.
template <typename T>
Tensor<T> embed(const Tensor<T>& tokens, const Tensor<T>& W_e, const Tensor<T>& b_e) {
  return add_rows(matmul_nt(tokens, W_e), b_e);
}

template <typename T>
struct ScanResult {
  Tensor<T> states;  // [N, ds]
  Tensor<T> gates;   // [N, ds]
};

// g_k = sigmoid(W_g u_k + b_g);  h_k = g_k * (W_s h_{k-1} + W_x u_k),  h_0 = 0.
template <typename T>
ScanResult<T> ssm_scan(const Tensor<T>& u, const MambaParams<T>& p, scan_direction dir = scan_direction::forward) {
  if (u.rank() != 2) fail(errc::invalid_shape, "ssm_scan: tokens must be [N,d]");
  auto drive = matmul_nt(u, p.W_x);
  auto gates = sigmoid(add_rows(matmul_nt(u, p.W_g), p.b_g));
  auto states = gated_recurrence(drive, gates, p.W_s, dir == scan_direction::backward);
  return {std::move(states), std::move(gates)};
}

template <typename T>
struct BlockOutput {
  Tensor<T> tokens;          // [N, d]
  Tensor<T> forward_states;  // [N, ds]
};

// out = tokens + mix W_o^T, mix = forward scan (or mean of both directions)
// of the normalized tokens.
template <typename T>
BlockOutput<T> mamba_block_detailed(const Tensor<T>& tokens, const MambaParams<T>& p, bool bidirectional) {
  auto normed = layer_norm_rows(tokens, p.norm_scale, p.norm_bias);
  auto fwd = ssm_scan(normed, p, scan_direction::forward).states;
  Tensor<T> mix = fwd;
  if (bidirectional) mix = scale(add(fwd, ssm_scan(normed, p, scan_direction::backward).states), T(0.5));
  return {add(tokens, matmul_nt(mix, p.W_o)), fwd};
}

template <typename T>
Tensor<T> mamba_block(const Tensor<T>& tokens, const MambaParams<T>& p, bool bidirectional) {
  return mamba_block_detailed(tokens, p, bidirectional).tokens;
}

template <typename T>
struct EncoderOutput {
  Tensor<T> Z;       // [N, d]
  Tensor<T> S;       // [N, ds], forward states of the last block
  Tensor<T> pooled;  // [d]
};

namespace detail {
inline std::atomic<std::uint64_t> g_encode_calls{0};
}

// Number of encode() invocations in this process.
inline std::uint64_t encode_call_count() { return detail::g_encode_calls.load(); }

template <typename T>
EncoderOutput<T> encode_tokens(const Tensor<T>& tokens, const EncoderConfig& cfg, const EncoderParams<T>& params) {
  detail::g_encode_calls.fetch_add(1);
  if (params.blocks.size() != cfg.depth) fail(errc::invalid_shape, "encoder params depth does not match config");
  auto z = embed(tokens, params.W_e, params.b_e);
  Tensor<T> states;
  for (const auto& block : params.blocks) {
    auto out = mamba_block_detailed(z, block, cfg.bidirectional);
    z = std::move(out.tokens);
    states = std::move(out.forward_states);
  }
  auto pooled = cfg.pool == pooling::mean ? mean_rows(z) : row(z, z.dim(0) - 1);
  return {std::move(z), std::move(states), std::move(pooled)};
}

template <typename T>
EncoderOutput<T> encode(const Image& img, const EncoderConfig& cfg, const EncoderParams<T>& params) {
  return encode_tokens(patchify<T>(img, cfg.patch_size).tokens, cfg, params);
}

// Single-head softmax(Q K^T / sqrt(d)) V with Q = X W_q^T etc. Theta(N^2) in
// token count; used as the quadratic baseline in benchmarks only.
template <typename T>
Tensor<T> attention_reference(const Tensor<T>& tokens, const Tensor<T>& W_q, const Tensor<T>& W_k,
                              const Tensor<T>& W_v) {
  if (tokens.rank() != 2) fail(errc::invalid_shape, "attention: tokens must be [N,d]");
  const std::size_t d = tokens.dim(1);
  for (const auto* w : {&W_q, &W_k, &W_v})
    if (w->shape() != Shape{d, d}) fail(errc::invalid_shape, "attention: projections must be [d,d]");
  auto q = matmul_nt(tokens, W_q);
  auto k = matmul_nt(tokens, W_k);
  auto v = matmul_nt(tokens, W_v);
  auto weights = softmax(scale(matmul_nt(q, k), T{1} / std::sqrt(static_cast<T>(d))), T{1});
  return matmul(weights, v);
}

}  // namespace sssl
