#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sssl/tensor.hpp"

namespace sssl {

namespace detail {

template <typename T>
struct Input {
  std::shared_ptr<typename Tensor<T>::Storage> storage;
  bool tracked = false;

  const T* data() const { return storage->data.data(); }
  // Gradient buffer to accumulate into, or nullptr when this input is a constant.
  T* grad() const {
    if (!tracked) return nullptr;
    storage->ensure_grad();
    return storage->grad.data();
  }
};

template <typename T>
Tape* recording_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape* tape = Tape::active();
  if (tape == nullptr) return nullptr;
  for (const auto* t : inputs)
    if (t->tracks_grad()) return tape;
  return nullptr;
}

// Links `out` to `inputs` on `tape`. The closure receives the output gradient
// and the captured inputs; it only runs when the output was reached.
template <typename T, typename Fn>
void attach(Tape* tape, Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs, Fn fn) {
  std::vector<Input<T>> captured;
  captured.reserve(inputs.size());
  for (const auto* t : inputs) {
    auto storage = t->storage();
    const bool tracked = t->tracks_grad();
    if (tracked && storage->requires_grad && storage->tape != tape->id() && storage->leaf_tape != tape->id()) {
      storage->leaf_tape = tape->id();
      tape->add_leaf_finalizer([storage] { storage->ensure_grad(); });
    }
    captured.push_back({std::move(storage), tracked});
  }
  auto out_storage = out.storage();
  out_storage->tape = tape->id();
  tape->record([o = out_storage, ins = std::move(captured), fn = std::move(fn)]() {
    if (o->grad.empty()) return;
    fn(static_cast<const T*>(o->grad.data()), ins);
  });
}

inline void require(bool ok, errc code, const std::string& what) {
  if (!ok) fail(code, what);
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  require(t.rank() == rank, errc::invalid_shape,
          std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), errc::invalid_shape,
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// C[m,n] (+)= A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] (+)= A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[k,n] (+)= A[m,k]^T * B[m,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix products

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  detail::require(b.dim(0) == k, errc::invalid_shape,
                  "matmul: inner extents differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> out({m, n});
  detail::gemm_nn(a.ptr(), b.ptr(), out.ptr(), m, k, n);
  if (Tape* tape = detail::recording_tape<T>({&a, &b})) {
    detail::attach(tape, out, {&a, &b}, [m, k, n](const T* g, const auto& in) {
      if (T* ga = in[0].grad()) detail::gemm_nt(g, in[1].data(), ga, m, n, k);
      if (T* gb = in[1].grad()) detail::gemm_tn(in[0].data(), g, gb, m, k, n);
    });
  }
  return out;
}

// a[m,k] * b[n,k]^T -> [m,n]; the row-major form of a linear layer x W^T.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "matmul_nt");
  detail::require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  detail::require(b.dim(1) == k, errc::invalid_shape,
                  "matmul_nt: inner extents differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  Tensor<T> out({m, n});
  detail::gemm_nt(a.ptr(), b.ptr(), out.ptr(), m, k, n);
  if (Tape* tape = detail::recording_tape<T>({&a, &b})) {
    detail::attach(tape, out, {&a, &b}, [m, k, n](const T* g, const auto& in) {
      if (T* ga = in[0].grad()) detail::gemm_nn(g, in[1].data(), ga, m, n, k);
      if (T* gb = in[1].grad()) detail::gemm_tn(g, in[0].data(), gb, m, n, k);
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  if (Tape* tape = detail::recording_tape<T>({&a})) {
    detail::attach(tape, out, {&a}, [m, n](const T* g, const auto& in) {
      if (T* ga = in[0].grad())
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

enum class ew { add, sub, mul, sigmoid, silu, relu, log, exp, scale };

namespace detail {

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary(const Tensor<T>& a, Fwd fwd, Bwd bwd) {
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(a[i]);
  if (Tape* tape = recording_tape<T>({&a})) {
    attach(tape, out, {&a}, [n, bwd, y = out.storage()](const T* g, const auto& in) {
      if (T* ga = in[0].grad()) {
        const T* x = in[0].data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bwd(x[i], y->data[i]);
      }
    });
  }
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
  if (Tape* tape = detail::recording_tape<T>({&a, &b})) {
    detail::attach(tape, out, {&a, &b}, [n](const T* g, const auto& in) {
      for (int s = 0; s < 2; ++s)
        if (T* gx = in[s].grad())
          for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
  if (Tape* tape = detail::recording_tape<T>({&a, &b})) {
    detail::attach(tape, out, {&a, &b}, [n](const T* g, const auto& in) {
      if (T* ga = in[0].grad())
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      if (T* gb = in[1].grad())
        for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
  if (Tape* tape = detail::recording_tape<T>({&a, &b})) {
    detail::attach(tape, out, {&a, &b}, [n](const T* g, const auto& in) {
      if (T* ga = in[0].grad())
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * in[1].data()[i];
      if (T* gb = in[1].grad())
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * in[0].data()[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary(a, [](T x) { return detail::sigmoid_scalar(x); }, [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  return detail::unary(
      a, [](T x) { return x * detail::sigmoid_scalar(x); },
      [](T x, T) {
        const T s = detail::sigmoid_scalar(x);
        return s * (T{1} + x * (T{1} - s));
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary(a, [](T x) { return x > T{0} ? x : T{0}; }, [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (!(a[i] > T{0})) fail(errc::domain, "log of non-positive value at index " + std::to_string(i));
  return detail::unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  return detail::unary(a, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

// max(x, lo); gradient is zero where the floor is active.
template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T lo) {
  return detail::unary(a, [lo](T x) { return x < lo ? lo : x; }, [lo](T x, T) { return x < lo ? T{0} : T{1}; });
}

template <typename T>
Tensor<T> elementwise(ew op, const Tensor<T>& a, const std::optional<Tensor<T>>& b = std::nullopt,
                      T constant = T{1}) {
  auto rhs = [&]() -> const Tensor<T>& {
    if (!b) fail(errc::invalid_argument, "binary elementwise op needs a second operand");
    return *b;
  };
  switch (op) {
    case ew::add: return add(a, rhs());
    case ew::sub: return sub(a, rhs());
    case ew::mul: return mul(a, rhs());
    case ew::sigmoid: return sigmoid(a);
    case ew::silu: return silu(a);
    case ew::relu: return relu(a);
    case ew::log: return log(a);
    case ew::exp: return exp(a);
    case ew::scale: return scale(a, constant);
  }
  fail(errc::invalid_argument, "unknown elementwise op");
}

// ---------------------------------------------------------------------------
// Row-wise helpers. These are explicit per-row operations, not broadcasting.

// x[N,d] + b[d] on every row.
template <typename T>
Tensor<T> add_rows(const Tensor<T>& x, const Tensor<T>& b) {
  detail::require_rank(x, 2, "add_rows");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  detail::require(b.numel() == d, errc::invalid_shape,
                  "add_rows: bias " + shape_str(b.shape()) + " vs rows of " + shape_str(x.shape()));
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = x[r * d + c] + b[c];
  if (Tape* tape = detail::recording_tape<T>({&x, &b})) {
    detail::attach(tape, out, {&x, &b}, [rows, d](const T* g, const auto& in) {
      if (T* gx = in[0].grad())
        for (std::size_t i = 0; i < rows * d; ++i) gx[i] += g[i];
      if (T* gb = in[1].grad())
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
    });
  }
  return out;
}

// Sum of all elements -> [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  Tensor<T> out({1});
  T acc{0};
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i];
  out[0] = acc;
  if (Tape* tape = detail::recording_tape<T>({&a})) {
    detail::attach(tape, out, {&a}, [n = a.numel()](const T* g, const auto& in) {
      if (T* ga = in[0].grad())
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
    });
  }
  return out;
}

// Mean over rows of x[N,d] -> [d].
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  detail::require_rank(x, 2, "mean_rows");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  Tensor<T> out({d});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) out[c] += x[r * d + c];
  const T inv = T{1} / static_cast<T>(rows);
  for (std::size_t c = 0; c < d; ++c) out[c] *= inv;
  if (Tape* tape = detail::recording_tape<T>({&x})) {
    detail::attach(tape, out, {&x}, [rows, d, inv](const T* g, const auto& in) {
      if (T* gx = in[0].grad())
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += g[c] * inv;
    });
  }
  return out;
}

// Row `index` of x[N,d] -> [d].
template <typename T>
Tensor<T> row(const Tensor<T>& x, std::size_t index) {
  detail::require_rank(x, 2, "row");
  const std::size_t d = x.dim(1);
  detail::require(index < x.dim(0), errc::invalid_argument, "row index out of range");
  Tensor<T> out({d}, std::span<const T>(x.ptr() + index * d, d));
  if (Tape* tape = detail::recording_tape<T>({&x})) {
    detail::attach(tape, out, {&x}, [index, d](const T* g, const auto& in) {
      if (T* gx = in[0].grad())
        for (std::size_t c = 0; c < d; ++c) gx[index * d + c] += g[c];
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  detail::require(shape_numel(shape) == a.numel(), errc::invalid_shape,
                  "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor<T> out(std::move(shape), a.data());
  if (Tape* tape = detail::recording_tape<T>({&a})) {
    detail::attach(tape, out, {&a}, [n = a.numel()](const T* g, const auto& in) {
      if (T* ga = in[0].grad())
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax over the last axis of logits / temperature, with per-row max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits, T temperature) {
  if (!(temperature > T{0})) fail(errc::invalid_argument, "softmax temperature must be > 0");
  const std::size_t k = logits.shape().back();
  const std::size_t rows = logits.numel() / k;
  Tensor<T> out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = logits.ptr() + r * k;
    T* y = out.ptr() + r * k;
    T mx = x[0];
    for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, x[i]);
    T total{0};
    for (std::size_t i = 0; i < k; ++i) {
      y[i] = std::exp((x[i] - mx) / temperature);
      total += y[i];
    }
    for (std::size_t i = 0; i < k; ++i) y[i] /= total;
  }
  if (Tape* tape = detail::recording_tape<T>({&logits})) {
    detail::attach(tape, out, {&logits}, [rows, k, temperature, y = out.storage()](const T* g, const auto& in) {
      if (T* gx = in[0].grad()) {
        for (std::size_t r = 0; r < rows; ++r) {
          const T* yr = y->data.data() + r * k;
          const T* gr = g + r * k;
          T dot{0};
          for (std::size_t i = 0; i < k; ++i) dot += gr[i] * yr[i];
          for (std::size_t i = 0; i < k; ++i) gx[r * k + i] += yr[i] * (gr[i] - dot) / temperature;
        }
      }
    });
  }
  return out;
}

// Unit-L2 rows of x[N,d]. Zero-norm rows are rejected.
template <typename T>
Tensor<T> normalize_rows(const Tensor<T>& x) {
  detail::require_rank(x, 2, "normalize_rows");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  Tensor<T> out(x.shape());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T sq{0};
    for (std::size_t c = 0; c < d; ++c) sq += x[r * d + c] * x[r * d + c];
    norms[r] = std::sqrt(sq);
    if (!(norms[r] > T{0})) fail(errc::degenerate_input, "zero-norm row " + std::to_string(r));
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = x[r * d + c] / norms[r];
  }
  if (Tape* tape = detail::recording_tape<T>({&x})) {
    detail::attach(tape, out, {&x},
                   [rows, d, norms = std::move(norms), y = out.storage()](const T* g, const auto& in) {
                     if (T* gx = in[0].grad()) {
                       for (std::size_t r = 0; r < rows; ++r) {
                         const T* yr = y->data.data() + r * d;
                         const T* gr = g + r * d;
                         T dot{0};
                         for (std::size_t c = 0; c < d; ++c) dot += yr[c] * gr[c];
                         for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += (gr[c] - yr[c] * dot) / norms[r];
                       }
                     }
                   });
  }
  return out;
}

// Per-token normalization over the d channels, followed by a learned
// per-channel affine map: y = (x - mean) / sqrt(var + eps) * scale + bias.
template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& scale_v, const Tensor<T>& bias_v, T eps = T(1e-5)) {
  detail::require_rank(x, 2, "layer_norm_rows");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  detail::require(scale_v.numel() == d && bias_v.numel() == d, errc::invalid_shape,
                  "layer_norm_rows: scale/bias must have " + std::to_string(d) + " entries");
  Tensor<T> out(x.shape());
  std::vector<T> xhat(rows * d), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.ptr() + r * d;
    T mean{0};
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<T>(d);
    rstd[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (xr[c] - mean) * rstd[r];
      out[r * d + c] = xhat[r * d + c] * scale_v[c] + bias_v[c];
    }
  }
  if (Tape* tape = detail::recording_tape<T>({&x, &scale_v, &bias_v})) {
    detail::attach(tape, out, {&x, &scale_v, &bias_v},
                   [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](const T* g, const auto& in) {
                     T* gx = in[0].grad();
                     T* gs = in[1].grad();
                     T* gb = in[2].grad();
                     const T* s = in[1].data();
                     std::vector<T> dxhat(d);
                     for (std::size_t r = 0; r < rows; ++r) {
                       const T* gr = g + r * d;
                       const T* xh = xhat.data() + r * d;
                       T mean_d{0}, mean_dx{0};
                       for (std::size_t c = 0; c < d; ++c) {
                         if (gs) gs[c] += gr[c] * xh[c];
                         if (gb) gb[c] += gr[c];
                         dxhat[c] = gr[c] * s[c];
                         mean_d += dxhat[c];
                         mean_dx += dxhat[c] * xh[c];
                       }
                       if (!gx) continue;
                       mean_d /= static_cast<T>(d);
                       mean_dx /= static_cast<T>(d);
                       for (std::size_t c = 0; c < d; ++c)
                         gx[r * d + c] += rstd[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
                     }
                   });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gated linear recurrence over token rows:
//   h_k = g_k * (W_s h_prev + a_k),  h_prev = 0 for the first token visited.
// `reverse` visits tokens from last to first; outputs stay in token order.
// One pass over the sequence: Theta(N) for fixed state width.
template <typename T>
Tensor<T> gated_recurrence(const Tensor<T>& drive, const Tensor<T>& gates, const Tensor<T>& transition,
                           bool reverse = false) {
  detail::require_rank(drive, 2, "gated_recurrence");
  detail::require_same_shape(drive, gates, "gated_recurrence");
  const std::size_t n = drive.dim(0), ds = drive.dim(1);
  detail::require(n >= 1, errc::invalid_argument, "gated_recurrence: empty sequence");
  detail::require(transition.rank() == 2 && transition.dim(0) == ds && transition.dim(1) == ds, errc::invalid_shape,
                  "gated_recurrence: transition must be [" + std::to_string(ds) + "," + std::to_string(ds) + "], got " +
                      shape_str(transition.shape()));
  Tensor<T> states({n, ds});
  std::vector<T> pre(n * ds);
  const T* a = drive.ptr();
  const T* g = gates.ptr();
  const T* w = transition.ptr();
  T* h = states.ptr();
  const T* prev = nullptr;
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t k = reverse ? n - 1 - step : step;
    T* pk = pre.data() + k * ds;
    for (std::size_t i = 0; i < ds; ++i) {
      T acc = a[k * ds + i];
      if (prev) {
        const T* wrow = w + i * ds;
        for (std::size_t j = 0; j < ds; ++j) acc += wrow[j] * prev[j];
      }
      pk[i] = acc;
      h[k * ds + i] = g[k * ds + i] * acc;
    }
    prev = h + k * ds;
  }
  if (Tape* tape = detail::recording_tape<T>({&drive, &gates, &transition})) {
    detail::attach(tape, states, {&drive, &gates, &transition},
                   [n, ds, reverse, pre = std::move(pre), hs = states.storage()](const T* gh, const auto& in) {
                     T* ga = in[0].grad();
                     T* gg = in[1].grad();
                     T* gw = in[2].grad();
                     const T* gv = in[1].data();
                     const T* w = in[2].data();
                     const T* h = hs->data.data();
                     std::vector<T> carry(ds, T{0}), dpre(ds);
                     for (std::size_t step = n; step-- > 0;) {
                       const std::size_t k = reverse ? n - 1 - step : step;
                       const T* prev = nullptr;
                       if (step > 0) prev = h + (reverse ? k + 1 : k - 1) * ds;
                       for (std::size_t i = 0; i < ds; ++i) {
                         const T dh = gh[k * ds + i] + carry[i];
                         dpre[i] = dh * gv[k * ds + i];
                         if (gg) gg[k * ds + i] += dh * pre[k * ds + i];
                         if (ga) ga[k * ds + i] += dpre[i];
                       }
                       if (!prev) break;
                       std::fill(carry.begin(), carry.end(), T{0});
                       for (std::size_t i = 0; i < ds; ++i) {
                         const T* wrow = w + i * ds;
                         const T di = dpre[i];
                         if (gw) {
                           T* gwrow = gw + i * ds;
                           for (std::size_t j = 0; j < ds; ++j) gwrow[j] += di * prev[j];
                         }
                         for (std::size_t j = 0; j < ds; ++j) carry[j] += wrow[j] * di;
                       }
                     }
                   });
  }
  return states;
}

// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss on the active tape. Consumes the tape.
template <typename T>
void backward(Tensor<T>& loss) {
  if (loss.numel() != 1) fail(errc::invalid_argument, "backward() needs a scalar loss, got " + shape_str(loss.shape()));
  Tape* tape = Tape::active();
  if (!loss.on_tape() || tape == nullptr) fail(errc::no_tape, "loss is not recorded on the active tape");
  auto g = loss.mutable_grad();
  g[0] += T{1};
  tape->run_backward();
}

}  // namespace sssl
