#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstring>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "sssl/error.hpp"

namespace sssl {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Allocation accounting for tensor buffers. Peak bytes are what the timing
// report calls "peak memory"; they are sampled from here, not from the OS.

struct memory_stats {
  std::size_t current_bytes = 0;
  std::size_t peak_bytes = 0;
};

namespace detail {
inline std::atomic<std::size_t> g_current_bytes{0};
inline std::atomic<std::size_t> g_peak_bytes{0};

inline void note_alloc(std::size_t bytes) {
  const std::size_t now = g_current_bytes.fetch_add(bytes) + bytes;
  std::size_t peak = g_peak_bytes.load();
  while (now > peak && !g_peak_bytes.compare_exchange_weak(peak, now)) {
  }
}
inline void note_free(std::size_t bytes) { g_current_bytes.fetch_sub(bytes); }
}  // namespace detail

inline memory_stats tensor_memory() { return {detail::g_current_bytes.load(), detail::g_peak_bytes.load()}; }
inline void reset_peak_memory() { detail::g_peak_bytes.store(detail::g_current_bytes.load()); }

template <typename T>
struct counting_allocator {
  using value_type = T;
  counting_allocator() = default;
  template <typename U>
  counting_allocator(const counting_allocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    detail::note_alloc(n * sizeof(T));
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    detail::note_free(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }
  template <typename U>
  bool operator==(const counting_allocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, counting_allocator<T>>;

// ---------------------------------------------------------------------------
// Tape: records backward closures in execution order. Constructing a Tape makes
// it the active tape of the calling thread until it is destroyed.

class Tape;

namespace detail {
inline thread_local Tape* t_active_tape = nullptr;
}

class Tape {
 public:
  Tape() : previous_(detail::t_active_tape), id_(next_id()) { detail::t_active_tape = this; }
  ~Tape() { detail::t_active_tape = previous_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return detail::t_active_tape; }
  static bool is_active(std::uint64_t id) { return id != 0 && active() && active()->id_ == id && !active()->consumed_; }

  std::uint64_t id() const { return id_; }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Runs every recorded closure in exact reverse order, then drops them.
  void run_backward() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    for (auto& finalize : leaf_finalizers_) finalize();
    nodes_.clear();
    leaf_finalizers_.clear();
    consumed_ = true;
  }

  std::size_t record(std::function<void()> backward_fn) {
    if (consumed_) fail(errc::no_tape, "tape already consumed by backward()");
    nodes_.push_back(std::move(backward_fn));
    return nodes_.size() - 1;
  }

  void add_leaf_finalizer(std::function<void()> fn) { leaf_finalizers_.push_back(std::move(fn)); }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }

  Tape* previous_;
  std::uint64_t id_;
  std::vector<std::function<void()>> nodes_;
  std::vector<std::function<void()>> leaf_finalizers_;
  bool consumed_ = false;
};

// Suspends recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::t_active_tape) { detail::t_active_tape = nullptr; }
  ~NoGradGuard() { detail::t_active_tape = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* previous_;
};

// ---------------------------------------------------------------------------

struct Zeros {};
struct Constant {
  double value;
};
struct SeededUniform {
  double lo;
  double hi;
  std::uint64_t seed;
};
struct SeededNormal {
  double mean;
  double stddev;
  std::uint64_t seed;
};
using Fill = std::variant<Zeros, Constant, SeededUniform, SeededNormal>;

template <typename T>
class Tensor {
 public:
  struct Storage {
    Shape shape;
    Buffer<T> data;
    Buffer<T> grad;
    bool requires_grad = false;
    std::uint64_t leaf_tape = 0;  // tape that already holds a grad finalizer for this leaf
    std::uint64_t tape = 0;       // id of the tape that recorded the op producing this tensor

    void ensure_grad() {
      if (grad.empty()) grad.assign(data.size(), T{0});
    }
  };

  Tensor() = default;

  explicit Tensor(Shape shape, T fill_value = T{0}) : impl_(std::make_shared<Storage>()) {
    validate(shape);
    impl_->data.assign(shape_numel(shape), fill_value);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::span<const T> values) : impl_(std::make_shared<Storage>()) {
    validate(shape);
    if (values.size() != shape_numel(shape))
      fail(errc::invalid_shape, "data length " + std::to_string(values.size()) + " does not match shape " +
                                    shape_str(shape));
    impl_->data.assign(values.begin(), values.end());
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::initializer_list<T> values)
      : Tensor(std::move(shape), std::span<const T>(values.begin(), values.size())) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.impl_->data) v = static_cast<T>(dist(rng));
    return t;
  }

  static Tensor normal(Shape shape, double mean, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(mean, stddev);
    for (auto& v : t.impl_->data) v = static_cast<T>(dist(rng));
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return {impl_->data.data(), impl_->data.size()}; }
  std::span<const T> data() const { return {impl_->data.data(), impl_->data.size()}; }
  T* ptr() { return impl_->data.data(); }
  const T* ptr() const { return impl_->data.data(); }

  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }
  T& at(std::size_t r, std::size_t c) { return impl_->data[r * impl_->shape[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const { return impl_->data[r * impl_->shape[1] + c]; }
  T item() const {
    if (numel() != 1) fail(errc::invalid_argument, "item() on non-scalar tensor " + shape_str(shape()));
    return impl_->data[0];
  }

  std::vector<T> to_vector() const { return {impl_->data.begin(), impl_->data.end()}; }

  // Leaf flag. Tensors produced by recorded ops track gradients implicitly.
  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }
  bool on_tape() const { return Tape::is_active(impl_->tape); }
  bool tracks_grad() const { return impl_->requires_grad || on_tape(); }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return {impl_->grad.data(), impl_->grad.size()}; }
  std::span<T> mutable_grad() {
    impl_->ensure_grad();
    return {impl_->grad.data(), impl_->grad.size()};
  }
  void zero_grad() { impl_->grad.clear(); }

  // Same values, no tape linkage, no grad, independent buffer.
  Tensor detach() const {
    Tensor t;
    t.impl_ = std::make_shared<Storage>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
  }
  Tensor clone() const { return detach(); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape());
    for (std::size_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(impl_->data[i]);
    return out;
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  // Internal access for op implementations.
  const std::shared_ptr<Storage>& storage() const { return impl_; }

 private:
  static void validate(const Shape& shape) {
    if (shape.empty()) fail(errc::invalid_shape, "tensor rank must be >= 1");
    for (auto e : shape)
      if (e == 0) fail(errc::invalid_shape, "zero extent in shape " + shape_str(shape));
  }

  std::shared_ptr<Storage> impl_;
};

// Signed-extent constructor entry point: rejects zero or negative extents.
template <typename T>
Tensor<T> tensor_new(const std::vector<long long>& extents, const Fill& fill) {
  Shape shape;
  for (auto e : extents) {
    if (e <= 0) fail(errc::invalid_shape, "extent " + std::to_string(e) + " must be >= 1");
    shape.push_back(static_cast<std::size_t>(e));
  }
  return std::visit(
      [&](const auto& rule) -> Tensor<T> {
        using R = std::decay_t<decltype(rule)>;
        if constexpr (std::is_same_v<R, Zeros>) {
          return Tensor<T>(shape);
        } else if constexpr (std::is_same_v<R, Constant>) {
          return Tensor<T>(shape, static_cast<T>(rule.value));
        } else if constexpr (std::is_same_v<R, SeededUniform>) {
          Rng rng(rule.seed);
          return Tensor<T>::uniform(shape, rule.lo, rule.hi, rng);
        } else {
          Rng rng(rule.seed);
          return Tensor<T>::normal(shape, rule.mean, rule.stddev, rng);
        }
      },
      fill);
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return std::equal(a.data().begin(), a.data().end(), b.data().begin(),
                    [](T x, T y) { return std::memcmp(&x, &y, sizeof(T)) == 0; });
}

}  // namespace sssl
