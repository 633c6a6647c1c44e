#pragma once

#include <string>
#include <vector>

#include "sssl/gradcheck.hpp"
#include "sssl/optim.hpp"

namespace sssl {

struct GradCheckCase {
  std::string name;
  ScalarFn f;
  std::vector<Tensor<double>> inputs;
  double tolerance = 1e-6;
};

struct GradCheckOutcome {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return error < tolerance; }
};

// Rebuilds a model whose tensors are taken, in named() order, from flat.
inline Model<double> model_from_flat(const Model<double>& like, const std::vector<Tensor<double>>& flat,
                                     std::size_t offset = 0) {
  std::size_t i = offset;
  auto next = [&]() -> const Tensor<double>& {
    if (i >= flat.size()) fail(errc::invalid_argument, "model_from_flat: too few tensors");
    return flat[i++];
  };
  Model<double> m;
  m.encoder.W_e = next();
  m.encoder.b_e = next();
  for (std::size_t l = 0; l < like.encoder.blocks.size(); ++l) {
    MambaParams<double> b;
    b.W_s = next();
    b.W_x = next();
    b.W_g = next();
    b.b_g = next();
    b.W_o = next();
    b.norm_scale = next();
    b.norm_bias = next();
    m.encoder.blocks.push_back(std::move(b));
  }
  m.head.W_1 = next();
  m.head.W_2 = next();
  m.head.prototypes = next();
  return m;
}

namespace detail {

inline Tensor<double> suite_tensor(Shape shape, std::uint64_t seed, double lo = -2.0, double hi = 2.0) {
  Rng rng(seed);
  return Tensor<double>::uniform(std::move(shape), lo, hi, rng);
}

inline Tensor<double> suite_weighted_sum(const Tensor<double>& y, std::uint64_t seed) {
  return sum(mul(y, suite_tensor(y.shape(), seed, 0.5, 1.5)));
}

inline Image suite_image(std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(size, size);
  for (auto& v : img.pixels) v = u(rng);
  return img;
}

}  // namespace detail

// Every differentiable primitive, each wrapped in a fixed random weighted sum.
inline std::vector<GradCheckCase> primitive_gradcheck_cases() {
  using detail::suite_tensor;
  using detail::suite_weighted_sum;
  auto ws = [](auto op) {
    return [op](std::vector<Tensor<double>>& in) { return suite_weighted_sum(op(in), 101); };
  };
  std::vector<GradCheckCase> cases = {
      {"add", ws([](auto& in) { return add(in[0], in[1]); }), {suite_tensor({3, 4}, 1), suite_tensor({3, 4}, 2)}},
      {"sub", ws([](auto& in) { return sub(in[0], in[1]); }), {suite_tensor({3, 4}, 3), suite_tensor({3, 4}, 4)}},
      {"mul", ws([](auto& in) { return mul(in[0], in[1]); }), {suite_tensor({3, 4}, 5), suite_tensor({3, 4}, 6)}},
      {"sigmoid", ws([](auto& in) { return sigmoid(in[0]); }), {suite_tensor({3, 4}, 7)}},
      {"silu", ws([](auto& in) { return silu(in[0]); }), {suite_tensor({3, 4}, 8)}},
      {"relu", ws([](auto& in) { return relu(in[0]); }), {suite_tensor({3, 4}, 9)}},
      {"log", ws([](auto& in) { return log(in[0]); }), {suite_tensor({3, 4}, 10, 0.2, 2.0)}},
      {"exp", ws([](auto& in) { return exp(in[0]); }), {suite_tensor({3, 4}, 11)}},
      {"scale", ws([](auto& in) { return scale(in[0], -1.7); }), {suite_tensor({3, 4}, 12)}},
      {"clamp_min", ws([](auto& in) { return clamp_min(in[0], 0.1); }), {suite_tensor({3, 4}, 13, 0.2, 2.0)}},
      {"matmul", ws([](auto& in) { return matmul(in[0], in[1]); }), {suite_tensor({3, 4}, 14), suite_tensor({4, 2}, 15)}},
      {"matmul_nt", ws([](auto& in) { return matmul_nt(in[0], in[1]); }),
       {suite_tensor({3, 4}, 16), suite_tensor({5, 4}, 17)}},
      {"transpose", ws([](auto& in) { return transpose(in[0]); }), {suite_tensor({3, 4}, 18)}},
      {"sum", [](auto& in) { return sum(in[0]); }, {suite_tensor({3, 4}, 19)}},
      {"add_rows", ws([](auto& in) { return add_rows(in[0], in[1]); }), {suite_tensor({3, 4}, 20), suite_tensor({4}, 21)}},
      {"mean_rows", ws([](auto& in) { return mean_rows(in[0]); }), {suite_tensor({3, 4}, 22)}},
      {"row", ws([](auto& in) { return row(in[0], 2); }), {suite_tensor({3, 4}, 23)}},
      {"reshape", ws([](auto& in) { return reshape(in[0], {4, 3}); }), {suite_tensor({3, 4}, 24)}},
      {"softmax", ws([](auto& in) { return softmax(in[0], 0.7); }), {suite_tensor({3, 4}, 25)}},
      {"normalize_rows", ws([](auto& in) { return normalize_rows(in[0]); }), {suite_tensor({3, 4}, 26)}},
      {"layer_norm_rows", ws([](auto& in) { return layer_norm_rows(in[0], in[1], in[2]); }),
       {suite_tensor({3, 4}, 27), suite_tensor({4}, 28), suite_tensor({4}, 29)}},
      {"gated_recurrence", ws([](auto& in) { return gated_recurrence(in[0], in[1], in[2]); }),
       {suite_tensor({5, 3}, 30), suite_tensor({5, 3}, 31, 0.05, 0.95), suite_tensor({3, 3}, 32, -0.5, 0.5)}},
      {"gated_recurrence_reverse", ws([](auto& in) { return gated_recurrence(in[0], in[1], in[2], true); }),
       {suite_tensor({5, 3}, 33), suite_tensor({5, 3}, 34, 0.05, 0.95), suite_tensor({3, 3}, 35, -0.5, 0.5)}},
  };
  return cases;
}

// Student loss of a two-image micro model against fixed teacher distributions,
// differentiated with respect to every encoder and head parameter.
inline GradCheckCase pipeline_gradcheck_case() {
  EncoderConfig enc;
  enc.patch_size = 4;
  enc.model_dim = 4;
  enc.state_dim = 3;
  enc.depth = 1;
  enc.bidirectional = true;
  HeadConfig head;
  head.hidden_dim = 4;
  head.proj_dim = 3;
  head.prototypes = 5;
  head.student_temp = 0.5;
  head.teacher_temp = 0.25;
  Rng rng(41);
  auto model = Model<double>::init(enc, head, rng);
  for (auto& b : model.encoder.blocks) b.b_g = Tensor<double>({enc.state_dim}, 0.3);
  const std::vector<Image> images = {detail::suite_image(8, 42), detail::suite_image(8, 43)};
  std::vector<Tensor<double>> teacher;
  {
    const auto other = Model<double>::init(enc, head, rng);
    const Tensor<double> center({head.prototypes});
    for (const auto& img : images)
      teacher.push_back(teacher_dist(encode(img, enc, other.encoder).pooled, other.head, head, center));
  }
  std::vector<Tensor<double>> inputs;
  for (auto& [name, t] : model.named()) inputs.push_back(t.clone());
  ScalarFn f = [=](std::vector<Tensor<double>>& in) {
    const auto m = model_from_flat(model, in);
    Tensor<double> total;
    for (std::size_t i = 0; i < images.size(); ++i) {
      auto tokens = patchify<double>(images[i], enc.patch_size).tokens;
      auto p_s = student_dist(encode_tokens(tokens, enc, m.encoder).pooled, m.head, head);
      auto loss = distill_loss<double>({{teacher[i], 0}}, {{p_s, 1}});
      total = i == 0 ? loss : add(total, loss);
    }
    return scale(total, 1.0 / static_cast<double>(images.size()));
  };
  return {"pipeline", std::move(f), std::move(inputs), 1e-4};
}

inline std::vector<GradCheckCase> gradcheck_suite() {
  auto cases = primitive_gradcheck_cases();
  cases.push_back(pipeline_gradcheck_case());
  return cases;
}

// Runs every case; tolerance_override > 0 replaces each case's own bound.
inline std::vector<GradCheckOutcome> run_gradcheck_suite(double tolerance_override = 0.0) {
  std::vector<GradCheckOutcome> out;
  for (auto& c : gradcheck_suite()) {
    const double tol = tolerance_override > 0.0 ? tolerance_override : c.tolerance;
    out.push_back({c.name, grad_check(c.f, c.inputs), tol});
  }
  return out;
}

}  // namespace sssl
