#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sssl/gradcheck.hpp"
#include "sssl/head.hpp"

using namespace sssl;
using T64 = Tensor<double>;

namespace {

HeadParams<double> small_head() {
  HeadParams<double> h;
  h.W_1 = T64({2, 2}, {1, -1, 0.5, 2});
  h.W_2 = T64({2, 2}, {2, 1, -1, 0.5});
  h.prototypes = T64({3, 2}, {1, 0, 0, 2, -1, 1});
  return h;
}

T64 random_dist(std::size_t k, Rng& rng, double concentration = 1.0) {
  std::gamma_distribution<double> g(concentration, 1.0);
  T64 p({k});
  double total = 0;
  for (std::size_t i = 0; i < k; ++i) total += (p[i] = g(rng) + 1e-300);
  for (std::size_t i = 0; i < k; ++i) p[i] /= total;
  return p;
}

}  // namespace

TEST(HeadConfig, Validation) {
  HeadConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.student_temp, 0.1);
  EXPECT_EQ(cfg.teacher_temp, 0.04);
  EXPECT_EQ(cfg.center_momentum, 0.9);
  auto bad = cfg;
  bad.teacher_temp = 0.2;
  EXPECT_THROW(bad.validate(), error);
  bad = cfg;
  bad.prototypes = 1;
  EXPECT_THROW(bad.validate(), error);
  bad = cfg;
  bad.student_temp = 0.0;
  EXPECT_THROW(bad.validate(), error);
}

TEST(Project, ZeroWeights) {
  auto h = small_head();
  h.W_1 = T64({2, 2});
  auto out = project(T64({2}, {0.3, -0.2}), h);
  EXPECT_NEAR(out[0], 0.5 * 3.0, 1e-15);
  EXPECT_NEAR(out[1], 0.5 * -0.5, 1e-15);

  auto h2 = small_head();
  h2.W_2 = T64({2, 2});
  auto zeros = project(T64({2}, {0.3, -0.2}), h2);
  for (double v : zeros.data()) EXPECT_EQ(v, 0.0);
}

TEST(Project, HandEvaluation) {
  // W_1 z = [0.5, -0.25]; values from a 30-digit evaluation.
  auto out = project(T64({2}, {0.3, -0.2}), small_head());
  EXPECT_NEAR(out[0], 1.68274216151791102525, 1e-10);
  EXPECT_NEAR(out[1], -0.40354758164475361665, 1e-10);
  EXPECT_THROW(project(T64({3}), small_head()), error);
}

TEST(PrototypeLogits, Cosines) {
  auto h = small_head();
  auto logits = prototype_logits(T64({2}, {3, 4}), h);
  EXPECT_NEAR(logits[0], 0.6, 1e-10);
  EXPECT_NEAR(logits[1], 0.8, 1e-10);
  EXPECT_NEAR(logits[2], 1.0 / (5.0 * std::sqrt(2.0)), 1e-10);

  auto parallel = prototype_logits(T64({2}, {0, 7}), h);
  EXPECT_NEAR(parallel[1], 1.0, 1e-15);
  EXPECT_NEAR(parallel[0], 0.0, 1e-15);

  try {
    prototype_logits(T64({2}), h);
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::degenerate_input);
  }
  auto zero_proto = h;
  zero_proto.prototypes = T64({3, 2}, {1, 0, 0, 0, 1, 1});
  EXPECT_THROW(prototype_logits(T64({2}, {1, 1}), zero_proto), error);
}

TEST(Distributions, UniformAndCentered) {
  HeadConfig cfg;
  T64 same({4}, {0.3, 0.3, 0.3, 0.3});
  auto p = softmax(same, cfg.student_temp);
  for (double v : p.data()) EXPECT_NEAR(v, 0.25, 1e-15);

  T64 logits({3}, {0.9, 0.1, -0.5});
  auto centered = teacher_dist_from_logits(logits, logits, cfg);
  for (double v : centered.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);

  // 30-digit reference for softmax([0.9, 0.1, -0.5] / 0.1).
  cfg.teacher_temp = 0.1;
  auto pt = teacher_dist_from_logits(logits, T64({3}), cfg);
  EXPECT_NEAR(pt[0], 0.999663818899118177772, 1e-6);
  EXPECT_NEAR(pt[1], 0.000335349851706958863, 1e-6);
  EXPECT_NEAR(pt[2], 0.000000831249174863365, 1e-6);
}

TEST(Distributions, AreProbabilityVectors) {
  Rng rng(5);
  HeadConfig cfg;
  cfg.prototypes = 16;
  for (int trial = 0; trial < 30; ++trial) {
    auto head = HeadParams<double>::init(12, cfg, rng);
    auto z = T64::normal({12}, 0, 3, rng);
    auto center = T64::normal({16}, 0, 0.5, rng);
    for (const auto& p : {student_dist(z, head, cfg), teacher_dist(z, head, cfg, center)}) {
      double total = 0;
      for (double v : p.data()) {
        EXPECT_GE(v, 0.0);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Distributions, LowerTemperatureSharpens) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    auto logits = T64::uniform({7}, -1, 1, rng);
    double prev_max = 0;
    for (double t : {1.0, 0.5, 0.2, 0.1, 0.04}) {
      auto p = softmax(logits, t);
      double mx = *std::max_element(p.data().begin(), p.data().end());
      EXPECT_GT(mx, prev_max);
      prev_max = mx;
    }
  }
}

TEST(CenterUpdate, Arithmetic) {
  auto c = center_update(T64({2}), {T64({2}, {1, -1})}, 0.9);
  EXPECT_NEAR(c[0], 0.1, 1e-15);
  EXPECT_NEAR(c[1], -0.1, 1e-15);

  auto mean = center_update(T64({2}, {5, 5}), {T64({2}, {1, 2}), T64({2}, {3, 6})}, 0.0);
  EXPECT_EQ(mean[0], 2.0);
  EXPECT_EQ(mean[1], 4.0);

  T64 center({3}, {4, -2, 9});
  T64 r({3}, {0.25, -0.5, 0.75});
  for (int i = 0; i < 400; ++i) center = center_update(center, {r, r}, 0.9);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(center[i], r[i], 1e-12);

  EXPECT_THROW(center_update(T64({2}), {}, 0.9), error);
  EXPECT_THROW(center_update(T64({2}), {T64({2})}, 1.0), error);
}

TEST(DistillLoss, ClosedForms) {
  T64 uniform({4}, {0.25, 0.25, 0.25, 0.25});
  EXPECT_NEAR(distill_loss<double>({{uniform, 0}}, {{uniform, 1}}).item(), std::log(4.0), 1e-12);

  T64 ps({3}, {0.2, 0.5, 0.3});
  T64 onehot({3}, {0, 1, 0});
  EXPECT_EQ(distill_loss<double>({{onehot, 0}}, {{ps, 1}}).item(), -std::log(0.5));

  // -(0.7 ln 0.5 + 0.3 ln 0.5) = ln 2
  EXPECT_NEAR(distill_loss<double>({{T64({2}, {0.7, 0.3}), 0}}, {{T64({2}, {0.5, 0.5}), 1}}).item(),
              0.69314718055994530942, 1e-12);

  EXPECT_THROW(distill_loss<double>({{uniform, 0}}, {{ps, 1}}), error);
}

TEST(DistillLoss, ClampsZeroStudentProbability) {
  T64 pt({2}, {0.5, 0.5});
  T64 ps({2}, {1.0, 0.0});
  EXPECT_NEAR(distill_loss<double>({{pt, 0}}, {{ps, 1}}).item(), -0.5 * std::log(1e-12), 1e-9);
}

TEST(DistillLoss, SameCropPairsAreExcluded) {
  T64 a({2}, {0.9, 0.1}), b({2}, {0.2, 0.8});
  // Teacher crops {0, 1}; students {1, 2}: pairs (0,1), (0,2), (1,2).
  const double want = (cross_entropy(a, a).item() + cross_entropy(a, b).item() + cross_entropy(b, b).item()) / 3.0;
  auto got = distill_loss<double>({{a, 0}, {b, 1}}, {{a, 1}, {b, 2}}).item();
  EXPECT_NEAR(got, want, 1e-14);
  EXPECT_THROW(distill_loss<double>({{a, 3}}, {{b, 3}}), error);
}

TEST(DistillLoss, EntropyIdentityAndGibbs) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + rng() % 30;
    auto pt = random_dist(k, rng, 0.3);
    auto ps = random_dist(k, rng, 0.3);
    EXPECT_NEAR(distill_loss<double>({{pt, 0}}, {{pt, 1}}).item(), entropy(pt), 1e-8);
    EXPECT_GE(distill_loss<double>({{pt, 0}}, {{ps, 1}}).item(), entropy(pt) - 1e-8);
  }
}

TEST(DistillLoss, GradCheckThroughStudentPath) {
  Rng rng(8);
  HeadConfig cfg;
  cfg.prototypes = 5;
  cfg.proj_dim = 3;
  cfg.hidden_dim = 4;
  cfg.student_temp = 0.5;
  auto head = HeadParams<double>::init(6, cfg, rng);
  auto pt = random_dist(5, rng);
  auto err = grad_check(
      [&](auto& in) {
        HeadParams<double> h{in[1], in[2], in[3]};
        return distill_loss<double>({{pt, 0}}, {{student_dist(in[0], h, cfg), 1}});
      },
      {T64::normal({6}, 0, 1, rng), head.W_1, head.W_2, head.prototypes});
  EXPECT_LT(err, 1e-6);
}

TEST(DistillLoss, TeacherPathReceivesNoGradient) {
  Rng rng(9);
  HeadConfig cfg;
  cfg.prototypes = 8;
  auto student = HeadParams<double>::init(6, cfg, rng);
  auto teacher = HeadParams<double>::init(6, cfg, rng);
  for (auto& [name, t] : student.named()) t.set_requires_grad(true);
  for (auto& [name, t] : teacher.named()) t.set_requires_grad(true);
  auto z_s = T64::normal({6}, 0, 1, rng).set_requires_grad(true);
  auto z_t = T64::normal({6}, 0, 1, rng).set_requires_grad(true);
  Tape tape;
  auto pt = teacher_dist(z_t, teacher, cfg, T64({8}));
  auto loss = distill_loss<double>({{pt, 0}}, {{student_dist(z_s, student, cfg), 1}});
  backward(loss);
  for (auto& [name, t] : teacher.named()) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) EXPECT_EQ(g, 0.0) << name;
  }
  EXPECT_FALSE(z_t.has_grad());
  EXPECT_TRUE(student.W_1.has_grad());
}

TEST(Entropy, Values) {
  EXPECT_NEAR(entropy(T64({4}, {0.25, 0.25, 0.25, 0.25})), std::log(4.0), 1e-15);
  EXPECT_EQ(entropy(T64({3}, {0, 1, 0})), 0.0);
  EXPECT_NEAR(entropy(T64({4}, {0.5, 0.5, 0, 0})), std::log(2.0), 1e-15);
}
