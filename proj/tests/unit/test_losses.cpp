#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "advlab/errors.hpp"
#include "advlab/losses.hpp"
#include "advlab/rng.hpp"

using namespace advlab;

namespace {

// Logits whose softmax is exactly p (up to rounding).
Tensor logits_of(std::vector<double> p) {
  const std::size_t k = p.size();
  for (double& v : p) v = std::log(v);
  return Tensor({1, k}, std::move(p));
}

Tensor random_logits(std::size_t b, std::size_t k, Rng& rng, double scale = 3.0) {
  Tensor t({b, k});
  for (double& v : t.values()) v = rng.uniform(-scale, scale);
  return t;
}

std::vector<int> random_labels(std::size_t b, std::size_t k, Rng& rng) {
  std::vector<int> y(b);
  for (int& v : y) v = static_cast<int>(rng.below(k));
  return y;
}

Tensor logit_grad(const std::function<Var(Graph&, Var)>& loss, const Tensor& z) {
  Graph g;
  const Var v = g.leaf(z);
  g.backward(loss(g, v));
  return g.grad(v);
}

}  // namespace

TEST(SmoothedTarget, Materialize) {
  const auto t = SmoothedTarget{4, 0.3, 2}.materialize();
  EXPECT_DOUBLE_EQ(t[2], 0.7);
  EXPECT_DOUBLE_EQ(t[0], 0.1);
  EXPECT_NEAR(std::accumulate(t.begin(), t.end(), 0.0), 1.0, 1e-15);
}

TEST(LossKind, AlphaOutsideUnitIntervalIsConfigError) {
  EXPECT_THROW(LossKind::ls(-0.1), ConfigError);
  EXPECT_THROW(LossKind::ls(1.5), ConfigError);
  EXPECT_NO_THROW(LossKind::ls(1.0));
}

TEST(LossKind, NameRoundTrip) {
  for (const auto& k : {LossKind::ce(), LossKind::ls(0.4), LossKind::kl(), LossKind::kl(KlDirection::kReverse),
                        LossKind::mart_bce(), LossKind::cw_margin()}) {
    EXPECT_EQ(LossKind::parse(k.name(), k.alpha), k) << k.name();
  }
  EXPECT_THROW(LossKind::parse("hinge"), ConfigError);
}

TEST(CrossEntropy, Values) {
  const std::vector<int> y{0};
  EXPECT_NEAR(cross_entropy(Tensor({1, 4}, 0.0), y), std::log(4.0), 1e-15);
  EXPECT_NEAR(cross_entropy(logits_of({0.7, 0.2, 0.1}), y), -std::log(0.7), 1e-12);
  EXPECT_NEAR(cross_entropy(Tensor({1, 3}, std::vector<double>{60, 0, 0}), y), 0.0, 1e-20);
}

TEST(LabelSmoothedCe, AlphaZeroIsExactlyCe) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const Tensor z = random_logits(6, 7, rng);
    const auto y = random_labels(6, 7, rng);
    EXPECT_EQ(label_smoothed_ce(z, y, 0.0), cross_entropy(z, y));
    Graph g;
    const Var v = g.leaf(z);
    EXPECT_EQ(g.value(label_smoothed_ce(g, v, y, 0.0)).item(), g.value(cross_entropy(g, v, y)).item());
  }
}

TEST(LabelSmoothedCe, UniformPredictionGivesLnK) {
  const std::vector<int> y{1};
  for (double a : {0.0, 0.2, 0.5, 0.9, 1.0}) {
    EXPECT_NEAR(label_smoothed_ce(Tensor({1, 4}, 0.0), y, a), std::log(4.0), 1e-12) << a;
  }
}

TEST(LabelSmoothedCe, HandValue) {
  // Independent oracle: sum_k -t_k log p_k with t = (0.7, 0.1, 0.1, 0.1).
  const std::vector<double> p{0.7, 0.1, 0.1, 0.1};
  double oracle = 0;
  for (std::size_t k = 0; k < 4; ++k) oracle += -(k == 0 ? 0.7 : 0.1) * std::log(p[k]);
  const std::vector<int> y{0};
  const double got = label_smoothed_ce(logits_of(p), y, 0.3);
  EXPECT_NEAR(got, oracle, 1e-12);
  EXPECT_NEAR(got, 0.9404, 5e-5);
}

TEST(LabelSmoothedCe, LogitGradientIsSoftmaxMinusTarget) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const Tensor z = random_logits(3, 6, rng);
    const auto y = random_labels(3, 6, rng);
    const double a = rng.uniform();
    const Tensor grad = logit_grad([&](Graph& g, Var v) { return label_smoothed_ce(g, v, y, a); }, z);
    const Tensor lsm = log_softmax(z);
    const Tensor tgt = smoothed_targets(y, 6, a);
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(grad[i], (std::exp(lsm[i]) - tgt[i]) / 3.0, 1e-12);
  }
}

TEST(LabelSmoothedCe, AffineInAlpha) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const Tensor z = random_logits(4, 5, rng);
    const auto y = random_labels(4, 5, rng);
    const double a0 = 0.1, a1 = 0.45, a2 = 0.9;
    const double l0 = label_smoothed_ce(z, y, a0), l1 = label_smoothed_ce(z, y, a1), l2 = label_smoothed_ce(z, y, a2);
    EXPECT_NEAR((l1 - l0) / (a1 - a0), (l2 - l1) / (a2 - a1), 1e-10);
  }
}

TEST(KlDivergence, Values) {
  const Tensor p = log_softmax(logits_of({0.5, 0.5}));
  EXPECT_NEAR(kl_divergence(p, logits_of({0.5, 0.5})), 0.0, 1e-15);
  const double oracle = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
  EXPECT_NEAR(kl_divergence(p, logits_of({0.9, 0.1})), oracle, 1e-12);
  EXPECT_NEAR(oracle, 0.5108, 5e-5);
}

TEST(KlDivergence, ZeroReferenceEntriesContributeNothing) {
  Tensor ref({1, 3}, std::vector<double>{0.0, -INFINITY, -INFINITY});
  const double v = kl_divergence(ref, logits_of({0.5, 0.25, 0.25}));
  EXPECT_NEAR(v, std::log(2.0), 1e-12);
}

TEST(KlDivergence, CrossEntropyMinusEntropy) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const Tensor p = log_softmax(random_logits(1, 6, rng));
    const Tensor q = log_softmax(random_logits(1, 6, rng));
    double ce = 0, h = 0;
    for (std::size_t k = 0; k < 6; ++k) {
      ce -= std::exp(p[k]) * q[k];
      h -= std::exp(p[k]) * p[k];
    }
    EXPECT_NEAR(ce - h, kl_divergence(p, q), 1e-10);
  }
}

TEST(KlDivergence, LsceGradientEqualsKlFromSmoothedTarget) {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const std::size_t b = 1 + rng.below(4), k = 2 + rng.below(8);
    const Tensor z = random_logits(b, k, rng);
    const auto y = random_labels(b, k, rng);
    const double a = rng.uniform(0.0, 0.999);
    Tensor ref = smoothed_targets(y, k, a);
    for (double& v : ref.values()) v = std::log(v);
    const Tensor g1 = logit_grad([&](Graph& g, Var v) { return label_smoothed_ce(g, v, y, a); }, z);
    const Tensor g2 = logit_grad([&](Graph& g, Var v) { return kl_divergence(g, ref, v); }, z);
    EXPECT_LE(max_abs_diff(g1, g2), 1e-9);
  }
}

TEST(KlDivergence, ReverseDirection) {
  const Tensor p = log_softmax(logits_of({0.5, 0.5}));
  Graph g;
  const Var v = kl_divergence_reverse(g, p, g.leaf(logits_of({0.9, 0.1})));
  const double oracle = 0.9 * std::log(0.9 / 0.5) + 0.1 * std::log(0.1 / 0.5);
  EXPECT_NEAR(g.value(v).item(), oracle, 1e-12);
}

TEST(MartBce, Values) {
  const std::vector<int> y{0};
  const double got = mart_bce(logits_of({0.7, 0.2, 0.1}), y);
  EXPECT_NEAR(got, -std::log(0.7) - std::log(0.8), 1e-12);
  EXPECT_NEAR(got, 0.5798, 5e-5);
  EXPECT_NEAR(mart_bce(Tensor({1, 3}, std::vector<double>{40, 0, 0}), y), 0.0, 1e-15);
}

TEST(MartBce, AtLeastCrossEntropy) {
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const Tensor z = random_logits(1, 5, rng, 6.0);
    const auto y = random_labels(1, 5, rng);
    EXPECT_GE(mart_bce(z, y), cross_entropy(z, y));
  }
}

TEST(CwMargin, Values) {
  const std::vector<int> y{0};
  EXPECT_DOUBLE_EQ(cw_margin(Tensor({1, 3}, std::vector<double>{2.0, 1.0, 0.5}), y), -1.0);
  EXPECT_DOUBLE_EQ(cw_margin(Tensor({1, 2}, std::vector<double>{1.0, 3.0}), y), 2.0);
  EXPECT_DOUBLE_EQ(cw_margin(Tensor({1, 3}, std::vector<double>{12.0, 11.0, 10.5}), y), -1.0);
}

TEST(LogDistribution, Check) {
  EXPECT_NO_THROW(check_log_distribution(log_softmax(Tensor({2, 3}, 0.5))));
  EXPECT_THROW(check_log_distribution(Tensor({1, 2}, 0.0)), ContractError);
}
