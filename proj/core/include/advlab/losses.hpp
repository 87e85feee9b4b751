#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "advlab/graph.hpp"
#include "advlab/tensor.hpp"

namespace advlab {

/// Label-smoothed target distribution: (1 - alpha) on the true class and
/// alpha / (K - 1) on every other class.
struct SmoothedTarget {
  std::size_t classes = 0;
  double alpha = 0.0;
  int true_class = 0;

  std::vector<double> materialize() const;
};

/// Builds the [B,K] matrix of smoothed targets for a batch of labels.
Tensor smoothed_targets(std::span<const int> labels, std::size_t classes, double alpha);

enum class LossType { kCrossEntropy, kLabelSmoothed, kKl, kMartBce, kCwMargin };

/// Which way PGD-KL measures divergence from the clean prediction p.
///   kForward: KL(p || q)   (as written for TRADES)
///   kReverse: KL(q || p)
enum class KlDirection { kForward, kReverse };

/// Surrogate loss selector for attacks. `alpha` only matters for kLabelSmoothed.
struct LossKind {
  LossType type = LossType::kCrossEntropy;
  double alpha = 0.0;
  KlDirection kl_direction = KlDirection::kForward;

  static LossKind ce() { return {}; }
  static LossKind ls(double alpha);
  static LossKind kl(KlDirection dir = KlDirection::kForward) { return {LossType::kKl, 0.0, dir}; }
  static LossKind mart_bce() { return {LossType::kMartBce, 0.0, KlDirection::kForward}; }
  static LossKind cw_margin() { return {LossType::kCwMargin, 0.0, KlDirection::kForward}; }

  /// Short column name: ce, ls, kl, kl-reverse, mart_bce, cw.
  std::string name() const;
  /// Inverse of name(); `alpha` is attached when the name is "ls".
  static LossKind parse(const std::string& name, double alpha = 0.0);

  friend bool operator==(const LossKind&, const LossKind&) = default;
};

// Graph-level losses. Each returns a [1] node holding the batch mean.

/// mean_b -log softmax(z_b)[y_b]
Var cross_entropy(Graph& g, Var logits, std::span<const int> labels);
/// mean_b sum_k -y^LS_bk log softmax(z_b)_k
Var label_smoothed_ce(Graph& g, Var logits, std::span<const int> labels, double alpha);
/// mean_b sum_k p_bk (log p_bk - log q_bk), q = softmax(logits); p is a constant.
/// Zero-probability reference entries contribute nothing.
Var kl_divergence(Graph& g, const Tensor& ref_log_probs, Var logits);
/// Per-example KL(p || q) as a [B] node.
Var kl_divergence_rows(Graph& g, const Tensor& ref_log_probs, Var logits);
/// mean_b sum_k q_bk (log q_bk - log p_bk): divergence of the model from the constant p.
Var kl_divergence_reverse(Graph& g, const Tensor& ref_log_probs, Var logits);
/// mean_b -log p_y - log(1 - max_{k != y} p_k)
Var mart_bce(Graph& g, Var logits, std::span<const int> labels);
/// mean_b max_{k != y} z_k - z_y
Var cw_margin(Graph& g, Var logits, std::span<const int> labels);

/// Dispatches on `kind`. `ref_log_probs` is only read for kKl.
Var attack_loss(Graph& g, const LossKind& kind, Var logits, std::span<const int> labels, const Tensor* ref_log_probs);

// Value-only conveniences over plain tensors.

Tensor log_softmax(const Tensor& logits);
double cross_entropy(const Tensor& logits, std::span<const int> labels);
double label_smoothed_ce(const Tensor& logits, std::span<const int> labels, double alpha);
double kl_divergence(const Tensor& ref_log_probs, const Tensor& logits);
double mart_bce(const Tensor& logits, std::span<const int> labels);
double cw_margin(const Tensor& logits, std::span<const int> labels);

/// Throws ContractError unless every row of `log_probs` exponentiates to a
/// distribution summing to 1 within `tol`.
void check_log_distribution(const Tensor& log_probs, double tol = 1e-9);

}  // namespace advlab
