#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advlab/attacks.hpp"
#include "advlab/data.hpp"
#include "advlab/graph.hpp"
#include "advlab/model.hpp"

namespace advlab {

enum class Method { kErm, kMadry, kTrades, kMart };

std::string method_name(Method m);
Method parse_method(const std::string& s);

/// Default robustness weight for a method: 6 for TRADES, 5 for MART, none otherwise.
std::optional<double> default_lambda(Method m);

struct TrainConfig {
  Method method = Method::kMadry;
  /// Smoothing of the inner attack's LSCE loss; 0 keeps the base method's inner loss.
  double spat_alpha = 0.0;
  /// Robustness weight; resolved from default_lambda() when unset.
  std::optional<double> lambda;
  int epochs = 10;
  std::size_t batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 7e-4;
  std::vector<int> lr_milestones{75, 90};
  double lr_factor = 0.1;
  bool augment = true;
  std::size_t augment_padding = 4;
  /// Inner attack; its loss is overridden by inner_loss().
  AttackConfig train_attack = attack_by_name("pgd10-train", 8.0 / 255.0);
  /// Preset used for the labelled eval-attack column of the epoch metrics.
  AttackConfig metrics_attack = attack_by_name("pgd20", 8.0 / 255.0);
  /// Training examples attacked with metrics_attack after each epoch (0 disables).
  std::size_t metrics_examples = 0;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  double resolved_lambda() const;
  /// LS(spat_alpha) when spat_alpha > 0; otherwise CE for Madry/MART and
  /// forward KL for TRADES.
  LossKind inner_loss() const;
};

/// lr0 * factor^k, k = number of milestones m with epoch >= m (epochs count from 0).
double lr_at_epoch(const TrainConfig& cfg, int epoch);

struct OptimizerState {
  std::vector<Tensor> velocity;
  double lr = 0.0;
};

/// Heavy-ball SGD with coupled weight decay:
///   v <- momentum * v + (g + weight_decay * theta);  theta <- theta - lr * v
/// Velocity buffers are created on first use. Throws NumericError on
/// non-finite gradients.
void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimizerState& state, double lr,
              double momentum, double weight_decay);

/// Records the outer objective on `g`:
///   ERM:    CE(p(x), y)
///   MADRY:  CE(p(x_adv), y)
///   TRADES: CE(p(x), y) + lambda * KL(p(x) || p(x_adv))
///   MART:   BCE(p(x_adv), y) + lambda * mean_b KL_b(p(x) || p(x_adv)) * (1 - p_y(x))
/// The clean distribution p(x) enters the KL terms as a constant.
Var training_loss(Graph& g, Method method, const Model& model, std::span<const Var> params, const Tensor& x,
                  const Tensor& x_adv, std::span<const int> labels, double lambda);

/// Value of training_loss without recording gradients.
double training_loss_value(Method method, const Model& model, const Tensor& x, const Tensor& x_adv,
                           std::span<const int> labels, double lambda);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  /// Pre-update accuracy on the (augmented) clean batches.
  double clean_acc = 0.0;
  /// Pre-update accuracy on the training attack's outputs.
  double robust_acc_train_attack = 0.0;
  /// Post-epoch accuracy under metrics_attack on the first metrics_examples
  /// training examples; negative when disabled.
  double robust_acc_eval_attack = -1.0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Alternates inner maximization (attack on the current parameters) and an
/// outer SGD step for every batch. Bit-reproducible for a fixed config,
/// independent of `threads`. Throws NumericError with epoch/batch coordinates
/// on divergence.
std::vector<EpochMetrics> train(Model& model, const Dataset& data, const TrainConfig& cfg,
                                const EpochCallback& on_epoch = {});

void write_metrics_csv(std::span<const EpochMetrics> rows, const std::filesystem::path& path);

}  // namespace advlab
