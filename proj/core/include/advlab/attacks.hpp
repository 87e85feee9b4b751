#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "advlab/losses.hpp"
#include "advlab/model.hpp"
#include "advlab/tensor.hpp"

namespace advlab {

/// L-infinity attack settings. `step_size` is the per-step signed-gradient
/// magnitude; it is unrelated to the label-smoothing alpha in `loss`.
struct AttackConfig {
  std::string name = "pgd";
  double epsilon = 0.0;
  int steps = 1;
  double step_size = 0.0;
  bool random_start = false;
  LossKind loss;
  std::uint64_t seed = 0;

  /// epsilon >= 0, steps >= 1, step_size > 0 (step_size may be 0 only when epsilon is 0).
  void validate() const;

  friend bool operator==(const AttackConfig&, const AttackConfig&) = default;
};

/// Presets:
///   fgsm                     T=1,  step=eps,    no random start, CE
///   pgd20                    T=20, step=eps/10, random start,    CE
///   cw30                     T=30, step=eps/10, random start,    CW margin
///   pgd10-train/train-pgd10  T=10, step=eps/4,  random start,    CE
AttackConfig attack_by_name(std::string_view name, double epsilon);

/// Examples per gradient chunk. Attacks always process fixed chunks so that
/// results do not depend on how the batch is split across threads.
inline constexpr std::size_t kAttackChunk = 32;

/// clamp(cand, orig - eps, orig + eps), then clamp to [0,1].
Tensor project_linf(const Tensor& x_orig, const Tensor& x_cand, double epsilon);

/// x + Uniform[-eps, eps] per coordinate, projected. Row i draws from a stream
/// seeded by (seed, example_ids[i]); ids default to 0..B-1.
Tensor random_start(const Tensor& x, double epsilon, std::uint64_t seed,
                    std::span<const std::uint64_t> example_ids = {});

/// Gradient of the mean surrogate loss w.r.t. the input batch. For KL losses
/// `ref_log_probs` must hold the clean log-probabilities.
Tensor input_gradient(const Model& model, std::span<const int> labels, const Tensor& x, const LossKind& loss,
                      const Tensor* ref_log_probs = nullptr);

/// x + eps * sgn(grad), clamped to [0,1]. sgn(0) = 0.
Tensor fgsm(const Model& model, std::span<const int> labels, const Tensor& x, double epsilon, const LossKind& loss);

/// `steps` iterations of signed ascent plus projection, starting from a random
/// point in the ball when cfg.random_start is set. Returns the final iterate.
Tensor pgd(const Model& model, std::span<const int> labels, const Tensor& x, const AttackConfig& cfg,
           std::span<const std::uint64_t> example_ids = {}, std::size_t threads = 1);

/// Largest ||x_adv - x||_inf, and whether every coordinate lies in [0,1].
struct BallCheck {
  double max_linf = 0.0;
  bool in_range = true;
};
BallCheck check_ball(const Tensor& x, const Tensor& x_adv);

}  // namespace advlab
