#include "advlab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "advlab/errors.hpp"
#include "advlab/parallel.hpp"
#include "advlab/rng.hpp"

namespace advlab {

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    throw ConfigError("epsilon must be a finite value >= 0", "attack.epsilon");
  }
  if (steps < 1) throw ConfigError("steps must be >= 1", "attack.steps");
  if (!(step_size > 0.0) && !(epsilon == 0.0 && step_size == 0.0)) {
    throw ConfigError("step_size must be > 0", "attack.step_size");
  }
}

AttackConfig attack_by_name(std::string_view name, double epsilon) {
  AttackConfig c;
  c.name = std::string(name);
  c.epsilon = epsilon;
  if (name == "fgsm") {
    c.steps = 1;
    c.step_size = epsilon;
    c.random_start = false;
  } else if (name == "pgd20") {
    c.steps = 20;
    c.step_size = epsilon / 10.0;
    c.random_start = true;
  } else if (name == "cw30") {
    c.steps = 30;
    c.step_size = epsilon / 10.0;
    c.random_start = true;
    c.loss = LossKind::cw_margin();
  } else if (name == "pgd10-train" || name == "train-pgd10") {
    c.name = "pgd10-train";
    c.steps = 10;
    c.step_size = epsilon / 4.0;
    c.random_start = true;
  } else {
    throw ConfigError("unknown attack preset '" + std::string(name) + "' (expected fgsm, pgd20, cw30, pgd10-train)",
                      "attack.preset");
  }
  c.validate();
  return c;
}

Tensor project_linf(const Tensor& x_orig, const Tensor& x_cand, double epsilon) {
  if (epsilon < 0.0) throw ConfigError("negative epsilon", "attack.epsilon");
  if (x_orig.shape() != x_cand.shape()) {
    throw ShapeError("project_linf: " + shape_str(x_orig.shape()) + " vs " + shape_str(x_cand.shape()));
  }
  Tensor out = x_cand;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = std::clamp(x_cand[i], x_orig[i] - epsilon, x_orig[i] + epsilon);
    out[i] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

namespace {

std::vector<std::uint64_t> default_ids(std::size_t n) {
  std::vector<std::uint64_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::uint64_t{0});
  return ids;
}

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Gradient of the chunk-mean loss. `step` labels numeric errors.
Tensor chunk_gradient(const Model& model, std::span<const int> labels, const Tensor& x, const LossKind& loss,
                      const Tensor* ref, int step) {
  Graph g;
  const auto params = model.bind(g, false);
  const Var xv = g.leaf(x, true, "x");
  const Var out = attack_loss(g, loss, model.forward(g, xv, params), labels, ref);
  if (!std::isfinite(g.value(out).item())) {
    throw NumericError("attack: non-finite " + loss.name() + " loss at step " + std::to_string(step));
  }
  g.backward(out);
  Tensor grad = g.grad(xv);
  if (!grad.all_finite()) throw NumericError("attack: non-finite input gradient at step " + std::to_string(step));
  return grad;
}

std::size_t chunk_count(std::size_t n) { return (n + kAttackChunk - 1) / kAttackChunk; }

void check_batch(const Tensor& x, std::span<const int> labels) {
  if (x.rank() < 2 || x.dim(0) != labels.size()) {
    throw ShapeError("attack: batch " + shape_str(x.shape()) + " with " + std::to_string(labels.size()) + " labels");
  }
}

}  // namespace

Tensor random_start(const Tensor& x, double epsilon, std::uint64_t seed, std::span<const std::uint64_t> example_ids) {
  if (x.rank() < 1) throw ShapeError("random_start: scalar input");
  const std::size_t rows = x.dim(0);
  const auto ids = example_ids.empty() ? default_ids(rows) : std::vector<std::uint64_t>(example_ids.begin(),
                                                                                        example_ids.end());
  if (ids.size() != rows) throw ShapeError("random_start: id count does not match batch");
  Tensor cand = x;
  const std::size_t rs = rows == 0 ? 0 : x.size() / rows;
  for (std::size_t r = 0; r < rows; ++r) {
    Rng rng(derive_seed(seed, ids[r], 0x52));
    for (std::size_t i = 0; i < rs; ++i) cand[r * rs + i] += rng.uniform(-epsilon, epsilon);
  }
  return project_linf(x, cand, epsilon);
}

Tensor input_gradient(const Model& model, std::span<const int> labels, const Tensor& x, const LossKind& loss,
                      const Tensor* ref_log_probs) {
  check_batch(x, labels);
  Tensor out(x.shape());
  const std::size_t n = x.dim(0), rs = x.row_size();
  for (std::size_t c = 0; c < chunk_count(n); ++c) {
    const std::size_t b = c * kAttackChunk, e = std::min(n, b + kAttackChunk);
    Tensor ref;
    if (ref_log_probs) ref = ref_log_probs->slice_rows(b, e);
    const Tensor g =
        chunk_gradient(model, labels.subspan(b, e - b), x.slice_rows(b, e), loss, ref_log_probs ? &ref : nullptr, 0);
    std::copy(g.values().begin(), g.values().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * rs));
  }
  return out;
}

Tensor fgsm(const Model& model, std::span<const int> labels, const Tensor& x, double epsilon, const LossKind& loss) {
  if (epsilon < 0.0) throw ConfigError("negative epsilon", "attack.epsilon");
  Tensor ref;
  if (loss.type == LossType::kKl) ref = log_softmax(model.logits(x));
  const Tensor g = input_gradient(model, labels, x, loss, loss.type == LossType::kKl ? &ref : nullptr);
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x[i] + epsilon * sgn(g[i]), 0.0, 1.0);
  return out;
}

Tensor pgd(const Model& model, std::span<const int> labels, const Tensor& x, const AttackConfig& cfg,
           std::span<const std::uint64_t> example_ids, std::size_t threads) {
  cfg.validate();
  check_batch(x, labels);
  const std::size_t n = x.dim(0), rs = x.row_size();
  const auto ids = example_ids.empty() ? default_ids(n)
                                       : std::vector<std::uint64_t>(example_ids.begin(), example_ids.end());
  if (ids.size() != n) throw ShapeError("pgd: id count does not match batch");

  Tensor out(x.shape());
  parallel_for(chunk_count(n), threads, [&](std::size_t c) {
    const std::size_t b = c * kAttackChunk, e = std::min(n, b + kAttackChunk);
    const Tensor xc = x.slice_rows(b, e);
    const auto yc = labels.subspan(b, e - b);
    const auto idc = std::span<const std::uint64_t>(ids).subspan(b, e - b);
    Tensor ref;
    if (cfg.loss.type == LossType::kKl) ref = log_softmax(model.logits(xc));
    Tensor cur = cfg.random_start ? random_start(xc, cfg.epsilon, cfg.seed, idc) : xc;
    Tensor cand(xc.shape());
    for (int t = 0; t < cfg.steps; ++t) {
      const Tensor g = chunk_gradient(model, yc, cur, cfg.loss, cfg.loss.type == LossType::kKl ? &ref : nullptr, t);
      for (std::size_t i = 0; i < cur.size(); ++i) cand[i] = cur[i] + cfg.step_size * sgn(g[i]);
      cur = project_linf(xc, cand, cfg.epsilon);
    }
    std::copy(cur.values().begin(), cur.values().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * rs));
  });
  return out;
}

BallCheck check_ball(const Tensor& x, const Tensor& x_adv) {
  if (x.shape() != x_adv.shape()) throw ShapeError("check_ball: shape mismatch");
  BallCheck r;
  for (std::size_t i = 0; i < x.size(); ++i) {
    r.max_linf = std::max(r.max_linf, std::abs(x_adv[i] - x[i]));
    if (!(x_adv[i] >= 0.0 && x_adv[i] <= 1.0)) r.in_range = false;
  }
  return r;
}

}  // namespace advlab
