#include "advlab/losses.hpp"

#include <cmath>

#include "advlab/errors.hpp"

namespace advlab {

namespace {

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("smoothing alpha " + std::to_string(alpha) + " outside [0,1]", "alpha");
  }
}

void check_labels(std::span<const int> labels, std::size_t classes) {
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ContractError("label " + std::to_string(y) + " outside [0," + std::to_string(classes) + ")");
    }
  }
}

std::size_t class_count(const Graph& g, Var logits) {
  const Tensor& z = g.value(logits);
  if (z.rank() != 2) throw ShapeError("loss: logits must be [B,K], got " + shape_str(z.shape()));
  return z.dim(1);
}

// Evaluates a graph-level loss on constant inputs.
template <typename Fn>
double evaluate(const Tensor& logits, Fn&& fn) {
  Graph g;
  const Var z = g.constant(logits, "logits");
  return g.value(fn(g, z)).item();
}

}  // namespace

std::vector<double> SmoothedTarget::materialize() const {
  if (classes < 2) throw ContractError("smoothed target needs K >= 2");
  check_alpha(alpha);
  if (true_class < 0 || static_cast<std::size_t>(true_class) >= classes) {
    throw ContractError("smoothed target: true class " + std::to_string(true_class) + " out of range");
  }
  std::vector<double> t(classes, alpha / static_cast<double>(classes - 1));
  t[static_cast<std::size_t>(true_class)] = 1.0 - alpha;
  return t;
}

Tensor smoothed_targets(std::span<const int> labels, std::size_t classes, double alpha) {
  check_labels(labels, classes);
  Tensor t({labels.size(), classes});
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const auto row = SmoothedTarget{classes, alpha, labels[b]}.materialize();
    std::copy(row.begin(), row.end(), t.data().begin() + static_cast<std::ptrdiff_t>(b * classes));
  }
  return t;
}

LossKind LossKind::ls(double alpha) {
  check_alpha(alpha);
  return {LossType::kLabelSmoothed, alpha, KlDirection::kForward};
}

std::string LossKind::name() const {
  switch (type) {
    case LossType::kCrossEntropy: return "ce";
    case LossType::kLabelSmoothed: return "ls";
    case LossType::kKl: return kl_direction == KlDirection::kForward ? "kl" : "kl-reverse";
    case LossType::kMartBce: return "mart_bce";
    case LossType::kCwMargin: return "cw";
  }
  return "?";
}

LossKind LossKind::parse(const std::string& name, double alpha) {
  if (name == "ce") return ce();
  if (name == "ls") return ls(alpha);
  if (name == "kl") return kl();
  if (name == "kl-reverse") return kl(KlDirection::kReverse);
  if (name == "mart_bce") return mart_bce();
  if (name == "cw") return cw_margin();
  throw ConfigError("unknown loss '" + name + "' (expected ce, ls, kl, kl-reverse, mart_bce, cw)", "loss");
}

Var cross_entropy(Graph& g, Var logits, std::span<const int> labels) {
  const Var lp = g.log_softmax(logits);
  return g.scale(g.mean(g.pick(lp, labels)), -1.0);
}

Var label_smoothed_ce(Graph& g, Var logits, std::span<const int> labels, double alpha) {
  const std::size_t k = class_count(g, logits);
  if (k < 2) throw ContractError("label_smoothed_ce needs K >= 2");
  check_alpha(alpha);
  if (labels.size() != g.value(logits).dim(0)) throw ShapeError("label_smoothed_ce: label count mismatch");
  const Var targets = g.constant(smoothed_targets(labels, k, alpha), "y_ls");
  const Var lp = g.log_softmax(logits);
  return g.scale(g.mean(g.sum_rows(g.mul(targets, lp))), -1.0);
}

void check_log_distribution(const Tensor& log_probs, double tol) {
  if (log_probs.rank() != 2) throw ShapeError("log distribution must be [B,K]");
  const std::size_t rows = log_probs.dim(0), cols = log_probs.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(log_probs[r * cols + j]);
    if (!(std::abs(s - 1.0) <= tol)) {
      throw ContractError("reference row " + std::to_string(r) + " sums to " + std::to_string(s) + ", not 1");
    }
  }
}

Var kl_divergence_rows(Graph& g, const Tensor& ref_log_probs, Var logits) {
  const Tensor& z = g.value(logits);
  if (ref_log_probs.shape() != z.shape()) {
    throw ShapeError("kl_divergence: reference " + shape_str(ref_log_probs.shape()) + " vs logits " +
                     shape_str(z.shape()));
  }
  check_log_distribution(ref_log_probs);
  const std::size_t rows = z.dim(0), cols = z.dim(1);
  Tensor probs(ref_log_probs.shape());
  Tensor neg_entropy({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double p = std::exp(ref_log_probs[r * cols + j]);
      probs[r * cols + j] = p;
      if (p > 0.0) s += p * ref_log_probs[r * cols + j];
    }
    neg_entropy[r] = s;
  }
  const Var p = g.constant(std::move(probs), "p_ref");
  const Var h = g.constant(std::move(neg_entropy), "p_ref_log_p_ref");
  return g.sub(h, g.sum_rows(g.mul(p, g.log_softmax(logits))));
}

Var kl_divergence(Graph& g, const Tensor& ref_log_probs, Var logits) {
  return g.mean(kl_divergence_rows(g, ref_log_probs, logits));
}

Var kl_divergence_reverse(Graph& g, const Tensor& ref_log_probs, Var logits) {
  const Tensor& z = g.value(logits);
  if (ref_log_probs.shape() != z.shape()) throw ShapeError("kl_divergence_reverse: shape mismatch");
  check_log_distribution(ref_log_probs);
  const Var lq = g.log_softmax(logits);
  const Var lp = g.constant(ref_log_probs, "log_p_ref");
  return g.mean(g.sum_rows(g.mul(g.exp(lq), g.sub(lq, lp))));
}

Var mart_bce(Graph& g, Var logits, std::span<const int> labels) {
  if (class_count(g, logits) < 2) throw ContractError("mart_bce needs K >= 2");
  const Var lp = g.log_softmax(logits);
  const Var true_term = g.pick(lp, labels);
  const Var other_term = g.log1mexp(g.max_other(lp, labels));
  return g.scale(g.mean(g.add(true_term, other_term)), -1.0);
}

Var cw_margin(Graph& g, Var logits, std::span<const int> labels) {
  if (class_count(g, logits) < 2) throw ContractError("cw_margin needs K >= 2");
  return g.mean(g.sub(g.max_other(logits, labels), g.pick(logits, labels)));
}

Var attack_loss(Graph& g, const LossKind& kind, Var logits, std::span<const int> labels, const Tensor* ref_log_probs) {
  switch (kind.type) {
    case LossType::kCrossEntropy: return cross_entropy(g, logits, labels);
    case LossType::kLabelSmoothed: return label_smoothed_ce(g, logits, labels, kind.alpha);
    case LossType::kKl:
      if (ref_log_probs == nullptr) throw ContractError("KL attack loss needs the clean reference distribution");
      return kind.kl_direction == KlDirection::kForward ? kl_divergence(g, *ref_log_probs, logits)
                                                        : kl_divergence_reverse(g, *ref_log_probs, logits);
    case LossType::kMartBce: return mart_bce(g, logits, labels);
    case LossType::kCwMargin: return cw_margin(g, logits, labels);
  }
  throw ContractError("unhandled loss kind");
}

Tensor log_softmax(const Tensor& logits) {
  Graph g;
  const Var z = g.constant(logits);
  return g.value(g.log_softmax(z));
}

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
  return evaluate(logits, [&](Graph& g, Var z) { return cross_entropy(g, z, labels); });
}

double label_smoothed_ce(const Tensor& logits, std::span<const int> labels, double alpha) {
  return evaluate(logits, [&](Graph& g, Var z) { return label_smoothed_ce(g, z, labels, alpha); });
}

double kl_divergence(const Tensor& ref_log_probs, const Tensor& logits) {
  return evaluate(logits, [&](Graph& g, Var z) { return kl_divergence(g, ref_log_probs, z); });
}

double mart_bce(const Tensor& logits, std::span<const int> labels) {
  return evaluate(logits, [&](Graph& g, Var z) { return mart_bce(g, z, labels); });
}

double cw_margin(const Tensor& logits, std::span<const int> labels) {
  return evaluate(logits, [&](Graph& g, Var z) { return cw_margin(g, z, labels); });
}

}  // namespace advlab
