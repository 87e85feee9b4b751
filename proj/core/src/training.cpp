#include "advlab/training.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "advlab/errors.hpp"
#include "advlab/losses.hpp"
#include "advlab/rng.hpp"

namespace advlab {

std::string method_name(Method m) {
  switch (m) {
    case Method::kErm: return "erm";
    case Method::kMadry: return "madry";
    case Method::kTrades: return "trades";
    case Method::kMart: return "mart";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  if (s == "erm") return Method::kErm;
  if (s == "madry") return Method::kMadry;
  if (s == "trades") return Method::kTrades;
  if (s == "mart") return Method::kMart;
  throw ConfigError("unknown method '" + s + "' (expected erm, madry, trades, mart)", "train.method");
}

std::optional<double> default_lambda(Method m) {
  switch (m) {
    case Method::kTrades: return 6.0;
    case Method::kMart: return 5.0;
    default: return std::nullopt;
  }
}

void TrainConfig::validate() const {
  if (!(spat_alpha >= 0.0 && spat_alpha <= 1.0)) throw ConfigError("must lie in [0,1]", "train.spat_alpha");
  if (lambda && !(*lambda > 0.0)) throw ConfigError("must be > 0", "train.lambda");
  if (epochs < 0) throw ConfigError("must be >= 0", "train.epochs");
  if (batch_size == 0) throw ConfigError("must be positive", "train.batch_size");
  if (!(lr > 0.0)) throw ConfigError("must be > 0", "train.lr");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("must lie in [0,1)", "train.momentum");
  if (!(weight_decay >= 0.0)) throw ConfigError("must be >= 0", "train.weight_decay");
  if (!(lr_factor > 0.0)) throw ConfigError("must be > 0", "train.lr_factor");
  for (std::size_t i = 1; i < lr_milestones.size(); ++i) {
    if (lr_milestones[i] <= lr_milestones[i - 1]) throw ConfigError("must be strictly increasing", "train.lr_milestones");
  }
  train_attack.validate();
  metrics_attack.validate();
}

double TrainConfig::resolved_lambda() const {
  if (lambda) return *lambda;
  return default_lambda(method).value_or(0.0);
}

LossKind TrainConfig::inner_loss() const {
  if (spat_alpha > 0.0) return LossKind::ls(spat_alpha);
  return method == Method::kTrades ? LossKind::kl() : LossKind::ce();
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  int k = 0;
  for (int m : cfg.lr_milestones) {
    if (epoch >= m) ++k;
  }
  return cfg.lr * std::pow(cfg.lr_factor, k);
}

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimizerState& state, double lr,
              double momentum, double weight_decay) {
  if (params.size() != grads.size()) throw ShapeError("sgd_step: parameter/gradient count mismatch");
  if (state.velocity.empty()) {
    for (const auto& p : params) state.velocity.emplace_back(p.shape());
  }
  if (state.velocity.size() != params.size()) throw ShapeError("sgd_step: optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape() || state.velocity[i].shape() != params[i].shape()) {
      throw ShapeError("sgd_step: shape mismatch for parameter " + std::to_string(i));
    }
    if (!grads[i].all_finite()) throw NumericError("sgd_step: non-finite gradient for parameter " + std::to_string(i));
  }
  state.lr = lr;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    Tensor& v = state.velocity[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = momentum * v[j] + (g[j] + weight_decay * p[j]);
      p[j] -= lr * v[j];
    }
  }
}

Var training_loss(Graph& g, Method method, const Model& model, std::span<const Var> params, const Tensor& x,
                  const Tensor& x_adv, std::span<const int> labels, double lambda) {
  switch (method) {
    case Method::kErm: {
      const Var z = model.forward(g, g.constant(x, "x"), params);
      return cross_entropy(g, z, labels);
    }
    case Method::kMadry: {
      const Var z_adv = model.forward(g, g.constant(x_adv, "x_adv"), params);
      return cross_entropy(g, z_adv, labels);
    }
    case Method::kTrades: {
      const Var z = model.forward(g, g.constant(x, "x"), params);
      const Var z_adv = model.forward(g, g.constant(x_adv, "x_adv"), params);
      const Tensor ref = log_softmax(g.value(z));
      return g.add(cross_entropy(g, z, labels), g.scale(kl_divergence(g, ref, z_adv), lambda));
    }
    case Method::kMart: {
      const Tensor ref = log_softmax(model.logits(x));
      const std::size_t k = ref.dim(1);
      Tensor weight({labels.size()});
      for (std::size_t b = 0; b < labels.size(); ++b) {
        weight[b] = 1.0 - std::exp(ref[b * k + static_cast<std::size_t>(labels[b])]);
      }
      const Var z_adv = model.forward(g, g.constant(x_adv, "x_adv"), params);
      const Var kl_rows = kl_divergence_rows(g, ref, z_adv);
      const Var robust = g.mean(g.mul(kl_rows, g.constant(std::move(weight), "1-p_y")));
      return g.add(mart_bce(g, z_adv, labels), g.scale(robust, lambda));
    }
  }
  throw ContractError("unhandled method");
}

double training_loss_value(Method method, const Model& model, const Tensor& x, const Tensor& x_adv,
                           std::span<const int> labels, double lambda) {
  Graph g;
  const auto params = model.bind(g, false);
  return g.value(training_loss(g, method, model, params, x, x_adv, labels, lambda)).item();
}

namespace {

std::size_t count_correct(std::span<const int> pred, std::span<const int> labels) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) c += pred[i] == labels[i] ? 1 : 0;
  return c;
}

}  // namespace

std::vector<EpochMetrics> train(Model& model, const Dataset& data, const TrainConfig& cfg,
                                const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.size() == 0) throw ContractError("train: empty dataset");
  if (data.classes != model.classes()) {
    throw ContractError("train: dataset has " + std::to_string(data.classes) + " classes, model " +
                        std::to_string(model.classes()));
  }
  const double lambda = cfg.resolved_lambda();
  AttackConfig inner = cfg.train_attack;
  inner.loss = cfg.inner_loss();

  OptimizerState opt;
  std::vector<EpochMetrics> history;
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 0x5f));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double loss_sum = 0.0;
    std::size_t clean_ok = 0, robust_ok = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      Dataset batch = data.subset(idx);
      Tensor x = batch.images;
      if (cfg.augment) {
        x = augment(x, derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 0xA000 + batch_index),
                    cfg.augment_padding);
      }

      Tensor x_adv = x;
      if (cfg.method != Method::kErm) {
        AttackConfig step_attack = inner;
        step_attack.seed = derive_seed(cfg.seed ^ inner.seed, static_cast<std::uint64_t>(epoch), 0xA7);
        const std::vector<std::uint64_t> ids(idx.begin(), idx.end());
        x_adv = pgd(model, batch.labels, x, step_attack, ids, cfg.threads);
      }
      clean_ok += count_correct(model.predict(x), batch.labels);
      robust_ok += count_correct(cfg.method == Method::kErm ? model.predict(x) : model.predict(x_adv), batch.labels);

      Graph g;
      const auto pvars = model.bind(g, true);
      const Var loss = training_loss(g, cfg.method, model, pvars, x, x_adv, batch.labels, lambda);
      const double lv = g.value(loss).item();
      if (!std::isfinite(lv)) {
        throw NumericError("train: loss diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
      }
      g.backward(loss);
      std::vector<Tensor> params, grads;
      params.reserve(pvars.size());
      for (std::size_t i = 0; i < pvars.size(); ++i) grads.push_back(g.grad(pvars[i]));
      for (auto& p : model.parameters()) params.push_back(std::move(p.value));
      try {
        sgd_step(params, grads, opt, lr, cfg.momentum, cfg.weight_decay);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
      }
      for (std::size_t i = 0; i < params.size(); ++i) model.parameters()[i].value = std::move(params[i]);
      loss_sum += lv * static_cast<double>(end - start);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.loss = loss_sum / static_cast<double>(n);
    m.clean_acc = static_cast<double>(clean_ok) / static_cast<double>(n);
    m.robust_acc_train_attack = static_cast<double>(robust_ok) / static_cast<double>(n);
    if (cfg.metrics_examples > 0) {
      const std::size_t k = std::min(cfg.metrics_examples, n);
      Tensor xs = data.images.slice_rows(0, k);
      const std::span<const int> ys(data.labels.data(), k);
      AttackConfig ma = cfg.metrics_attack;
      ma.seed = derive_seed(cfg.seed ^ ma.seed, static_cast<std::uint64_t>(epoch), 0xE7);
      const Tensor adv = pgd(model, ys, xs, ma, {}, cfg.threads);
      m.robust_acc_eval_attack = static_cast<double>(count_correct(model.predict(adv), ys)) / static_cast<double>(k);
    }
    history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return history;
}

void write_metrics_csv(std::span<const EpochMetrics> rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "epoch,lr,loss,clean_acc,robust_acc_train_attack,robust_acc_eval_attack\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.6g,%.6f,%.4f,%.4f,", r.epoch, r.lr, r.loss, r.clean_acc,
                  r.robust_acc_train_attack);
    out << buf;
    if (r.robust_acc_eval_attack >= 0.0) {
      std::snprintf(buf, sizeof buf, "%.4f", r.robust_acc_eval_attack);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace advlab
