#include "advlab_cli/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include "CLI11.hpp"
#include "advlab/config.hpp"
#include "advlab/errors.hpp"
#include "advlab/gradcheck.hpp"
#include "advlab/harness.hpp"
#include "advlab/rng.hpp"

namespace advlab::cli {

namespace fs = std::filesystem;

namespace {

/// Every flag that can override a config field. Unset flags leave the
/// config (file or recipe) untouched.
struct Overrides {
  std::optional<std::string> config;
  std::optional<std::string> recipe;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> checkpoint;
  bool dry_run = false;

  std::optional<std::string> dataset;
  std::optional<std::size_t> classes;
  std::optional<std::string> train_images, train_labels, test_images, test_labels;

  std::optional<std::string> arch;
  std::optional<std::vector<std::size_t>> hidden;

  std::optional<std::string> method;
  std::optional<std::string> spat_alpha;
  std::optional<std::string> lambda;
  std::optional<int> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::string> lr, momentum, weight_decay, lr_factor;
  std::optional<std::vector<int>> milestones;
  bool no_augment = false;
  std::optional<std::size_t> metrics_examples;

  std::optional<std::string> preset;
  std::optional<std::string> epsilon;
  std::optional<std::string> loss;
  std::optional<std::string> alpha;
  std::optional<int> steps;
  std::optional<std::string> step_size;
  std::optional<bool> random_start;
  std::optional<std::size_t> examples;
  std::optional<std::size_t> grid_examples;

  std::optional<std::string> axis;
  std::optional<std::string> values;

  // gradcheck
  std::size_t points = 100;
  double tolerance = 1e-5;
  std::uint64_t gradcheck_seed = 1234;
  std::string inject_sign_bug;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "JSON config file");
  app->add_option("--recipe", o.recipe, "Named base config (default, cifar-recipe)");
  app->add_option("--out", o.out, "Output directory");
  app->add_option("--threads", o.threads, "Worker thread cap (default: ADVLAB_THREADS or 1)");
  app->add_option("--seed", o.seed, "Experiment seed");
  app->add_flag("--dry-run", o.dry_run, "Write config.resolved.json and stop");
  app->add_option("--dataset", o.dataset, "synthetic or idx");
  app->add_option("--classes", o.classes, "Number of classes");
  app->add_option("--train-images", o.train_images, "IDX training images");
  app->add_option("--train-labels", o.train_labels, "IDX training labels");
  app->add_option("--test-images", o.test_images, "IDX test images");
  app->add_option("--test-labels", o.test_labels, "IDX test labels");
}

void add_eval_common(CLI::App* app, Overrides& o) {
  app->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  app->add_option("--epsilon", o.epsilon, "L-inf radius, e.g. 8/255 or 0.3");
  app->add_option("--examples", o.examples, "Test examples to evaluate (0 = all)");
}

void add_attack_flags(CLI::App* app, Overrides& o) {
  app->add_option("--preset", o.preset, "fgsm, pgd20, cw30, pgd10-train");
  app->add_option("--loss", o.loss, "ce, ls, kl, kl-reverse, mart_bce, cw");
  app->add_option("--alpha", o.alpha, "Label smoothing for --loss ls");
  app->add_option("--steps", o.steps, "Override the preset's step count");
  app->add_option("--step-size", o.step_size, "Override the preset's step size");
  app->add_option("--random-start", o.random_start, "Override the preset's random start (true/false)");
}

double number(const std::string& text, const std::string& key) { return Fraction::parse(text, key).value; }

ExperimentConfig resolve(const Overrides& o) {
  if (o.config && o.recipe) throw ConfigError("give either --config or --recipe, not both", "recipe");
  ExperimentConfig c = o.config ? load_config_file(*o.config) : recipe_config(o.recipe.value_or("default"));
  if (o.out) c.out = *o.out;
  if (o.threads) c.threads = *o.threads;
  if (o.seed) c.seed = *o.seed;
  if (o.checkpoint) c.checkpoint = *o.checkpoint;

  if (o.dataset) c.dataset.source = *o.dataset;
  if (o.classes) c.dataset.classes = *o.classes;
  if (o.train_images) c.dataset.train_images = *o.train_images;
  if (o.train_labels) c.dataset.train_labels = *o.train_labels;
  if (o.test_images) c.dataset.test_images = *o.test_images;
  if (o.test_labels) c.dataset.test_labels = *o.test_labels;

  if (o.arch) c.model.arch = *o.arch;
  if (o.hidden) c.model.hidden = *o.hidden;

  if (o.method) c.train.method = *o.method;
  if (o.spat_alpha) c.train.spat_alpha = number(*o.spat_alpha, "train.spat_alpha");
  if (o.lambda) c.train.lambda = number(*o.lambda, "train.lambda");
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.lr) c.train.lr = number(*o.lr, "train.lr");
  if (o.momentum) c.train.momentum = number(*o.momentum, "train.momentum");
  if (o.weight_decay) c.train.weight_decay = number(*o.weight_decay, "train.weight_decay");
  if (o.lr_factor) c.train.lr_factor = number(*o.lr_factor, "train.lr_factor");
  if (o.milestones) c.train.lr_milestones = *o.milestones;
  if (o.no_augment) c.train.augment = false;
  if (o.metrics_examples) c.train.metrics_examples = *o.metrics_examples;

  if (o.preset) c.attack.preset = *o.preset;
  if (o.loss) c.attack.loss = *o.loss;
  if (o.alpha) c.attack.alpha = number(*o.alpha, "attack.alpha");
  if (o.steps) c.attack.steps = *o.steps;
  if (o.step_size) c.attack.step_size = Fraction::parse(*o.step_size, "attack.step_size");
  if (o.random_start) c.attack.random_start = *o.random_start;
  if (o.examples) c.attack.examples = *o.examples;
  if (o.grid_examples) c.attack.grid_examples = *o.grid_examples;

  if (o.axis) c.sweep.axis = *o.axis;
  if (o.values) c.sweep.values = *o.values;
  return c;
}

void require_paths(const ExperimentConfig& c, std::initializer_list<const char*> splits) {
  if (c.dataset.source != "idx") return;
  for (const std::string split : splits) {
    const auto& images = split == "train" ? c.dataset.train_images : c.dataset.test_images;
    const auto& labels = split == "train" ? c.dataset.train_labels : c.dataset.test_labels;
    if (images.empty()) throw ConfigError("path is required for idx datasets", "dataset." + split + "_images");
    if (labels.empty()) throw ConfigError("path is required for idx datasets", "dataset." + split + "_labels");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

fs::path prepare_out(const ExperimentConfig& c) {
  const fs::path out(c.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
  write_text(out / "config.resolved.json", dump_config(c));
  return out;
}

void print_warnings(const ExperimentConfig& c, std::ostream& err) {
  for (const auto& w : c.warnings()) err << "warning: " << w << '\n';
}

Model load_model(const ExperimentConfig& c) {
  if (c.checkpoint.empty()) throw ConfigError("a checkpoint is required", "checkpoint");
  if (!fs::exists(c.checkpoint)) throw ConfigError("no such file: " + c.checkpoint, "checkpoint");
  return load_checkpoint(c.checkpoint);
}

void check_compatible(const Model& m, const Dataset& d) {
  const ArchSpec& s = m.spec();
  if (s.channels != d.channels() || s.height != d.height() || s.width != d.width() || s.classes != d.classes) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "model expects [%zu,%zu,%zu] inputs and %zu classes; dataset has [%zu,%zu,%zu] and %zu",
                  s.channels, s.height, s.width, s.classes, d.channels(), d.height(), d.width(), d.classes);
    throw ConfigError(buf, "checkpoint");
  }
}

Dataset eval_split(const ExperimentConfig& c) {
  Dataset d = load_split(c.dataset, "test");
  if (c.attack.examples > 0 && c.attack.examples < d.size()) {
    std::vector<std::size_t> idx(c.attack.examples);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    d = d.subset(idx);
  }
  return d;
}

std::string model_id(const ExperimentConfig& c) {
  std::string id = fs::path(c.checkpoint).stem().string();
  for (char& ch : id) {
    if (ch == ',' || ch == '\n' || ch == '\r') ch = '_';
  }
  return id.empty() ? "model" : id;
}

void print_rows(const EvalReport& r, std::ostream& out) {
  for (const auto& row : r.rows) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-12s eps=%.4f loss=%-9s alpha=%.2f clean=%.4f robust=%.4f success=%.4f n=%zu\n",
                  row.attack.c_str(), row.epsilon, row.loss.c_str(), row.alpha, row.clean_acc, row.robust_acc,
                  row.success_rate, row.examples);
    out << buf;
  }
}

int cmd_train(const ExperimentConfig& c, bool dry_run, std::ostream& out, std::ostream& err) {
  c.validate();
  require_paths(c, {"train", "test"});
  print_warnings(c, err);
  const fs::path dir = prepare_out(c);
  if (dry_run) {
    out << "wrote " << (dir / "config.resolved.json").string() << '\n';
    return kExitOk;
  }
  const Dataset train_set = load_split(c.dataset, "train");
  const Dataset test_set = load_split(c.dataset, "test");
  Model model = Model::create(c.arch_spec(train_set.channels(), train_set.height(), train_set.width()),
                              derive_seed(c.seed, 0x4d));
  const TrainConfig tc = c.train_config();
  const auto history = train(model, train_set, tc, [&](const EpochMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "epoch %3d lr=%.4g loss=%.4f clean=%.4f robust(train attack)=%.4f\n", m.epoch,
                  m.lr, m.loss, m.clean_acc, m.robust_acc_train_attack);
    out << buf << std::flush;
  });
  save_checkpoint(model, dir / "model.ckpt");
  write_metrics_csv(history, dir / "metrics.csv");
  const auto pred = model.predict(test_set.images);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == test_set.labels[i] ? 1 : 0;
  char buf[128];
  std::snprintf(buf, sizeof buf, "test clean accuracy %.4f (n=%zu)\n", static_cast<double>(ok) / pred.size(),
                pred.size());
  out << buf << "wrote " << (dir / "model.ckpt").string() << ", " << (dir / "metrics.csv").string() << '\n';
  return kExitOk;
}

int cmd_attack(const ExperimentConfig& c, bool dry_run, std::ostream& out, std::ostream& err) {
  c.validate();
  require_paths(c, {"test"});
  print_warnings(c, err);
  const fs::path dir = prepare_out(c);
  if (dry_run) return kExitOk;
  const Model model = load_model(c);
  const Dataset data = eval_split(c);
  check_compatible(model, data);
  const AttackConfig attack = c.attack_config();
  EvalOptions opts;
  opts.threads = c.resolved_threads();
  EvalReport report{model_id(c), data.split, 0.0, {robust_accuracy(model, data, attack, opts)}};
  report.clean_accuracy = report.rows.front().clean_acc;
  write_csv(report, dir / "attack.csv");

  const std::size_t g = std::min(c.attack.grid_examples, data.size());
  const Tensor images = data.images.slice_rows(0, g);
  const std::vector<int> labels(data.labels.begin(), data.labels.begin() + static_cast<std::ptrdiff_t>(g));
  const fs::path grid = dir / (data.channels() == 1 ? "grid.pgm" : "grid.ppm");
  dump_adv_grid(model, images, labels, std::span<const AttackConfig>(&attack, 1), grid);
  print_rows(report, out);
  out << "wrote " << (dir / "attack.csv").string() << ", " << grid.string() << '\n';
  return kExitOk;
}

int cmd_sweep(const ExperimentConfig& c, bool dry_run, std::ostream& out, std::ostream& err) {
  c.validate();
  require_paths(c, {"test"});
  print_warnings(c, err);
  const fs::path dir = prepare_out(c);
  if (dry_run) return kExitOk;
  const Model model = load_model(c);
  const Dataset data = eval_split(c);
  check_compatible(model, data);
  const SweepSpec spec = c.sweep_spec();
  EvalOptions opts;
  opts.threads = c.resolved_threads();
  const EvalReport report = spec.axis == SweepAxis::kAlpha ? alpha_sweep(model, data, spec, opts, model_id(c))
                                                           : epsilon_sweep(model, data, spec, opts, model_id(c));
  write_csv(report, dir / "sweep.csv");
  print_rows(report, out);
  out << "wrote " << (dir / "sweep.csv").string() << '\n';
  return kExitOk;
}

int cmd_eval(const ExperimentConfig& c, bool dry_run, std::ostream& out, std::ostream& err) {
  c.validate();
  require_paths(c, {"test"});
  print_warnings(c, err);
  const fs::path dir = prepare_out(c);
  if (dry_run) return kExitOk;
  const Model model = load_model(c);
  const Dataset data = eval_split(c);
  check_compatible(model, data);
  EvalOptions opts;
  opts.threads = c.resolved_threads();
  EvalReport report{model_id(c), data.split, 0.0, {}};
  for (const char* name : {"fgsm", "pgd20", "cw30"}) {
    AttackConfig a = attack_by_name(name, c.attack.epsilon.value);
    a.seed = c.seed;
    report.rows.push_back(robust_accuracy(model, data, a, opts));
  }
  report.clean_accuracy = report.rows.front().clean_acc;
  write_csv(report, dir / "eval.csv");
  print_rows(report, out);
  out << "wrote " << (dir / "eval.csv").string() << '\n';
  return kExitOk;
}

int cmd_gradcheck(const Overrides& o, std::ostream& out) {
  std::vector<GradCheckCase> cases = primitive_cases();
  for (auto& lc : loss_cases()) cases.push_back(std::move(lc));
  if (!o.inject_sign_bug.empty()) {
    bool known = false;
    for (const auto& tc : cases) known = known || tc.name == o.inject_sign_bug;
    if (!known) throw ConfigError("no gradcheck case named '" + o.inject_sign_bug + "'", "inject-sign-bug");
  }
  if (o.points == 0) throw ConfigError("must be positive", "points");
  SuiteOptions opts;
  opts.points = o.points;
  opts.tolerance = o.tolerance;
  opts.seed = o.gradcheck_seed;
  opts.inject_sign_bug = o.inject_sign_bug;
  const auto rows = run_gradcheck_suite(cases, opts);
  bool all = true;
  for (const auto& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-20s max_rel_err=%.3e  %s\n", r.name.c_str(), r.max_rel_error,
                  r.passed ? "PASS" : "FAIL");
    out << buf;
    all = all && r.passed;
  }
  out << (all ? "all ops within tolerance\n" : "gradient check FAILED\n");
  return all ? kExitOk : kExitFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial robustness lab: train, attack, sweep, eval, gradcheck"};
  app.require_subcommand(1);
  Overrides o;

  CLI::App* train_cmd = app.add_subcommand("train", "Train a model; writes model.ckpt and metrics.csv");
  add_common(train_cmd, o);
  train_cmd->add_option("--method", o.method, "erm, madry, trades, mart");
  train_cmd->add_option("--spat-alpha", o.spat_alpha, "Label smoothing of the inner attack (0 = base method)");
  train_cmd->add_option("--lambda", o.lambda, "Robustness weight for trades/mart");
  train_cmd->add_option("--epsilon", o.epsilon, "Training radius, e.g. 8/255");
  train_cmd->add_option("--epochs", o.epochs, "Epochs");
  train_cmd->add_option("--batch-size", o.batch_size, "Batch size");
  train_cmd->add_option("--lr", o.lr, "Initial learning rate");
  train_cmd->add_option("--momentum", o.momentum, "SGD momentum");
  train_cmd->add_option("--weight-decay", o.weight_decay, "Weight decay");
  train_cmd->add_option("--milestones", o.milestones, "Epochs at which the lr is multiplied by --lr-factor");
  train_cmd->add_option("--lr-factor", o.lr_factor, "LR decay factor");
  train_cmd->add_flag("--no-augment", o.no_augment, "Disable flip/crop augmentation");
  train_cmd->add_option("--metrics-examples", o.metrics_examples, "Examples for the per-epoch pgd20 column");
  train_cmd->add_option("--arch", o.arch, "mlp or conv");
  train_cmd->add_option("--hidden", o.hidden, "Hidden widths or conv channels");

  CLI::App* attack_cmd = app.add_subcommand("attack", "Attack a checkpoint; writes attack.csv and a grid image");
  add_common(attack_cmd, o);
  add_eval_common(attack_cmd, o);
  add_attack_flags(attack_cmd, o);
  attack_cmd->add_option("--grid-examples", o.grid_examples, "Rows of the grid image (1..16)");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Sweep alpha or epsilon; writes sweep.csv");
  add_common(sweep_cmd, o);
  add_eval_common(sweep_cmd, o);
  add_attack_flags(sweep_cmd, o);
  sweep_cmd->add_option("--axis", o.axis, "alpha or epsilon");
  sweep_cmd->add_option("--values", o.values, "start:stop:step or a comma list");

  CLI::App* eval_cmd = app.add_subcommand("eval", "FGSM, PGD-20 and CW30 robust accuracy; writes eval.csv");
  add_common(eval_cmd, o);
  add_eval_common(eval_cmd, o);

  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every op and loss");
  grad_cmd->add_option("--points", o.points, "Random points per op");
  grad_cmd->add_option("--tolerance", o.tolerance, "Max relative error");
  grad_cmd->add_option("--seed", o.gradcheck_seed, "Sampling seed");
  grad_cmd->add_option("--inject-sign-bug", o.inject_sign_bug, "Negate one case's analytic gradient (self-test)")
      ->group("");

  std::vector<char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (grad_cmd->parsed()) return cmd_gradcheck(o, out);
    ExperimentConfig c = resolve(o);
    if (o.epsilon) {
      if (train_cmd->parsed()) {
        c.train.epsilon = Fraction::parse(*o.epsilon, "train.epsilon");
      } else {
        c.attack.epsilon = Fraction::parse(*o.epsilon, "attack.epsilon");
      }
    }
    if (train_cmd->parsed()) return cmd_train(c, o.dry_run, out, err);
    if (attack_cmd->parsed()) return cmd_attack(c, o.dry_run, out, err);
    if (sweep_cmd->parsed()) return cmd_sweep(c, o.dry_run, out, err);
    return cmd_eval(c, o.dry_run, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace advlab::cli
