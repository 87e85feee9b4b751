#include "advlab/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include "advlab/errors.hpp"
#include "advlab/parallel.hpp"
#include "advlab/rng.hpp"
#include "json.hpp"

namespace advlab {

using Json = nlohmann::ordered_json;

Fraction Fraction::parse(const std::string& text, const std::string& key) {
  auto number = [&](const std::string& s) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    if (!s.empty() && *b == '+') ++b;
    const auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e || s.empty()) throw ConfigError("cannot parse '" + text + "' as a number", key);
    return v;
  };
  Fraction f;
  f.text = text;
  const auto slash = text.find('/');
  if (slash == std::string::npos) {
    f.value = number(text);
  } else {
    const double den = number(text.substr(slash + 1));
    if (den == 0.0) throw ConfigError("zero denominator in '" + text + "'", key);
    f.value = number(text.substr(0, slash)) / den;
  }
  if (!std::isfinite(f.value)) throw ConfigError("'" + text + "' is not finite", key);
  return f;
}

Fraction Fraction::of(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return {v, std::string(buf, p)};
}

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

/// Walks one JSON object, reading known keys and rejecting the rest.
class Reader {
 public:
  Reader(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError("expected an object", path_.empty() ? "<root>" : path_);
  }

  const Json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string key(const std::string& k) const { return join(path_, k); }

  void str(const std::string& k, std::string& out) {
    if (const Json* v = find(k)) {
      if (!v->is_string()) throw ConfigError("expected a string", key(k));
      out = v->get<std::string>();
    }
  }

  void number(const std::string& k, double& out) {
    if (const Json* v = find(k)) out = as_number(*v, key(k));
  }

  void opt_number(const std::string& k, std::optional<double>& out) {
    if (const Json* v = find(k)) out = v->is_null() ? std::nullopt : std::optional<double>(as_number(*v, key(k)));
  }

  void fraction(const std::string& k, Fraction& out) {
    if (const Json* v = find(k)) out = as_fraction(*v, key(k));
  }

  void opt_fraction(const std::string& k, std::optional<Fraction>& out) {
    if (const Json* v = find(k)) out = v->is_null() ? std::nullopt : std::optional<Fraction>(as_fraction(*v, key(k)));
  }

  template <typename T>
  void integer(const std::string& k, T& out) {
    if (const Json* v = find(k)) out = as_integer<T>(*v, key(k));
  }

  template <typename T>
  void opt_integer(const std::string& k, std::optional<T>& out) {
    if (const Json* v = find(k)) out = v->is_null() ? std::nullopt : std::optional<T>(as_integer<T>(*v, key(k)));
  }

  template <typename T>
  void integer_list(const std::string& k, std::vector<T>& out) {
    if (const Json* v = find(k)) {
      if (!v->is_array()) throw ConfigError("expected an array", key(k));
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) out.push_back(as_integer<T>((*v)[i], key(k) + "[" + std::to_string(i) + "]"));
    }
  }

  void boolean(const std::string& k, bool& out) {
    if (const Json* v = find(k)) {
      if (!v->is_boolean()) throw ConfigError("expected true or false", key(k));
      out = v->get<bool>();
    }
  }

  void opt_boolean(const std::string& k, std::optional<bool>& out) {
    if (const Json* v = find(k)) {
      if (v->is_null()) {
        out.reset();
      } else if (v->is_boolean()) {
        out = v->get<bool>();
      } else {
        throw ConfigError("expected true, false or null", key(k));
      }
    }
  }

  const Json* object(const std::string& k) {
    const Json* v = find(k);
    if (v && !v->is_object()) throw ConfigError("expected an object", key(k));
    return v;
  }

  void finish() const {
    for (const auto& [k, v] : obj_.items()) {
      if (!seen_.contains(k)) throw ConfigError("unknown key", key(k));
    }
  }

 private:
  static double as_number(const Json& v, const std::string& key) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) return Fraction::parse(v.get<std::string>(), key).value;
    throw ConfigError("expected a number", key);
  }

  static Fraction as_fraction(const Json& v, const std::string& key) {
    if (v.is_string()) return Fraction::parse(v.get<std::string>(), key);
    if (v.is_number()) return Fraction::of(v.get<double>());
    throw ConfigError("expected a number or \"a/b\" string", key);
  }

  template <typename T>
  static T as_integer(const Json& v, const std::string& key) {
    if (v.is_number_integer()) {
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned() || v.get<long long>() >= 0) return static_cast<T>(v.get<unsigned long long>());
        throw ConfigError("must be non-negative", key);
      } else {
        return static_cast<T>(v.get<long long>());
      }
    }
    throw ConfigError("expected an integer", key);
  }

  const Json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

Json fraction_json(const Fraction& f) {
  if (f.text.find('/') != std::string::npos) return f.text;
  return f.value;
}

// Derived description of the inner training attack, dumped for provenance.
Json resolved_attack_json(const TrainConfig& tc) {
  Json ta;
  ta["steps"] = tc.train_attack.steps;
  ta["step_size"] = tc.train_attack.step_size;
  ta["step_size_over_epsilon"] =
      tc.train_attack.epsilon > 0.0 ? Json(tc.train_attack.step_size / tc.train_attack.epsilon) : Json(nullptr);
  ta["random_start"] = tc.train_attack.random_start;
  ta["inner_loss"] = tc.inner_loss().name();
  if (tc.inner_loss().type == LossType::kLabelSmoothed) ta["inner_alpha"] = tc.inner_loss().alpha;
  return ta;
}

void apply_json(const Json& root, ExperimentConfig& cfg) {
  Reader r(root, "");
  r.find("recipe");
  r.integer("seed", cfg.seed);
  r.str("checkpoint", cfg.checkpoint);
  r.str("out", cfg.out);
  r.integer("threads", cfg.threads);

  if (const Json* d = r.object("dataset")) {
    Reader s(*d, "dataset");
    s.str("source", cfg.dataset.source);
    s.integer("classes", cfg.dataset.classes);
    s.integer("seed", cfg.dataset.seed);
    s.integer("train_per_class", cfg.dataset.train_per_class);
    s.integer("test_per_class", cfg.dataset.test_per_class);
    s.integer("image_side", cfg.dataset.image_side);
    s.integer("channels", cfg.dataset.channels);
    s.number("noise", cfg.dataset.noise);
    s.str("train_images", cfg.dataset.train_images);
    s.str("train_labels", cfg.dataset.train_labels);
    s.str("test_images", cfg.dataset.test_images);
    s.str("test_labels", cfg.dataset.test_labels);
    s.finish();
  }
  if (const Json* m = r.object("model")) {
    Reader s(*m, "model");
    s.str("arch", cfg.model.arch);
    s.integer_list("hidden", cfg.model.hidden);
    s.integer("kernel", cfg.model.kernel);
    s.finish();
  }
  const Json* resolved = nullptr;
  if (const Json* t = r.object("train")) {
    Reader s(*t, "train");
    s.str("method", cfg.train.method);
    s.number("spat_alpha", cfg.train.spat_alpha);
    s.opt_number("lambda", cfg.train.lambda);
    s.integer("epochs", cfg.train.epochs);
    s.integer("batch_size", cfg.train.batch_size);
    s.number("lr", cfg.train.lr);
    s.number("momentum", cfg.train.momentum);
    s.number("weight_decay", cfg.train.weight_decay);
    s.integer_list("lr_milestones", cfg.train.lr_milestones);
    s.number("lr_factor", cfg.train.lr_factor);
    s.boolean("augment", cfg.train.augment);
    s.integer("augment_padding", cfg.train.augment_padding);
    s.str("attack", cfg.train.attack);
    s.fraction("epsilon", cfg.train.epsilon);
    s.str("metrics_attack", cfg.train.metrics_attack);
    s.integer("metrics_examples", cfg.train.metrics_examples);
    resolved = s.object("resolved_attack");
    s.finish();
  }
  if (const Json* a = r.object("attack")) {
    Reader s(*a, "attack");
    s.str("preset", cfg.attack.preset);
    s.fraction("epsilon", cfg.attack.epsilon);
    s.str("loss", cfg.attack.loss);
    s.number("alpha", cfg.attack.alpha);
    s.opt_integer("steps", cfg.attack.steps);
    s.opt_fraction("step_size", cfg.attack.step_size);
    s.opt_boolean("random_start", cfg.attack.random_start);
    s.integer("examples", cfg.attack.examples);
    s.integer("grid_examples", cfg.attack.grid_examples);
    s.finish();
  }
  if (const Json* w = r.object("sweep")) {
    Reader s(*w, "sweep");
    s.str("axis", cfg.sweep.axis);
    s.str("values", cfg.sweep.values);
    s.finish();
  }
  r.finish();
  // Accepted so a dumped config loads back; it must agree with what it summarizes.
  if (resolved) {
    const auto expect = nlohmann::json::parse(resolved_attack_json(cfg.train_config()).dump());
    if (nlohmann::json::parse(resolved->dump()) != expect) {
      throw ConfigError("does not match the train settings (expected " + expect.dump() + ")", "train.resolved_attack");
    }
  }
}

/// Re-keys ConfigErrors thrown by lower layers.
template <typename F>
auto rekey(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    if (!e.key().empty() && msg.starts_with(e.key() + ": ")) msg.erase(0, e.key().size() + 2);
    throw ConfigError(msg, key);
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (dataset.source != "synthetic" && dataset.source != "idx") {
    throw ConfigError("expected 'synthetic' or 'idx', got '" + dataset.source + "'", "dataset.source");
  }
  if (dataset.classes < 2) throw ConfigError("need at least 2 classes", "dataset.classes");
  if (dataset.source == "synthetic") {
    if (dataset.train_per_class == 0) throw ConfigError("must be positive", "dataset.train_per_class");
    if (dataset.test_per_class == 0) throw ConfigError("must be positive", "dataset.test_per_class");
    if (dataset.image_side < 4) throw ConfigError("must be >= 4", "dataset.image_side");
    if (dataset.channels != 1 && dataset.channels != 3) throw ConfigError("must be 1 or 3", "dataset.channels");
    if (!(dataset.noise >= 0.0)) throw ConfigError("must be >= 0", "dataset.noise");
  }
  if (model.arch != "mlp" && model.arch != "conv") {
    throw ConfigError("expected 'mlp' or 'conv', got '" + model.arch + "'", "model.arch");
  }
  if (model.hidden.empty()) throw ConfigError("need at least one layer", "model.hidden");
  for (std::size_t h : model.hidden) {
    if (h == 0) throw ConfigError("layer widths must be positive", "model.hidden");
  }
  if (model.kernel % 2 == 0) throw ConfigError("must be odd", "model.kernel");

  rekey("train.method", [&] { return parse_method(train.method); });
  if (train.epsilon.value < 0.0) throw ConfigError("must be >= 0", "train.epsilon");
  rekey("train.attack", [&] { return attack_by_name(train.attack, train.epsilon.value); });
  rekey("train.metrics_attack", [&] { return attack_by_name(train.metrics_attack, train.epsilon.value); });
  train_config().validate();

  if (attack.epsilon.value < 0.0) throw ConfigError("must be >= 0", "attack.epsilon");
  if (!attack.loss.empty() && attack.loss != "ls" && attack.alpha != 0.0) {
    throw ConfigError("alpha only applies to loss 'ls'", "attack.alpha");
  }
  if (attack.loss.empty() && attack.alpha != 0.0) throw ConfigError("alpha needs loss 'ls'", "attack.alpha");
  attack_config().validate();
  if (attack.grid_examples == 0 || attack.grid_examples > 16) {
    throw ConfigError("must lie in [1,16]", "attack.grid_examples");
  }

  if (sweep.axis != "alpha" && sweep.axis != "epsilon") {
    throw ConfigError("expected 'alpha' or 'epsilon', got '" + sweep.axis + "'", "sweep.axis");
  }
  sweep_spec().validate();
}

std::vector<std::string> ExperimentConfig::warnings() const {
  std::vector<std::string> w;
  if (train.lambda && (train.method == "madry" || train.method == "erm")) {
    w.push_back("train.lambda is ignored by method '" + train.method + "'");
  }
  return w;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.method = rekey("train.method", [&] { return parse_method(train.method); });
  t.spat_alpha = train.spat_alpha;
  t.lambda = train.lambda;
  t.epochs = train.epochs;
  t.batch_size = train.batch_size;
  t.lr = train.lr;
  t.momentum = train.momentum;
  t.weight_decay = train.weight_decay;
  t.lr_milestones = train.lr_milestones;
  t.lr_factor = train.lr_factor;
  t.augment = train.augment;
  t.augment_padding = train.augment_padding;
  t.train_attack = rekey("train.attack", [&] { return attack_by_name(train.attack, train.epsilon.value); });
  t.metrics_attack =
      rekey("train.metrics_attack", [&] { return attack_by_name(train.metrics_attack, train.epsilon.value); });
  t.metrics_examples = train.metrics_examples;
  t.seed = seed;
  t.threads = resolved_threads();
  return t;
}

AttackConfig ExperimentConfig::attack_config() const {
  AttackConfig a = rekey("attack.preset", [&] { return attack_by_name(attack.preset, attack.epsilon.value); });
  if (!attack.loss.empty()) a.loss = rekey("attack.loss", [&] { return LossKind::parse(attack.loss, attack.alpha); });
  if (attack.steps) a.steps = *attack.steps;
  if (attack.step_size) a.step_size = attack.step_size->value;
  if (attack.random_start) a.random_start = *attack.random_start;
  a.seed = seed;
  return a;
}

SweepSpec ExperimentConfig::sweep_spec() const {
  SweepSpec s;
  s.axis = sweep.axis == "epsilon" ? SweepAxis::kEpsilon : SweepAxis::kAlpha;
  s.values = parse_sweep_values(sweep.values);
  s.base = attack_config();
  return s;
}

ArchSpec ExperimentConfig::arch_spec(std::size_t channels, std::size_t height, std::size_t width) const {
  if (model.arch == "mlp") {
    std::vector<std::size_t> layers{channels * height * width};
    layers.insert(layers.end(), model.hidden.begin(), model.hidden.end());
    layers.push_back(dataset.classes);
    ArchSpec s = ArchSpec::mlp(layers);
    s.channels = channels;
    s.height = height;
    s.width = width;
    return s;
  }
  return ArchSpec::conv(channels, height, width, model.hidden, dataset.classes, model.kernel);
}

std::size_t ExperimentConfig::resolved_threads() const { return threads > 0 ? threads : default_thread_count(); }

std::vector<std::string> recipe_names() { return {"default", "cifar-recipe"}; }

ExperimentConfig recipe_config(const std::string& name) {
  ExperimentConfig c;
  c.recipe = name;
  if (name == "default") return c;
  if (name == "cifar-recipe") {
    c.dataset.image_side = 32;
    c.dataset.channels = 3;
    c.model.hidden = {16, 32};
    c.train.epochs = 100;
    c.train.batch_size = 128;
    c.train.lr = 0.1;
    c.train.momentum = 0.9;
    c.train.weight_decay = 7e-4;
    c.train.lr_milestones = {75, 90};
    c.train.lr_factor = 0.1;
    c.train.augment = true;
    c.train.augment_padding = 4;
    c.train.attack = "pgd10-train";
    c.train.epsilon = Fraction::parse("8/255", "train.epsilon");
    c.attack.preset = "pgd20";
    c.attack.epsilon = Fraction::parse("8/255", "attack.epsilon");
    return c;
  }
  throw ConfigError("unknown recipe '" + name + "' (expected default, cifar-recipe)", "recipe");
}

ExperimentConfig parse_config(const std::string& json_text) {
  Json root;
  try {
    root = Json::parse(json_text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what(), "<file>");
  }
  if (!root.is_object()) throw ConfigError("expected an object", "<root>");
  std::string recipe = "default";
  if (const auto it = root.find("recipe"); it != root.end()) {
    if (!it->is_string()) throw ConfigError("expected a string", "recipe");
    recipe = it->get<std::string>();
  }
  ExperimentConfig cfg = recipe_config(recipe);
  apply_json(root, cfg);
  return cfg;
}

ExperimentConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string(), "config");
  return parse_config(std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
}

std::string dump_config(const ExperimentConfig& cfg) {
  Json j;
  j["recipe"] = cfg.recipe;
  j["seed"] = cfg.seed;
  j["checkpoint"] = cfg.checkpoint;

  Json& d = j["dataset"];
  d["source"] = cfg.dataset.source;
  d["classes"] = cfg.dataset.classes;
  if (cfg.dataset.source == "idx") {
    d["train_images"] = cfg.dataset.train_images;
    d["train_labels"] = cfg.dataset.train_labels;
    d["test_images"] = cfg.dataset.test_images;
    d["test_labels"] = cfg.dataset.test_labels;
  } else {
    d["seed"] = cfg.dataset.seed;
    d["train_per_class"] = cfg.dataset.train_per_class;
    d["test_per_class"] = cfg.dataset.test_per_class;
    d["image_side"] = cfg.dataset.image_side;
    d["channels"] = cfg.dataset.channels;
    d["noise"] = cfg.dataset.noise;
  }

  Json& m = j["model"];
  m["arch"] = cfg.model.arch;
  m["hidden"] = cfg.model.hidden;
  m["kernel"] = cfg.model.kernel;

  const TrainConfig tc = cfg.train_config();
  Json& t = j["train"];
  t["method"] = cfg.train.method;
  t["spat_alpha"] = cfg.train.spat_alpha;
  const double lambda = tc.resolved_lambda();
  t["lambda"] = (tc.method == Method::kTrades || tc.method == Method::kMart) ? Json(lambda) : Json(nullptr);
  t["epochs"] = cfg.train.epochs;
  t["batch_size"] = cfg.train.batch_size;
  t["lr"] = cfg.train.lr;
  t["momentum"] = cfg.train.momentum;
  t["weight_decay"] = cfg.train.weight_decay;
  t["lr_milestones"] = cfg.train.lr_milestones;
  t["lr_factor"] = cfg.train.lr_factor;
  t["augment"] = cfg.train.augment;
  t["augment_padding"] = cfg.train.augment_padding;
  t["attack"] = cfg.train.attack;
  t["epsilon"] = fraction_json(cfg.train.epsilon);
  t["metrics_attack"] = cfg.train.metrics_attack;
  t["metrics_examples"] = cfg.train.metrics_examples;
  // Derived from the above; informational.
  t["resolved_attack"] = resolved_attack_json(tc);

  Json& a = j["attack"];
  a["preset"] = cfg.attack.preset;
  a["epsilon"] = fraction_json(cfg.attack.epsilon);
  a["loss"] = cfg.attack.loss;
  a["alpha"] = cfg.attack.alpha;
  a["steps"] = cfg.attack.steps ? Json(*cfg.attack.steps) : Json(nullptr);
  a["step_size"] = cfg.attack.step_size ? fraction_json(*cfg.attack.step_size) : Json(nullptr);
  a["random_start"] = cfg.attack.random_start ? Json(*cfg.attack.random_start) : Json(nullptr);
  a["examples"] = cfg.attack.examples;
  a["grid_examples"] = cfg.attack.grid_examples;

  Json& s = j["sweep"];
  s["axis"] = cfg.sweep.axis;
  s["values"] = cfg.sweep.values;
  return j.dump(2) + "\n";
}

Dataset load_split(const DatasetSection& ds, const std::string& split) {
  if (split != "train" && split != "test") throw ContractError("load_split: unknown split '" + split + "'");
  if (ds.source == "idx") {
    const std::string& images = split == "train" ? ds.train_images : ds.test_images;
    const std::string& labels = split == "train" ? ds.train_labels : ds.test_labels;
    if (images.empty()) throw ConfigError("path is required for idx datasets", "dataset." + split + "_images");
    if (labels.empty()) throw ConfigError("path is required for idx datasets", "dataset." + split + "_labels");
    if (!std::filesystem::exists(images)) throw ConfigError("no such file: " + images, "dataset." + split + "_images");
    if (!std::filesystem::exists(labels)) throw ConfigError("no such file: " + labels, "dataset." + split + "_labels");
    Dataset d = load_idx(images, labels, ds.classes);
    d.split = split;
    return d;
  }
  SynthSpec s;
  s.classes = ds.classes;
  s.n_per_class = split == "train" ? ds.train_per_class : ds.test_per_class;
  s.image_side = ds.image_side;
  s.channels = ds.channels;
  s.noise = ds.noise;
  s.split = split;
  s.seed = derive_seed(ds.seed, split == "train" ? 1 : 2);
  return synth_dataset(s);
}

}  // namespace advlab
