#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "advlab/attacks.hpp"
#include "advlab/data.hpp"
#include "advlab/harness.hpp"
#include "advlab/model.hpp"
#include "advlab/training.hpp"

namespace advlab {

/// A number that remembers how it was written, so "8/255" survives a
/// load/dump cycle unchanged.
struct Fraction {
  double value = 0.0;
  std::string text = "0";

  /// Accepts "a/b" or a decimal. Throws ConfigError naming `key`.
  static Fraction parse(const std::string& text, const std::string& key);
  /// Shortest decimal text that reads back to `v`.
  static Fraction of(double v);

  friend bool operator==(const Fraction& a, const Fraction& b) { return a.value == b.value && a.text == b.text; }
};

struct DatasetSection {
  /// "synthetic" or "idx".
  std::string source = "synthetic";
  std::size_t classes = 10;
  // synthetic
  std::uint64_t seed = 0;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  std::size_t image_side = 12;
  std::size_t channels = 1;
  double noise = 0.1;
  // idx
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
};

struct ModelSection {
  /// "mlp" or "conv".
  std::string arch = "conv";
  /// Hidden widths (mlp) or conv channels (conv).
  std::vector<std::size_t> hidden{4, 8};
  std::size_t kernel = 3;
};

struct TrainSection {
  std::string method = "madry";
  double spat_alpha = 0.0;
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
  std::string attack = "pgd10-train";
  Fraction epsilon = Fraction::parse("8/255", "train.epsilon");
  std::string metrics_attack = "pgd20";
  std::size_t metrics_examples = 0;
};

struct AttackSection {
  std::string preset = "pgd20";
  Fraction epsilon = Fraction::parse("8/255", "attack.epsilon");
  /// ce, ls, kl, kl-reverse, mart_bce, cw; empty keeps the preset's loss.
  std::string loss;
  double alpha = 0.0;
  std::optional<int> steps;
  std::optional<Fraction> step_size;
  std::optional<bool> random_start;
  /// Test examples evaluated (0 = whole split).
  std::size_t examples = 0;
  /// Rows of the adversarial grid image.
  std::size_t grid_examples = 8;
};

struct SweepSection {
  /// "alpha" or "epsilon".
  std::string axis = "alpha";
  std::string values = "0:1:0.1";
};

/// Everything a command needs. `threads` and `out` are execution details and
/// are left out of the resolved dump; everything else determines results.
struct ExperimentConfig {
  std::string recipe = "default";
  std::uint64_t seed = 0;
  std::string checkpoint;
  DatasetSection dataset;
  ModelSection model;
  TrainSection train;
  AttackSection attack;
  SweepSection sweep;

  std::string out = "runs";
  std::size_t threads = 0;

  /// Throws ConfigError with the dotted key path of the first bad field.
  void validate() const;
  /// Non-fatal remarks, e.g. lambda set for a method that ignores it.
  std::vector<std::string> warnings() const;

  TrainConfig train_config() const;
  AttackConfig attack_config() const;
  SweepSpec sweep_spec() const;
  ArchSpec arch_spec(std::size_t channels, std::size_t height, std::size_t width) const;
  /// threads, or ADVLAB_THREADS (else 1) when 0.
  std::size_t resolved_threads() const;
};

/// Named presets: "default" and "cifar-recipe".
ExperimentConfig recipe_config(const std::string& name);
std::vector<std::string> recipe_names();

/// Applies a JSON document on top of a recipe. A top-level "recipe" key picks
/// the base; otherwise "default". Unknown keys are errors.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config_file(const std::filesystem::path& path);
/// Pretty JSON with every result-relevant field resolved.
std::string dump_config(const ExperimentConfig& cfg);

/// Loads or generates the "train" or "test" split. IDX paths must be set.
Dataset load_split(const DatasetSection& ds, const std::string& split);

}  // namespace advlab
