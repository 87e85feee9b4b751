#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advlab/attacks.hpp"
#include "advlab/data.hpp"
#include "advlab/model.hpp"

namespace advlab {

struct EvalRow {
  std::string attack;
  double epsilon = 0.0;
  std::string loss;
  double alpha = 0.0;
  double clean_acc = 0.0;
  double robust_acc = 0.0;
  double success_rate = 0.0;
  /// Examples evaluated.
  std::size_t examples = 0;

  friend bool operator==(const EvalRow&, const EvalRow&) = default;
};

/// Accuracy report. Success rate counts every example misclassified after the
/// attack, so robust_acc + success_rate == 1 per row.
struct EvalReport {
  std::string model_id;
  std::string split;
  double clean_accuracy = 0.0;
  std::vector<EvalRow> rows;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct EvalOptions {
  std::size_t threads = 1;
  /// Examples per evaluation shard; each shard is attacked independently.
  std::size_t shard_size = 256;
};

/// Clean and post-attack accuracy of `model` on `data`. Example i is attacked
/// with random-start stream (attack.seed, i), so results are independent of
/// sharding and thread count. Every shard's adversarial batch is checked
/// against the epsilon ball; a violation throws ContractError.
EvalRow robust_accuracy(const Model& model, const Dataset& data, const AttackConfig& attack,
                        const EvalOptions& opts = {});

enum class SweepAxis { kAlpha, kEpsilon };

struct SweepSpec {
  SweepAxis axis = SweepAxis::kAlpha;
  std::vector<double> values;
  AttackConfig base;

  /// Values must be non-empty and strictly increasing; alphas lie in [0,1]
  /// and epsilons are >= 0.
  void validate() const;
};

/// One row per alpha with LS(alpha) substituted into the base attack.
EvalReport alpha_sweep(const Model& model, const Dataset& data, const SweepSpec& spec, const EvalOptions& opts = {},
                       const std::string& model_id = "model");
/// One row per epsilon; the preset's step size is rescaled with epsilon
/// (step_size / base.epsilon stays fixed).
EvalReport epsilon_sweep(const Model& model, const Dataset& data, const SweepSpec& spec, const EvalOptions& opts = {},
                         const std::string& model_id = "model");

/// Parses "start:stop:step" (inclusive) or a comma list; entries may be
/// fractions such as 8/255.
std::vector<double> parse_sweep_values(const std::string& text);

inline constexpr const char* kCsvHeader = "model,split,n,attack,epsilon,loss,alpha,clean_acc,robust_acc,success_rate";

/// CSV with header kCsvHeader and numbers at 4 decimal places. success_rate
/// is written as 1 - robust_acc at that precision.
std::string to_csv(const EvalReport& report);
void write_csv(const EvalReport& report, const std::filesystem::path& path);
EvalReport parse_csv(const std::string& text);
EvalReport read_csv(const std::filesystem::path& path);
/// The report as it reads back from CSV (values rounded to 4 places).
EvalReport quantized(const EvalReport& report);

/// 8-bit grayscale (P5) or color (P6) image.
struct PnmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved channels
};

void write_pnm(const PnmImage& img, const std::filesystem::path& path);
PnmImage read_pnm(const std::filesystem::path& path);

/// Grid of example rows; columns are the original then one per attack.
/// Cells are separated by 1-pixel white lines. Pixel = round(value * 255).
/// Writes P5 for 1-channel images, P6 for 3-channel ones.
PnmImage adv_grid(const Model& model, const Tensor& images, std::span<const int> labels,
                  std::span<const AttackConfig> attacks);
void dump_adv_grid(const Model& model, const Tensor& images, std::span<const int> labels,
                   std::span<const AttackConfig> attacks, const std::filesystem::path& out_path);

}  // namespace advlab
