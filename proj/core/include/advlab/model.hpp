#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advlab/graph.hpp"
#include "advlab/tensor.hpp"

namespace advlab {

enum class Arch : std::uint32_t { kMlp = 1, kConv = 2 };

/// Architecture descriptor. Inputs are images [C,H,W]; an MLP flattens them.
///   MLP:  C*H*W -> hidden[0] -> ... -> classes, relu between layers.
///   Conv: conv(hidden[0]) -> relu -> ... -> flatten -> dense(classes);
///         kernel x kernel, stride 1, "same" zero padding.
struct ArchSpec {
  Arch arch = Arch::kMlp;
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::vector<std::size_t> hidden;
  std::size_t kernel = 3;
  std::size_t classes = 10;

  /// `layers` = {input, hidden..., classes}, e.g. {784, 128, 10}.
  static ArchSpec mlp(const std::vector<std::size_t>& layers);
  static ArchSpec conv(std::size_t channels, std::size_t height, std::size_t width,
                       std::vector<std::size_t> conv_channels, std::size_t classes, std::size_t kernel = 3);

  std::size_t input_size() const { return channels * height * width; }
  /// Throws ConfigError describing the first invalid field.
  void validate() const;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Small classifier producing logits. Immutable during evaluation, so one
/// instance may be read by many threads; training mutates it exclusively.
class Model {
 public:
  /// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for
  /// weights and biases. Same (spec, seed) gives identical parameters.
  static Model create(const ArchSpec& spec, std::uint64_t seed);

  const ArchSpec& spec() const noexcept { return spec_; }
  std::size_t classes() const noexcept { return spec_.classes; }

  std::vector<NamedTensor>& parameters() noexcept { return params_; }
  const std::vector<NamedTensor>& parameters() const noexcept { return params_; }
  std::size_t parameter_count() const;

  /// Records every parameter as a leaf of `g`, in declaration order.
  std::vector<Var> bind(Graph& g, bool requires_grad) const;

  /// Records the forward pass for `x` ([B,C,H,W] or [B,C*H*W]) and returns
  /// the [B,K] logits node. `params` must come from bind() on the same graph.
  Var forward(Graph& g, Var x, std::span<const Var> params) const;

  Tensor logits(const Tensor& x) const;
  /// Argmax per row; ties go to the lowest class index.
  std::vector<int> predict(const Tensor& x) const;

  /// FNV-1a over the raw parameter bytes; used to prove attacks leave the
  /// model untouched.
  std::uint64_t checksum() const;

 private:
  ArchSpec spec_;
  std::vector<NamedTensor> params_;
};

std::vector<int> argmax_rows(const Tensor& logits);

/// Checkpoint layout (all little-endian):
///   "ATLB" | u32 version | u32 arch | u32 channels | u32 height | u32 width |
///   u32 kernel | u32 classes | u32 n_hidden | u32 hidden[n_hidden] |
///   f64 parameters in declaration order
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_model(const Model& model);
Model deserialize_model(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace advlab
