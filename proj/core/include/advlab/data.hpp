#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advlab/tensor.hpp"

namespace advlab {

/// Images [N,C,H,W] with pixels in [0,1] plus labels in [0,K).
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t classes = 0;
  std::string split;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }

  /// Rows `idx` of this dataset, in order.
  Dataset subset(std::span<const std::size_t> idx) const;
  /// Throws ContractError if a pixel leaves [0,1] or a label leaves [0,K).
  void validate() const;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Big-endian IDX pair. Pixels are scaled by 1/255; labels must be < classes.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t classes = 10);
Dataset parse_idx(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes,
                  std::size_t classes = 10);

/// Inverse of parse_idx for single-channel datasets; pixels are written as
/// round(v * 255).
std::vector<std::uint8_t> encode_idx_images(const Dataset& ds);
std::vector<std::uint8_t> encode_idx_labels(const Dataset& ds);
void save_idx(const Dataset& ds, const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t n_per_class = 100;
  std::size_t classes = 10;
  std::size_t image_side = 12;
  std::size_t channels = 1;
  /// Std-dev of additive Gaussian pixel noise.
  double noise = 0.1;
  std::string split = "train";
};

/// Class-conditional stripe-and-blob images with seeded noise. Each class has
/// a fixed stripe orientation/phase and blob position; samples jitter both
/// and add noise. Examples are interleaved by class.
Dataset synth_dataset(const SynthSpec& spec);

/// Random horizontal flip (p = 0.5) then a random H x W crop of the image
/// zero-padded by `padding` on each side. Image i uses the stream
/// (seed, i); labels are unaffected.
Tensor augment(const Tensor& batch, std::uint64_t seed, std::size_t padding = 4);

}  // namespace advlab
