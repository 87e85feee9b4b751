#include "advlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "advlab/errors.hpp"
#include "advlab/rng.hpp"

namespace advlab {

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
  Dataset out;
  out.images = images.gather_rows(idx);
  out.labels.reserve(idx.size());
  for (std::size_t i : idx) out.labels.push_back(labels.at(i));
  out.classes = classes;
  out.split = split;
  return out;
}

void Dataset::validate() const {
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw ContractError("dataset: images " + shape_str(images.shape()) + " vs " + std::to_string(labels.size()) +
                        " labels");
  }
  for (double v : images.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("dataset: pixel outside [0,1]");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw ContractError("dataset: label outside [0,K)");
  }
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot open " + p.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + p.string());
}

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off, const char* what) {
  if (off + 4 > b.size()) {
    throw FormatError(std::string(what) + ": truncated header at offset " + std::to_string(off));
  }
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

Dataset parse_idx(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes,
                  std::size_t classes) {
  const std::uint32_t im_magic = read_be32(image_bytes, 0, "idx images");
  if (im_magic != kIdxImagesMagic) {
    throw FormatError("idx images: bad magic 0x" + [&] {
      char buf[9];
      std::snprintf(buf, sizeof buf, "%08x", im_magic);
      return std::string(buf);
    }() + " at offset 0 (expected 0x00000803)");
  }
  const std::uint32_t n = read_be32(image_bytes, 4, "idx images");
  const std::uint32_t rows = read_be32(image_bytes, 8, "idx images");
  const std::uint32_t cols = read_be32(image_bytes, 12, "idx images");
  const std::size_t expected = 16 + std::size_t{n} * rows * cols;
  if (image_bytes.size() < expected) {
    throw FormatError("idx images: truncated at offset " + std::to_string(image_bytes.size()) + " (need " +
                      std::to_string(expected) + " bytes)");
  }
  if (image_bytes.size() > expected) throw FormatError("idx images: trailing bytes at offset " + std::to_string(expected));

  const std::uint32_t lb_magic = read_be32(label_bytes, 0, "idx labels");
  if (lb_magic != kIdxLabelsMagic) throw FormatError("idx labels: bad magic at offset 0 (expected 0x00000801)");
  const std::uint32_t nl = read_be32(label_bytes, 4, "idx labels");
  if (nl != n) {
    throw FormatError("idx labels: count " + std::to_string(nl) + " at offset 4 does not match image count " +
                      std::to_string(n));
  }
  if (label_bytes.size() != 8 + std::size_t{n}) {
    throw FormatError("idx labels: expected " + std::to_string(8 + n) + " bytes, got " +
                      std::to_string(label_bytes.size()));
  }

  Dataset ds;
  ds.classes = classes;
  ds.images = Tensor({n, 1, rows, cols});
  for (std::size_t i = 0; i < ds.images.size(); ++i) ds.images[i] = image_bytes[16 + i] / 255.0;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t y = label_bytes[8 + i];
    if (y >= classes) {
      throw FormatError("idx labels: label " + std::to_string(y) + " at offset " + std::to_string(8 + i) +
                        " outside [0," + std::to_string(classes) + ")");
    }
    ds.labels[i] = y;
  }
  return ds;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t classes) {
  return parse_idx(read_file(images_path), read_file(labels_path), classes);
}

std::vector<std::uint8_t> encode_idx_images(const Dataset& ds) {
  if (ds.images.rank() != 4 || ds.channels() != 1) {
    throw ContractError("idx: only single-channel [N,1,H,W] images can be encoded");
  }
  std::vector<std::uint8_t> out;
  out.reserve(16 + ds.images.size());
  put_be32(out, kIdxImagesMagic);
  put_be32(out, static_cast<std::uint32_t>(ds.size()));
  put_be32(out, static_cast<std::uint32_t>(ds.height()));
  put_be32(out, static_cast<std::uint32_t>(ds.width()));
  for (double v : ds.images.values()) out.push_back(quantize(v));
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(const Dataset& ds) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + ds.size());
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(ds.size()));
  for (int y : ds.labels) out.push_back(static_cast<std::uint8_t>(y));
  return out;
}

void save_idx(const Dataset& ds, const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  write_file(images_path, encode_idx_images(ds));
  write_file(labels_path, encode_idx_labels(ds));
}

Dataset synth_dataset(const SynthSpec& spec) {
  if (spec.classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes", "dataset.classes");
  if (spec.n_per_class == 0) throw ConfigError("synthetic dataset is empty (n_per_class = 0)", "dataset.n_per_class");
  if (spec.image_side < 4) throw ConfigError("image_side must be >= 4", "dataset.image_side");
  if (spec.channels == 0) throw ConfigError("channels must be positive", "dataset.channels");
  if (!(spec.noise >= 0.0)) throw ConfigError("noise must be >= 0", "dataset.noise");

  const std::size_t k = spec.classes, side = spec.image_side, ch = spec.channels;
  const double s = static_cast<double>(side);
  const double pi = std::numbers::pi;

  struct Prototype {
    double angle, freq, phase, bx, by;
    std::vector<double> tint;
  };
  // Prototypes depend only on the class count so that train and test splits
  // drawn with different seeds share them.
  std::vector<Prototype> protos(k);
  Rng proto_rng(derive_seed(0xC1A55ULL, k));
  for (std::size_t c = 0; c < k; ++c) {
    Prototype& p = protos[c];
    p.angle = pi * static_cast<double>(c) / static_cast<double>(k);
    p.freq = 1.5 + static_cast<double>(c % 3);
    p.phase = proto_rng.uniform(0.0, 2.0 * pi);
    const double a = 2.0 * pi * static_cast<double>(c) / static_cast<double>(k);
    p.bx = 0.5 * s + 0.28 * s * std::cos(a);
    p.by = 0.5 * s + 0.28 * s * std::sin(a);
    for (std::size_t j = 0; j < ch; ++j) p.tint.push_back(0.6 + 0.4 * proto_rng.uniform());
  }

  const std::size_t n = k * spec.n_per_class;
  Dataset ds;
  ds.classes = k;
  ds.split = spec.split;
  ds.images = Tensor({n, ch, side, side});
  ds.labels.resize(n);
  Rng rng(spec.seed);
  const double sigma = s / 6.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % k;
    ds.labels[i] = static_cast<int>(c);
    const Prototype& p = protos[c];
    const double angle = p.angle + rng.uniform(-0.12, 0.12);
    const double phase = p.phase + rng.uniform(-0.5, 0.5);
    const double bx = p.bx + rng.uniform(-1.0, 1.0);
    const double by = p.by + rng.uniform(-1.0, 1.0);
    const double ca = std::cos(angle), sa = std::sin(angle);
    double* img = ds.images.data().data() + i * ch * side * side;
    for (std::size_t j = 0; j < ch; ++j) {
      for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
          const double fx = static_cast<double>(x), fy = static_cast<double>(y);
          const double stripe = 0.5 * (1.0 + std::cos(2.0 * pi * p.freq * (fx * ca + fy * sa) / s + phase));
          const double d2 = (fx - bx) * (fx - bx) + (fy - by) * (fy - by);
          const double blob = std::exp(-d2 / (2.0 * sigma * sigma));
          const double v = 0.1 + p.tint[j] * (0.35 * stripe + 0.5 * blob) + spec.noise * rng.normal();
          img[(j * side + y) * side + x] = std::clamp(v, 0.0, 1.0);
        }
      }
    }
  }
  return ds;
}

Tensor augment(const Tensor& batch, std::uint64_t seed, std::size_t padding) {
  if (batch.rank() != 4) throw ShapeError("augment: expected [B,C,H,W], got " + shape_str(batch.shape()));
  const std::size_t b = batch.dim(0), ch = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  Tensor out(batch.shape());
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t i = 0; i < b; ++i) {
    Rng rng(derive_seed(seed, i, 0xA6));
    const bool flip = rng.coin();
    // Crop offset into the padded image, uniform over the (2p+1)^2 grid.
    const auto oy = static_cast<std::ptrdiff_t>(rng.below(2 * padding + 1)) - pad;
    const auto ox = static_cast<std::ptrdiff_t>(rng.below(2 * padding + 1)) - pad;
    for (std::size_t c = 0; c < ch; ++c) {
      const double* src = batch.data().data() + ((i * ch + c) * h) * w;
      double* dst = out.data().data() + ((i * ch + c) * h) * w;
      for (std::size_t y = 0; y < h; ++y) {
        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + oy;
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t x = 0; x < w; ++x) {
          std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + ox;
          if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
          if (flip) sx = static_cast<std::ptrdiff_t>(w) - 1 - sx;
          dst[y * w + x] = src[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
        }
      }
    }
  }
  return out;
}

}  // namespace advlab
