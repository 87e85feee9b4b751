#include "advlab/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "advlab/errors.hpp"
#include "advlab/rng.hpp"

namespace advlab {

ArchSpec ArchSpec::mlp(const std::vector<std::size_t>& layers) {
  if (layers.size() < 2) throw ConfigError("MLP needs at least input and output sizes", "model.layers");
  ArchSpec s;
  s.arch = Arch::kMlp;
  s.channels = 1;
  s.height = 1;
  s.width = layers.front();
  s.hidden.assign(layers.begin() + 1, layers.end() - 1);
  s.classes = layers.back();
  return s;
}

ArchSpec ArchSpec::conv(std::size_t channels, std::size_t height, std::size_t width,
                        std::vector<std::size_t> conv_channels, std::size_t classes, std::size_t kernel) {
  ArchSpec s;
  s.arch = Arch::kConv;
  s.channels = channels;
  s.height = height;
  s.width = width;
  s.hidden = std::move(conv_channels);
  s.classes = classes;
  s.kernel = kernel;
  return s;
}

void ArchSpec::validate() const {
  if (arch != Arch::kMlp && arch != Arch::kConv) throw ConfigError("unknown architecture", "model.arch");
  if (classes < 2) throw ConfigError("class count must be >= 2, got " + std::to_string(classes), "model.classes");
  if (channels == 0 || height == 0 || width == 0) throw ConfigError("input dimensions must be positive", "model.input");
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("layer sizes must be positive", "model.hidden");
  }
  if (arch == Arch::kConv) {
    if (hidden.empty()) throw ConfigError("conv net needs at least one conv layer", "model.hidden");
    if (kernel == 0 || kernel % 2 == 0) throw ConfigError("kernel must be odd and positive", "model.kernel");
  }
}

namespace {

void init_uniform(Tensor& t, double bound, Rng& rng) {
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
}

}  // namespace

Model Model::create(const ArchSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model m;
  m.spec_ = spec;
  Rng rng(seed);
  auto add_layer = [&](const std::string& prefix, Shape wshape, std::size_t fan_in, std::size_t out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    NamedTensor w{prefix + ".weight", Tensor(std::move(wshape))};
    NamedTensor b{prefix + ".bias", Tensor({out})};
    init_uniform(w.value, bound, rng);
    init_uniform(b.value, bound, rng);
    m.params_.push_back(std::move(w));
    m.params_.push_back(std::move(b));
  };

  if (spec.arch == Arch::kMlp) {
    std::size_t in = spec.input_size();
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
      add_layer("fc" + std::to_string(i), {in, spec.hidden[i]}, in, spec.hidden[i]);
      in = spec.hidden[i];
    }
    add_layer("fc" + std::to_string(spec.hidden.size()), {in, spec.classes}, in, spec.classes);
  } else {
    std::size_t c = spec.channels;
    const std::size_t k = spec.kernel;
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
      add_layer("conv" + std::to_string(i), {spec.hidden[i], c, k, k}, c * k * k, spec.hidden[i]);
      c = spec.hidden[i];
    }
    const std::size_t flat = c * spec.height * spec.width;
    add_layer("fc", {flat, spec.classes}, flat, spec.classes);
  }
  return m;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::vector<Var> Model::bind(Graph& g, bool requires_grad) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(g.leaf(p.value, requires_grad, p.name));
  return vars;
}

Var Model::forward(Graph& g, Var x, std::span<const Var> params) const {
  if (params.size() != params_.size()) throw ContractError("model: parameter binding has wrong length");
  const Tensor& xv = g.value(x);
  if (xv.rank() < 2 || xv.size() != xv.dim(0) * spec_.input_size()) {
    throw ShapeError("model: input " + shape_str(xv.shape()) + " does not match per-example size " +
                     std::to_string(spec_.input_size()));
  }
  const std::size_t batch = xv.dim(0);
  if (spec_.arch == Arch::kMlp) {
    Var h = g.reshape(x, {batch, spec_.input_size()});
    const std::size_t layers = params.size() / 2;
    for (std::size_t i = 0; i < layers; ++i) {
      h = g.add_bias(g.matmul(h, params[2 * i]), params[2 * i + 1]);
      if (i + 1 < layers) h = g.relu(h);
    }
    return h;
  }
  Var h = g.reshape(x, {batch, spec_.channels, spec_.height, spec_.width});
  const std::size_t pad = spec_.kernel / 2;
  for (std::size_t i = 0; i < spec_.hidden.size(); ++i) {
    h = g.relu(g.conv2d(h, params[2 * i], params[2 * i + 1], pad));
  }
  const std::size_t flat = spec_.hidden.back() * spec_.height * spec_.width;
  h = g.reshape(h, {batch, flat});
  return g.add_bias(g.matmul(h, params[params.size() - 2]), params.back());
}

Tensor Model::logits(const Tensor& x) const {
  Graph g;
  const auto p = bind(g, false);
  const Var in = g.constant(x, "x");
  return g.value(forward(g, in, p));
}

std::vector<int> Model::predict(const Tensor& x) const { return argmax_rows(logits(x)); }

std::uint64_t Model::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params_) {
    for (double v : p.value.values()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xff;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows: expected [B,K], got " + shape_str(logits.shape()));
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < cols; ++j) {
      if (logits[r * cols + j] > logits[r * cols + best]) best = j;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void raw(const char* s, std::size_t n) { bytes_.insert(bytes_.end(), s, s + n); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return std::bit_cast<double>(v);
  }
  void expect_magic(const char* magic) {
    need(4);
    if (std::memcmp(b_.data() + pos_, magic, 4) != 0) throw FormatError("checkpoint: bad magic at offset 0");
    pos_ += 4;
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw FormatError("checkpoint: truncated at offset " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_model(const Model& model) {
  const ArchSpec& s = model.spec();
  Writer w;
  w.raw("ATLB", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(s.arch));
  w.u32(static_cast<std::uint32_t>(s.channels));
  w.u32(static_cast<std::uint32_t>(s.height));
  w.u32(static_cast<std::uint32_t>(s.width));
  w.u32(static_cast<std::uint32_t>(s.kernel));
  w.u32(static_cast<std::uint32_t>(s.classes));
  w.u32(static_cast<std::uint32_t>(s.hidden.size()));
  for (std::size_t h : s.hidden) w.u32(static_cast<std::uint32_t>(h));
  for (const auto& p : model.parameters()) {
    for (double v : p.value.values()) w.f64(v);
  }
  return w.take();
}

Model deserialize_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.expect_magic("ATLB");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " at offset 4");
  }
  ArchSpec s;
  const std::uint32_t arch = r.u32();
  if (arch != static_cast<std::uint32_t>(Arch::kMlp) && arch != static_cast<std::uint32_t>(Arch::kConv)) {
    throw FormatError("checkpoint: unknown architecture tag " + std::to_string(arch) + " at offset 8");
  }
  s.arch = static_cast<Arch>(arch);
  s.channels = r.u32();
  s.height = r.u32();
  s.width = r.u32();
  s.kernel = r.u32();
  s.classes = r.u32();
  const std::uint32_t n_hidden = r.u32();
  if (n_hidden > 1024) throw FormatError("checkpoint: implausible layer count at offset " + std::to_string(r.offset()));
  for (std::uint32_t i = 0; i < n_hidden; ++i) s.hidden.push_back(r.u32());
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: invalid architecture: ") + e.what());
  }
  Model m = Model::create(s, 0);
  for (auto& p : m.parameters()) {
    for (double& v : p.value.values()) v = r.f64();
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes at offset " + std::to_string(r.offset()));
  return m;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace advlab
