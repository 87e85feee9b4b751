#include "advlab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "advlab/errors.hpp"
#include "advlab/parallel.hpp"

namespace advlab {

namespace {

std::size_t count_correct(std::span<const int> pred, std::span<const int> labels) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) c += pred[i] == labels[i] ? 1 : 0;
  return c;
}

double parse_number(const std::string& text, const std::string& key) {
  const auto slash = text.find('/');
  try {
    std::size_t used = 0;
    if (slash == std::string::npos) {
      const double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return v;
    }
    const std::string num = text.substr(0, slash), den = text.substr(slash + 1);
    const double a = std::stod(num, &used);
    if (used != num.size()) throw std::invalid_argument(text);
    const double b = std::stod(den, &used);
    if (used != den.size() || b == 0.0) throw std::invalid_argument(text);
    return a / b;
  } catch (const std::logic_error&) {
    throw ConfigError("cannot parse number '" + text + "'", key);
  }
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// Ten-thousandths as a decimal string.
std::string from_ticks(long long ticks) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%lld.%04lld", ticks / 10000, ticks % 10000);
  return buf;
}

double round4(double v) { return std::stod(fixed4(v)); }

}  // namespace

EvalRow robust_accuracy(const Model& model, const Dataset& data, const AttackConfig& attack, const EvalOptions& opts) {
  attack.validate();
  if (data.size() == 0) throw ContractError("robust_accuracy: empty dataset");
  if (data.classes != model.classes()) {
    throw ContractError("robust_accuracy: dataset has " + std::to_string(data.classes) + " classes, model " +
                        std::to_string(model.classes()));
  }
  const std::size_t n = data.size();
  const std::size_t shard = std::max<std::size_t>(kAttackChunk, (opts.shard_size + kAttackChunk - 1) / kAttackChunk *
                                                                     kAttackChunk);
  const std::size_t shards = (n + shard - 1) / shard;
  std::vector<std::size_t> clean_ok(shards), robust_ok(shards);

  parallel_for(shards, opts.threads, [&](std::size_t s) {
    const std::size_t b = s * shard, e = std::min(n, b + shard);
    const Tensor x = data.images.slice_rows(b, e);
    const std::span<const int> y(data.labels.data() + b, e - b);
    std::vector<std::uint64_t> ids(e - b);
    std::iota(ids.begin(), ids.end(), static_cast<std::uint64_t>(b));
    const Tensor adv = pgd(model, y, x, attack, ids, 1);
    const BallCheck ball = check_ball(x, adv);
    if (ball.max_linf > attack.epsilon + 1e-12 || !ball.in_range) {
      throw ContractError("robust_accuracy: adversarial batch at shard " + std::to_string(s) +
                          " leaves the epsilon ball");
    }
    clean_ok[s] = count_correct(model.predict(x), y);
    robust_ok[s] = count_correct(model.predict(adv), y);
  });

  const std::size_t clean = std::accumulate(clean_ok.begin(), clean_ok.end(), std::size_t{0});
  const std::size_t robust = std::accumulate(robust_ok.begin(), robust_ok.end(), std::size_t{0});
  EvalRow row;
  row.attack = attack.name;
  row.epsilon = attack.epsilon;
  row.loss = attack.loss.name();
  row.alpha = attack.loss.type == LossType::kLabelSmoothed ? attack.loss.alpha : 0.0;
  row.clean_acc = static_cast<double>(clean) / static_cast<double>(n);
  row.robust_acc = static_cast<double>(robust) / static_cast<double>(n);
  row.success_rate = static_cast<double>(n - robust) / static_cast<double>(n);
  row.examples = n;
  return row;
}

void SweepSpec::validate() const {
  if (values.empty()) throw ConfigError("sweep needs at least one value", "sweep.values");
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (!(values[i] > values[i - 1])) throw ConfigError("values must be strictly increasing", "sweep.values");
  }
  if (axis == SweepAxis::kAlpha) {
    if (values.front() < 0.0 || values.back() > 1.0) throw ConfigError("alphas must lie in [0,1]", "sweep.values");
  } else if (values.front() < 0.0) {
    throw ConfigError("epsilons must be >= 0", "sweep.values");
  }
}

EvalReport alpha_sweep(const Model& model, const Dataset& data, const SweepSpec& spec, const EvalOptions& opts,
                       const std::string& model_id) {
  if (spec.axis != SweepAxis::kAlpha) throw ConfigError("alpha_sweep needs axis = alpha", "sweep.axis");
  spec.validate();
  EvalReport report{model_id, data.split, 0.0, {}};
  for (double a : spec.values) {
    AttackConfig cfg = spec.base;
    cfg.loss = LossKind::ls(a);
    report.rows.push_back(robust_accuracy(model, data, cfg, opts));
  }
  report.clean_accuracy = report.rows.front().clean_acc;
  return report;
}

EvalReport epsilon_sweep(const Model& model, const Dataset& data, const SweepSpec& spec, const EvalOptions& opts,
                         const std::string& model_id) {
  if (spec.axis != SweepAxis::kEpsilon) throw ConfigError("epsilon_sweep needs axis = epsilon", "sweep.axis");
  spec.validate();
  // Step size as a fraction of epsilon, taken from the preset when the base
  // radius carries no information.
  double ratio = 0.0;
  if (spec.base.epsilon > 0.0) {
    ratio = spec.base.step_size / spec.base.epsilon;
  } else {
    const AttackConfig probe = attack_by_name(spec.base.name, 1.0);
    ratio = probe.step_size;
  }
  EvalReport report{model_id, data.split, 0.0, {}};
  for (double e : spec.values) {
    AttackConfig cfg = spec.base;
    cfg.epsilon = e;
    cfg.step_size = ratio * e;
    report.rows.push_back(robust_accuracy(model, data, cfg, opts));
  }
  report.clean_accuracy = report.rows.front().clean_acc;
  return report;
}

std::vector<double> parse_sweep_values(const std::string& raw) {
  const std::string text = trim(raw);
  if (text.empty()) throw ConfigError("empty value list", "sweep.values");
  std::vector<double> out;
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ':')) parts.push_back(trim(item));
    if (parts.size() != 3) throw ConfigError("range must be start:stop:step", "sweep.values");
    const double start = parse_number(parts[0], "sweep.values");
    const double stop = parse_number(parts[1], "sweep.values");
    const double step = parse_number(parts[2], "sweep.values");
    if (!(step > 0.0) || stop < start) throw ConfigError("range needs step > 0 and stop >= start", "sweep.values");
    const auto count = static_cast<long long>(std::floor((stop - start) / step + 1e-9)) + 1;
    for (long long i = 0; i < count; ++i) {
      // Snap to a 1e-12 grid so 0.1 * 3 prints and compares as 0.3.
      out.push_back(std::round((start + static_cast<double>(i) * step) * 1e12) / 1e12);
    }
  } else {
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) throw ConfigError("empty entry in value list", "sweep.values");
      out.push_back(parse_number(item, "sweep.values"));
    }
  }
  return out;
}

std::string to_csv(const EvalReport& report) {
  if (report.rows.empty()) throw ContractError("write_csv: report has no rows");
  auto check_field = [](const std::string& s, const char* what) {
    if (s.find_first_of(",\n\r") != std::string::npos) {
      throw ContractError(std::string("write_csv: ") + what + " contains a separator: " + s);
    }
  };
  check_field(report.model_id, "model id");
  check_field(report.split, "split");
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : report.rows) {
    check_field(r.attack, "attack");
    check_field(r.loss, "loss");
    const long long robust = std::llround(r.robust_acc * 10000.0);
    out += report.model_id + ',' + report.split + ',' + std::to_string(r.examples) + ',' + r.attack + ',' + fixed4(r.epsilon) + ',' + r.loss + ',' +
           fixed4(r.alpha) + ',' + fixed4(r.clean_acc) + ',' + from_ticks(robust) + ',' + from_ticks(10000 - robust) +
           '\n';
  }
  return out;
}

void write_csv(const EvalReport& report, const std::filesystem::path& path) {
  const std::string text = to_csv(report);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

EvalReport parse_csv(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  if (!std::getline(ss, line) || line != kCsvHeader) {
    throw FormatError("csv: unexpected header");
  }
  EvalReport report;
  std::size_t lineno = 1;
  while (std::getline(ss, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 10) throw FormatError("csv: line " + std::to_string(lineno) + " has " + std::to_string(f.size()) +
                                         " fields");
    if (report.rows.empty()) {
      report.model_id = f[0];
      report.split = f[1];
    }
    EvalRow r;
    try {
      std::size_t used = 0;
      r.examples = std::stoul(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument(f[2]);
      r.attack = f[3];
      r.epsilon = std::stod(f[4]);
      r.loss = f[5];
      r.alpha = std::stod(f[6]);
      r.clean_acc = std::stod(f[7]);
      r.robust_acc = std::stod(f[8]);
      r.success_rate = std::stod(f[9]);
    } catch (const std::logic_error&) {
      throw FormatError("csv: bad number on line " + std::to_string(lineno));
    }
    report.rows.push_back(r);
  }
  if (report.rows.empty()) throw FormatError("csv: no rows");
  report.clean_accuracy = report.rows.front().clean_acc;
  return report;
}

EvalReport read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_csv(std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
}

EvalReport quantized(const EvalReport& report) {
  EvalReport q = report;
  for (auto& r : q.rows) {
    const long long robust = std::llround(r.robust_acc * 10000.0);
    r.epsilon = round4(r.epsilon);
    r.alpha = round4(r.alpha);
    r.clean_acc = round4(r.clean_acc);
    r.robust_acc = std::stod(from_ticks(robust));
    r.success_rate = std::stod(from_ticks(10000 - robust));
  }
  if (!q.rows.empty()) q.clean_accuracy = q.rows.front().clean_acc;
  return q;
}

void write_pnm(const PnmImage& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) throw ContractError("pnm: channels must be 1 or 3");
  if (img.pixels.size() != img.width * img.height * img.channels) throw ContractError("pnm: pixel buffer size");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

PnmImage read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  PnmImage img;
  const std::string magic = token();
  if (magic == "P5") {
    img.channels = 1;
  } else if (magic == "P6") {
    img.channels = 3;
  } else {
    throw FormatError("pnm: unsupported magic '" + magic + "'");
  }
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw FormatError("pnm: only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw FormatError("pnm: malformed header");
  }
  img.pixels.resize(img.width * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw FormatError("pnm: truncated pixel data");
  return img;
}

PnmImage adv_grid(const Model& model, const Tensor& images, std::span<const int> labels,
                  std::span<const AttackConfig> attacks) {
  if (images.rank() != 4) throw ShapeError("adv_grid: expected [N,C,H,W], got " + shape_str(images.shape()));
  const std::size_t n = images.dim(0), ch = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (n == 0 || n > 16) throw ContractError("adv_grid: need 1..16 examples, got " + std::to_string(n));
  if (attacks.size() > 8) throw ContractError("adv_grid: at most 8 attack configs");
  if (ch != 1 && ch != 3) throw ContractError("adv_grid: images must have 1 or 3 channels");

  std::vector<Tensor> columns{images};
  for (const auto& a : attacks) columns.push_back(pgd(model, labels, images, a));

  const std::size_t cols = columns.size();
  PnmImage img;
  img.channels = ch;
  img.width = cols * w + (cols - 1);
  img.height = n * h + (n - 1);
  img.pixels.assign(img.width * img.height * ch, 255);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const Tensor& src = columns[c];
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t py = r * (h + 1) + y, px = c * (w + 1) + x;
          for (std::size_t k = 0; k < ch; ++k) {
            const double v = src[((r * ch + k) * h + y) * w + x];
            img.pixels[(py * img.width + px) * ch + k] =
                static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
          }
        }
      }
    }
  }
  return img;
}

void dump_adv_grid(const Model& model, const Tensor& images, std::span<const int> labels,
                   std::span<const AttackConfig> attacks, const std::filesystem::path& out_path) {
  write_pnm(adv_grid(model, images, labels, attacks), out_path);
}

}  // namespace advlab
