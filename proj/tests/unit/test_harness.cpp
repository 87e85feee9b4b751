#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "advlab/errors.hpp"
#include "advlab/harness.hpp"
#include "advlab/rng.hpp"
#include "advlab/training.hpp"

using namespace advlab;

namespace {

std::filesystem::path tmp(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

Dataset synth(std::size_t per_class, std::uint64_t seed, std::size_t side = 8, std::size_t channels = 1) {
  SynthSpec s;
  s.n_per_class = per_class;
  s.seed = seed;
  s.image_side = side;
  s.channels = channels;
  s.noise = 0.2;
  s.split = "test";
  return synth_dataset(s);
}

// ERM-trained conv net; good enough that attacks have something to flip.
const Model& trained_model() {
  static const Model m = [] {
    Model model = Model::create(ArchSpec::conv(1, 8, 8, {4}, 10), 1);
    TrainConfig cfg;
    cfg.method = Method::kErm;
    cfg.epochs = 8;
    cfg.batch_size = 20;
    cfg.lr = 0.03;
    cfg.augment = false;
    train(model, synth(20, 1), cfg);
    return model;
  }();
  return m;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(RobustAccuracy, ConstantClassifierIsUnbreakable) {
  Model m = Model::create(ArchSpec::mlp({64, 10}), 0);
  m.parameters()[0].value = Tensor({64, 10}, 0.0);
  Tensor bias({10}, 0.0);
  bias[0] = 1.0;
  m.parameters()[1].value = bias;
  Dataset ds = synth(3, 2);
  for (int& y : ds.labels) y = 0;
  for (const char* preset : {"fgsm", "pgd20", "cw30"}) {
    const EvalRow r = robust_accuracy(m, ds, attack_by_name(preset, 0.3));
    EXPECT_EQ(r.robust_acc, 1.0);
    EXPECT_EQ(r.success_rate, 0.0);
  }
}

TEST(RobustAccuracy, ZeroRadiusEqualsClean) {
  const Dataset ds = synth(5, 3);
  const EvalRow r = robust_accuracy(trained_model(), ds, attack_by_name("pgd20", 0.0));
  EXPECT_EQ(r.robust_acc, r.clean_acc);
  EXPECT_EQ(r.robust_acc + r.success_rate, 1.0);
  EXPECT_EQ(r.examples, 50u);
}

TEST(RobustAccuracy, SuccessCountsAllMisclassified) {
  const Dataset ds = synth(5, 4);
  const EvalRow r = robust_accuracy(trained_model(), ds, attack_by_name("pgd20", 0.2));
  const Tensor adv = pgd(trained_model(), ds.labels, ds.images, attack_by_name("pgd20", 0.2));
  const auto pred = trained_model().predict(adv);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != ds.labels[i];
  EXPECT_DOUBLE_EQ(r.success_rate, static_cast<double>(wrong) / 50.0);
}

TEST(RobustAccuracy, ShardingAndThreadsDoNotMatter) {
  const Dataset ds = synth(10, 5);
  const AttackConfig a = attack_by_name("pgd20", 0.1);
  const EvalRow base = robust_accuracy(trained_model(), ds, a, {1, 256});
  EXPECT_EQ(base, robust_accuracy(trained_model(), ds, a, {4, 32}));
  EXPECT_EQ(base, robust_accuracy(trained_model(), ds, a, {8, 64}));
}

TEST(RobustAccuracy, EmptyOrMismatchedIsContractError) {
  Dataset ds = synth(1, 1);
  Dataset empty = ds.subset({});
  EXPECT_THROW(robust_accuracy(trained_model(), empty, attack_by_name("pgd20", 0.1)), ContractError);
  const Model two = Model::create(ArchSpec::mlp({64, 2}), 0);
  EXPECT_THROW(robust_accuracy(two, ds, attack_by_name("pgd20", 0.1)), ContractError);
}

TEST(Sweep, AlphaRowZeroIsPlainCe) {
  const Dataset ds = synth(5, 6);
  SweepSpec spec{SweepAxis::kAlpha, {0.0, 0.5, 1.0}, attack_by_name("pgd20", 0.15)};
  const EvalReport rep = alpha_sweep(trained_model(), ds, spec);
  ASSERT_EQ(rep.rows.size(), 3u);
  const EvalRow ce = robust_accuracy(trained_model(), ds, spec.base);
  EXPECT_EQ(rep.rows[0].robust_acc, ce.robust_acc);
  EXPECT_EQ(rep.rows[2].alpha, 1.0);
}

TEST(Sweep, EpsilonRobustNonIncreasing) {
  const Dataset ds = synth(10, 7);
  SweepSpec spec{SweepAxis::kEpsilon, {0.0, 0.05, 0.1, 0.15, 0.2, 0.3}, attack_by_name("pgd20", 0.1)};
  const EvalReport rep = epsilon_sweep(trained_model(), ds, spec);
  EXPECT_EQ(rep.rows[0].robust_acc, rep.clean_accuracy);
  for (std::size_t i = 1; i < rep.rows.size(); ++i) {
    EXPECT_LE(rep.rows[i].robust_acc, rep.rows[i - 1].robust_acc + 0.005) << i;
    EXPECT_NEAR(rep.rows[i].epsilon, spec.values[i], 1e-15);
  }
}

TEST(Sweep, ValidationAndParsing) {
  SweepSpec dup{SweepAxis::kEpsilon, {0.1, 0.1}, attack_by_name("pgd20", 0.1)};
  EXPECT_THROW(dup.validate(), ConfigError);
  SweepSpec empty{SweepAxis::kAlpha, {}, attack_by_name("pgd20", 0.1)};
  EXPECT_THROW(empty.validate(), ConfigError);
  SweepSpec high{SweepAxis::kAlpha, {0.5, 1.2}, attack_by_name("pgd20", 0.1)};
  EXPECT_THROW(high.validate(), ConfigError);

  const auto a = parse_sweep_values("0:1:0.1");
  ASSERT_EQ(a.size(), 11u);
  EXPECT_EQ(a.back(), 1.0);
  EXPECT_NEAR(a[3], 0.3, 1e-15);
  EXPECT_EQ(parse_sweep_values("0:1:0.2").size(), 6u);
  const auto e = parse_sweep_values("0,4/255,8/255");
  EXPECT_DOUBLE_EQ(e[2], 8.0 / 255.0);
  EXPECT_THROW(parse_sweep_values(""), ConfigError);
  EXPECT_THROW(parse_sweep_values("0:1:0"), ConfigError);
  EXPECT_THROW(parse_sweep_values("a,b"), ConfigError);
}

TEST(Csv, SingleRowIsTwoLines) {
  EvalReport rep{"m", "test", 0.5, {EvalRow{"pgd20", 8.0 / 255.0, "ce", 0.0, 0.5, 0.3333, 0.6667, 30}}};
  const std::string text = to_csv(rep);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  EXPECT_EQ(text.substr(0, text.find('\n')), kCsvHeader);
  EXPECT_EQ(text.substr(text.find('\n') + 1), "m,test,30,pgd20,0.0314,ce,0.0000,0.5000,0.3333,0.6667\n");
}

TEST(Csv, ColumnsSumToOne) {
  EvalReport rep{"m", "test", 0.9, {}};
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double r = static_cast<double>(rng.below(997)) / 997.0;
    rep.rows.push_back(EvalRow{"pgd20", 0.1, "ls", 0.1 * (i % 11), 0.9, r, 1.0 - r, 997});
  }
  const EvalReport back = parse_csv(to_csv(rep));
  for (const auto& row : back.rows) EXPECT_NEAR(row.robust_acc + row.success_rate, 1.0, 1e-12);
  std::stringstream ss(to_csv(rep));
  std::string line;
  std::getline(ss, line);
  while (std::getline(ss, line)) {
    const auto c1 = line.rfind(','), c0 = line.rfind(',', c1 - 1);
    const long long a = std::llround(std::stod(line.substr(c0 + 1, c1 - c0 - 1)) * 10000);
    const long long b = std::llround(std::stod(line.substr(c1 + 1)) * 10000);
    EXPECT_EQ(a + b, 10000) << line;
  }
}

TEST(Csv, RoundTrip) {
  const Dataset ds = synth(5, 8);
  SweepSpec spec{SweepAxis::kAlpha, parse_sweep_values("0:1:0.5"), attack_by_name("pgd20", 0.1)};
  const EvalReport rep = alpha_sweep(trained_model(), ds, spec, {}, "tiny");
  const auto path = tmp("advlab_t_sweep.csv");
  write_csv(rep, path);
  const EvalReport back = read_csv(path);
  EXPECT_EQ(back, quantized(rep));
  EXPECT_EQ(to_csv(back), slurp(path));
  std::filesystem::remove(path);
  EXPECT_THROW(parse_csv(std::string(kCsvHeader) + "\na,b,c\n"), FormatError);
}

TEST(Pnm, RoundTrip) {
  for (std::size_t ch : {1u, 3u}) {
    PnmImage img{5, 3, ch, {}};
    for (std::size_t i = 0; i < 15 * ch; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i * 17));
    const auto path = tmp(ch == 1 ? "advlab_t.pgm" : "advlab_t.ppm");
    write_pnm(img, path);
    const PnmImage back = read_pnm(path);
    EXPECT_EQ(back.width, 5u);
    EXPECT_EQ(back.height, 3u);
    EXPECT_EQ(back.channels, ch);
    EXPECT_EQ(back.pixels, img.pixels);
    std::filesystem::remove(path);
  }
}

TEST(Grid, ColorLayoutAndZeroRadiusColumn) {
  const Model m = Model::create(ArchSpec::conv(3, 32, 32, {2}, 10), 2);
  const Dataset ds = synth(1, 9, 32, 3);
  const std::vector<std::size_t> idx{0, 1, 2, 3, 4};
  const Dataset five = ds.subset(idx);
  const std::vector<AttackConfig> attacks{attack_by_name("pgd20", 0.0), attack_by_name("fgsm", 8.0 / 255.0),
                                          attack_by_name("cw30", 16.0 / 255.0)};
  const PnmImage g = adv_grid(m, five.images, five.labels, attacks);
  EXPECT_EQ(g.channels, 3u);
  EXPECT_EQ(g.width, 4u * 32 + 3);
  EXPECT_EQ(g.height, 5u * 32 + 4);

  auto px = [&](std::size_t y, std::size_t x, std::size_t k) { return g.pixels[(y * g.width + x) * 3 + k]; };
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t y = 0; y < 32; ++y) {
      for (std::size_t x = 0; x < 32; ++x) {
        for (std::size_t k = 0; k < 3; ++k) {
          const std::size_t py = r * 33 + y;
          const double v = five.images[((r * 3 + k) * 32 + y) * 32 + x];
          EXPECT_EQ(px(py, x, k), static_cast<std::uint8_t>(std::lround(v * 255.0)));
          EXPECT_EQ(px(py, 33 + x, k), px(py, x, k));
        }
      }
    }
  }
  EXPECT_EQ(px(0, 32, 0), 255);
  EXPECT_EQ(px(32, 0, 0), 255);

  const auto path = tmp("advlab_t_grid.ppm");
  dump_adv_grid(m, five.images, five.labels, attacks, path);
  EXPECT_EQ(read_pnm(path).pixels, g.pixels);
  std::filesystem::remove(path);
}

TEST(Grid, Limits) {
  const Model m = Model::create(ArchSpec::conv(1, 8, 8, {2}, 10), 2);
  const Dataset ds = synth(2, 1);
  const std::vector<AttackConfig> none;
  EXPECT_THROW(adv_grid(m, ds.images, ds.labels, none), ContractError);
  const std::vector<AttackConfig> nine(9, attack_by_name("fgsm", 0.1));
  const std::vector<std::size_t> two{0, 1};
  const Dataset small = ds.subset(two);
  EXPECT_THROW(adv_grid(m, small.images, small.labels, nine), ContractError);
  EXPECT_THROW(dump_adv_grid(m, small.images, small.labels, none, "/nonexistent/dir/g.pgm"), IoError);
}
