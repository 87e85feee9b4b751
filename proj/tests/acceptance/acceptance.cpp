// Acceptance suite: prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails. Usage: advlab_acceptance [work_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "advlab/attacks.hpp"
#include "advlab/config.hpp"
#include "advlab/data.hpp"
#include "advlab/gradcheck.hpp"
#include "advlab/harness.hpp"
#include "advlab/losses.hpp"
#include "advlab/rng.hpp"
#include "advlab_cli/cli.hpp"

namespace fs = std::filesystem;
using namespace advlab;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_work;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "advlab");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) throw std::runtime_error("advlab " + args[1] + " exited " + std::to_string(code) + ": " + err.str());
}

// Desk-scale setting shared by criteria 5-7 and 9: 12x12 synthetic stripes,
// noise 0.35, conv {4,8}, Madry, 10 epochs, no augmentation (a flip maps one
// stripe class onto another).
void write_config(const fs::path& dir, double train_eps, double spat_alpha, double attack_eps) {
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << "{\"dataset\": {\"noise\": 0.35, \"test_per_class\": 100},\n"
                                     << " \"train\": {\"method\": \"madry\", \"lr\": 0.03, \"batch_size\": 32,"
                                     << " \"augment\": false, \"epochs\": 10, \"epsilon\": \"" << train_eps
                                     << "\", \"spat_alpha\": " << spat_alpha << "},\n"
                                     << " \"attack\": {\"preset\": \"pgd20\", \"epsilon\": \"" << attack_eps << "\"}}\n";
}

fs::path train_run(const std::string& name, double train_eps, double spat_alpha, double attack_eps) {
  const fs::path dir = g_work / name;
  write_config(dir, train_eps, spat_alpha, attack_eps);
  run_cli({"train", "--config", (dir / "config.json").string(), "--out", dir.string()});
  return dir;
}

EvalReport sweep_run(const fs::path& dir, const std::string& axis, const std::string& values,
                     const std::string& out_name, const std::vector<std::string>& extra = {}) {
  std::vector<std::string> args{"sweep",  "--config", (dir / "config.json").string(), "--checkpoint",
                                (dir / "model.ckpt").string(), "--axis", axis,  "--values",
                                values, "--out", (dir / out_name).string()};
  args.insert(args.end(), extra.begin(), extra.end());
  run_cli(args);
  return read_csv(dir / out_name / "sweep.csv");
}

constexpr double kEps = 0.05;

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  std::vector<GradCheckCase> cases = primitive_cases();
  for (auto& c : loss_cases()) cases.push_back(std::move(c));
  SuiteOptions opts;
  opts.points = 100;
  opts.tolerance = 1e-5;
  double worst = 0.0;
  std::string failed;
  for (const auto& row : run_gradcheck_suite(cases, opts)) {
    worst = std::max(worst, row.max_rel_error);
    if (!row.passed) failed += " " + row.name;
  }
  return {failed.empty(), std::to_string(cases.size()) + " cases x 100 points, max rel err " + fmt("%.2e", worst) +
                              (failed.empty() ? "" : ", failed:" + failed)};
}

Outcome lsce_identities() {
  Rng rng(2);
  double ce_gap = 0, lnk_gap = 0, grad_gap = 0, affine_gap = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t b = 1 + rng.below(4), k = 2 + rng.below(9);
    Tensor z({b, k});
    for (double& v : z.values()) v = rng.uniform(-4, 4);
    std::vector<int> y(b);
    for (int& v : y) v = static_cast<int>(rng.below(k));
    const double a = rng.uniform();

    ce_gap = std::max(ce_gap, std::abs(label_smoothed_ce(z, y, 0.0) - cross_entropy(z, y)));
    lnk_gap = std::max(lnk_gap, std::abs(label_smoothed_ce(Tensor({b, k}, 0.0), y, a) - std::log(double(k))));

    Graph g;
    const Var v = g.leaf(z);
    g.backward(label_smoothed_ce(g, v, y, a));
    const Tensor lsm = log_softmax(z);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double target = static_cast<int>(j) == y[i] ? 1.0 - a : a / double(k - 1);
        const double expect = (std::exp(lsm[i * k + j]) - target) / double(b);
        grad_gap = std::max(grad_gap, std::abs(g.grad(v)[i * k + j] - expect));
      }
    }

    const double a0 = 0.05, a1 = 0.5, a2 = 0.95;
    const double l0 = label_smoothed_ce(z, y, a0), l1 = label_smoothed_ce(z, y, a1), l2 = label_smoothed_ce(z, y, a2);
    affine_gap = std::max(affine_gap, std::abs((l1 - l0) / (a1 - a0) - (l2 - l1) / (a2 - a1)));
  }
  const bool pass = ce_gap == 0.0 && lnk_gap <= 1e-12 && grad_gap <= 1e-6 && affine_gap <= 1e-10;
  return {pass, "LS(0)-CE " + fmt("%.1e", ce_gap) + ", uniform-lnK " + fmt("%.1e", lnk_gap) + ", grad " +
                    fmt("%.1e", grad_gap) + ", collinearity " + fmt("%.1e", affine_gap)};
}

Outcome kl_equivalence() {
  Rng rng(3);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t b = 1 + rng.below(4), k = 2 + rng.below(9);
    Tensor z({b, k});
    for (double& v : z.values()) v = rng.uniform(-4, 4);
    std::vector<int> y(b);
    for (int& v : y) v = static_cast<int>(rng.below(k));
    const double a = rng.uniform(0.0, 0.999);
    Tensor ref = smoothed_targets(y, k, a);
    for (double& v : ref.values()) v = std::log(v);

    Graph g1, g2;
    const Var v1 = g1.leaf(z), v2 = g2.leaf(z);
    g1.backward(label_smoothed_ce(g1, v1, y, a));
    g2.backward(kl_divergence(g2, ref, v2));
    worst = std::max(worst, max_abs_diff(g1.grad(v1), g2.grad(v2)));
  }
  return {worst <= 1e-9, "100 cases, max |grad LSCE - grad KL| " + fmt("%.1e", worst)};
}

Outcome attack_contracts() {
  const std::vector<std::string> presets{"fgsm", "pgd20", "cw30", "pgd10-train"};
  Rng rng(4);
  std::size_t violations = 0;
  bool ls_ok = true, fgsm_ok = true;
  for (int t = 0; t < 1000; ++t) {
    const bool conv = t % 2 == 0;
    const ArchSpec spec = conv ? ArchSpec::conv(1, 5, 5, {2}, 3) : ArchSpec::mlp({25, 6, 3});
    const Model m = Model::create(spec, rng.next());
    Tensor x({2, 1, 5, 5});
    for (double& v : x.values()) v = rng.uniform();
    const std::vector<int> y{static_cast<int>(rng.below(3)), static_cast<int>(rng.below(3))};
    AttackConfig cfg = attack_by_name(presets[t % 4], rng.uniform(0.0, 0.4));
    if (t % 5 == 0) cfg.loss = LossKind::ls(rng.uniform());
    if (t % 7 == 0) cfg.loss = LossKind::kl();
    cfg.seed = rng.next();
    const BallCheck bc = check_ball(x, pgd(m, y, x, cfg));
    if (bc.max_linf > cfg.epsilon + 1e-12 || !bc.in_range) ++violations;

    if (t % 10 == 0) {
      AttackConfig ce = attack_by_name("pgd20", cfg.epsilon), ls0 = ce;
      ce.seed = ls0.seed = cfg.seed;
      ls0.loss = LossKind::ls(0.0);
      ls_ok = ls_ok && pgd(m, y, x, ce) == pgd(m, y, x, ls0);
      AttackConfig one;
      one.epsilon = one.step_size = cfg.epsilon;
      one.steps = 1;
      one.random_start = false;
      one.loss = LossKind::ce();
      fgsm_ok = fgsm_ok && pgd(m, y, x, one) == fgsm(m, y, x, cfg.epsilon, LossKind::ce());
    }
  }

  // Linear model: logits = x W, W[:,0] = w, W[:,1] = 0. With label 1 the CE
  // input gradient is p0 * w, so PGD must end at clamp(x + eps * sgn(w)).
  double sat_gap = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t d = 8;
    Model m = Model::create(ArchSpec::mlp({d, 2}), 0);
    Tensor W({d, 2}, 0.0);
    std::vector<double> w(d);
    for (std::size_t i = 0; i < d; ++i) W[i * 2] = w[i] = rng.uniform(0.1, 2.0) * (rng.coin() ? 1 : -1);
    m.parameters()[0].value = W;
    m.parameters()[1].value = Tensor({2}, 0.0);
    Tensor x({1, d});
    for (double& v : x.values()) v = rng.uniform();
    const double eps = rng.uniform(0.01, 0.3);
    AttackConfig cfg = attack_by_name("pgd10-train", eps);
    cfg.seed = rng.next();
    const std::vector<int> y{1};
    const Tensor adv = pgd(m, y, x, cfg);
    for (std::size_t i = 0; i < d; ++i) {
      const double oracle = std::clamp(x[i] + eps * (w[i] > 0 ? 1.0 : -1.0), 0.0, 1.0);
      sat_gap = std::max(sat_gap, std::abs(adv[i] - oracle));
    }
  }
  const bool pass = violations == 0 && ls_ok && fgsm_ok && sat_gap <= 1e-12;
  return {pass, "1000 triples, " + std::to_string(violations) + " ball violations; PGD-LS(0)==PGD-CE " +
                    (ls_ok ? "yes" : "no") + "; FGSM==PGD(T=1) " + (fgsm_ok ? "yes" : "no") +
                    "; linear saturation gap " + fmt("%.1e", sat_gap)};
}

// Criterion 5 output, reused by 6 and 9.
struct TrendRun {
  fs::path dir;
  EvalReport report;
};

TrendRun trend_run(const std::string& name) {
  TrendRun r;
  r.dir = train_run(name, kEps, 0.0, kEps);
  r.report = sweep_run(r.dir, "alpha", "0:1:0.1", "alpha_sweep");
  return r;
}

Outcome alpha_trend(const TrendRun& run) {
  const auto& rows = run.report.rows;
  std::size_t inversions = 0;
  double worst_drop = 0;
  std::string series;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    series += (i ? " " : "") + fmt("%.3f", rows[i].robust_acc);
    if (i > 0 && rows[i].robust_acc < rows[i - 1].robust_acc) {
      ++inversions;
      worst_drop = std::max(worst_drop, rows[i - 1].robust_acc - rows[i].robust_acc);
    }
  }
  const bool monotone = inversions == 0 || (inversions == 1 && worst_drop <= 0.005 + 1e-12);
  const bool above_clean = rows.size() == 11 && rows.back().robust_acc > run.report.clean_accuracy;
  return {monotone && above_clean, "robust over alpha 0..1: " + series + "; clean " +
                                       fmt("%.3f", run.report.clean_accuracy) + "; inversions " +
                                       std::to_string(inversions)};
}

Outcome collapse(const TrendRun& base) {
  const fs::path dir = train_run("c6_alpha1", kEps, 1.0, kEps);
  const EvalReport rep = sweep_run(dir, "epsilon", "0", "clean");
  const double c0 = base.report.clean_accuracy, c1 = rep.clean_accuracy;
  return {c0 - c1 >= 0.30, "clean accuracy alpha=0 " + fmt("%.3f", c0) + ", alpha=1 " + fmt("%.3f", c1) +
                               " (needs a drop of at least 0.300, got " + fmt("%.3f", c0 - c1) + ")"};
}

Outcome peak_shift() {
  // Training radii scaled to the synthetic data; robust accuracy is measured
  // with pgd20 (CE) at the middle radius for every model.
  const std::vector<double> train_eps{0.05, 0.075, 0.1};
  const std::vector<double> alphas{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  const double eval_eps = 0.075;
  std::vector<double> peaks;
  std::string detail;
  for (double e : train_eps) {
    double best = -1, best_alpha = 0;
    std::string series;
    for (double a : alphas) {
      const fs::path dir = train_run("c7_e" + fmt("%g", e) + "_a" + fmt("%g", a), e, a, eval_eps);
      const EvalReport rep = sweep_run(dir, "epsilon", fmt("%g", eval_eps), "eval", {"--loss", "ce"});
      const double r = rep.rows[0].robust_acc;
      series += (series.empty() ? "" : " ") + fmt("%.3f", r);
      if (r > best) best = r, best_alpha = a;
    }
    peaks.push_back(best_alpha);
    detail += "eps " + fmt("%g", e) + ": [" + series + "] peak " + fmt("%g", best_alpha) + "; ";
  }
  const bool pass = std::is_sorted(peaks.begin(), peaks.end());
  return {pass, detail + "eval eps " + fmt("%g", eval_eps)};
}

Outcome recipe_golden() {
  std::string diffs;
  for (const char* method : {"trades", "mart"}) {
    const fs::path out = g_work / (std::string("c8_") + method);
    run_cli({"train", "--recipe", "cifar-recipe", "--method", method, "--dry-run", "--out", out.string()});
    const std::string got = read_file(out / "config.resolved.json");
    const std::string want = read_file(fs::path(ADVLAB_GOLDEN_DIR) / ("cifar-recipe-" + std::string(method) +
                                                                      ".resolved.json"));
    if (want.empty() || got != want) diffs += std::string(" ") + method;
  }
  return {diffs.empty(), diffs.empty() ? "trades (lambda 6) and mart (lambda 5) match golden files"
                                       : "mismatch:" + diffs};
}

Outcome determinism(const TrendRun& first) {
  const TrendRun second = trend_run("c9_repeat");
  const bool csv_same = read_file(first.dir / "alpha_sweep" / "sweep.csv") ==
                        read_file(second.dir / "alpha_sweep" / "sweep.csv");
  const bool ckpt_same = read_file(first.dir / "model.ckpt") == read_file(second.dir / "model.ckpt");
  const EvalReport t1 = sweep_run(first.dir, "alpha", "0:1:0.1", "threads1", {"--threads", "1"});
  const EvalReport t8 = sweep_run(first.dir, "alpha", "0:1:0.1", "threads8", {"--threads", "8"});
  const bool threads_same = t1 == t8 && read_file(first.dir / "threads1" / "sweep.csv") ==
                                            read_file(first.dir / "threads8" / "sweep.csv");
  return {csv_same && ckpt_same && threads_same,
          std::string("repeat run CSV ") + (csv_same ? "identical" : "differs") + ", checkpoint " +
              (ckpt_same ? "identical" : "differs") + ", threads 1 vs 8 " + (threads_same ? "identical" : "differ")};
}

Outcome round_trips(const TrendRun& run) {
  // IDX: export the synthetic test split, reload it, re-encode.
  DatasetSection ds;
  ds.test_per_class = 20;
  const Dataset test = load_split(ds, "test");
  const auto img = encode_idx_images(test), lab = encode_idx_labels(test);
  const fs::path ip = g_work / "c10_images.idx", lp = g_work / "c10_labels.idx";
  save_idx(test, ip, lp);
  const Dataset back = load_idx(ip, lp);
  const bool idx_ok = encode_idx_images(back) == img && encode_idx_labels(back) == lab &&
                      read_file(ip) == std::string(img.begin(), img.end());

  // CSV: the criterion-5 sweep file parses back to the report it encodes.
  const std::string text = read_file(run.dir / "alpha_sweep" / "sweep.csv");
  const EvalReport parsed = parse_csv(text);
  const bool csv_ok = parsed == run.report && to_csv(parsed) == text;

  // PNM: grayscale and color grids.
  bool pnm_ok = true;
  for (std::size_t ch : {1u, 3u}) {
    const Model m = Model::create(ArchSpec::conv(ch, 10, 10, {2}, 10), 3);
    SynthSpec s;
    s.n_per_class = 1;
    s.image_side = 10;
    s.channels = ch;
    const Dataset d = synth_dataset(s);
    const std::vector<std::size_t> idx{0, 1, 2, 3};
    const Dataset four = d.subset(idx);
    const std::vector<AttackConfig> attacks{attack_by_name("fgsm", 0.1), attack_by_name("pgd20", 0.2)};
    const fs::path p = g_work / (ch == 1 ? "c10_grid.pgm" : "c10_grid.ppm");
    dump_adv_grid(m, four.images, four.labels, attacks, p);
    const PnmImage expect = adv_grid(m, four.images, four.labels, attacks);
    const PnmImage got = read_pnm(p);
    pnm_ok = pnm_ok && got.pixels == expect.pixels && got.width == expect.width && got.channels == ch;
    // Original column holds round(v * 255).
    for (std::size_t y = 0; y < 10 && pnm_ok; ++y) {
      for (std::size_t k = 0; k < ch; ++k) {
        const auto want = static_cast<std::uint8_t>(std::lround(four.images[(k * 10 + y) * 10] * 255.0));
        pnm_ok = pnm_ok && got.pixels[(y * got.width) * ch + k] == want;
      }
    }
  }
  return {idx_ok && csv_ok && pnm_ok, std::string("IDX ") + (idx_ok ? "ok" : "FAIL") + ", CSV " +
                                          (csv_ok ? "ok" : "FAIL") + ", PGM/PPM " + (pnm_ok ? "ok" : "FAIL")};
}

}  // namespace

int main(int argc, char** argv) {
  g_work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "advlab_acceptance";
  fs::remove_all(g_work);
  fs::create_directories(g_work);

  int failures = 0;
  auto report = [&](int id, const std::string& title, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failures;
    std::printf("criterion %2d %-34s %s  (%s; %.0fs)\n", id, title.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), secs);
    std::fflush(stdout);
  };

  report(1, "gradient correctness", gradient_correctness);
  report(2, "LSCE identities", lsce_identities);
  report(3, "LSCE/KL gradient equivalence", kl_equivalence);
  report(4, "attack contracts", attack_contracts);

  TrendRun trend;
  bool trend_ok = false;
  auto needs_trend = [&](std::function<Outcome()> fn) {
    return [=, &trend_ok]() { return trend_ok ? fn() : Outcome{false, "criterion-5 run unavailable"}; };
  };
  report(5, "alpha trend under PGD-LS", [&] {
    trend = trend_run("c5");
    trend_ok = true;
    return alpha_trend(trend);
  });
  report(6, "SPAT(alpha=1) training collapse", needs_trend([&] { return collapse(trend); }));
  report(7, "peak alpha shifts with train eps", peak_shift);
  report(8, "cifar-recipe golden config", recipe_golden);
  report(9, "determinism and thread equivalence", needs_trend([&] { return determinism(trend); }));
  report(10, "IDX/CSV/PNM round-trips", needs_trend([&] { return round_trips(trend); }));

  std::printf("%d of 10 criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
