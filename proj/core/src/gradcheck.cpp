#include "advlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "advlab/errors.hpp"
#include "advlab/losses.hpp"
#include "advlab/rng.hpp"

namespace advlab {

namespace {

double eval_at(const MultiScalarFn& fn, std::span<const Tensor> points) {
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(points.size());
  for (const auto& p : points) leaves.push_back(g.leaf(p, false));
  const double v = g.value(fn(g, leaves)).item();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
  return v;
}

Tensor uniform_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Uniform entries kept at least `gap` away from zero.
Tensor away_from_zero(Rng& rng, Shape shape, double gap) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) {
    do {
      v = rng.uniform(-1.0, 1.0);
    } while (std::abs(v) < gap);
  }
  return t;
}

std::vector<int> random_labels(Rng& rng, std::size_t n, std::size_t classes) {
  std::vector<int> y(n);
  for (int& v : y) v = static_cast<int>(rng.below(classes));
  return y;
}

// True when, in every row, the largest non-label entry beats the runner-up by `gap`.
bool clear_max_other(const Tensor& z, std::span<const int> labels, double gap) {
  const std::size_t cols = z.dim(1);
  for (std::size_t r = 0; r < z.dim(0); ++r) {
    std::vector<double> others;
    for (std::size_t j = 0; j < cols; ++j) {
      if (static_cast<int>(j) != labels[r]) others.push_back(z[r * cols + j]);
    }
    std::sort(others.rbegin(), others.rend());
    if (others.size() > 1 && others[0] - others[1] < gap) return false;
  }
  return true;
}

// Contracts a tensor node to a scalar against fixed random weights.
Var project(Graph& g, Var v, std::uint64_t seed) {
  Rng rng(seed);
  const Var w = g.constant(uniform_tensor(rng, g.value(v).shape(), -1.0, 1.0));
  return g.sum(g.mul(w, v));
}

constexpr std::size_t kK = 5;
constexpr std::size_t kB = 4;

const std::vector<int>& fixed_labels() {
  static const std::vector<int> labels = [] {
    Rng rng(99);
    return random_labels(rng, kB, kK);
  }();
  return labels;
}

Tensor smooth_logits(std::uint64_t seed, double gap) {
  Rng rng(seed);
  Tensor z;
  do {
    z = uniform_tensor(rng, {kB, kK}, -3.0, 3.0);
  } while (!clear_max_other(z, fixed_labels(), gap));
  return z;
}

}  // namespace

std::vector<Tensor> analytic_gradient(const MultiScalarFn& fn, std::span<const Tensor> points) {
  Graph g;
  std::vector<Var> leaves;
  for (const auto& p : points) leaves.push_back(g.leaf(p, true));
  const Var out = fn(g, leaves);
  g.backward(out);
  std::vector<Tensor> grads;
  for (const Var& l : leaves) grads.push_back(g.grad(l));
  return grads;
}

namespace {

GradCheckResult check_points(const MultiScalarFn& fn, std::span<const Tensor> points, double h, bool negate) {
  auto analytic = analytic_gradient(fn, points);
  if (negate) {
    for (auto& t : analytic) {
      for (double& v : t.values()) v = -v;
    }
  }
  std::vector<Tensor> probe(points.begin(), points.end());
  eval_at(fn, probe);
  GradCheckResult res;
  for (std::size_t t = 0; t < probe.size(); ++t) {
    for (std::size_t i = 0; i < probe[t].size(); ++i) {
      const double orig = probe[t][i];
      probe[t][i] = orig + h;
      const double fp = eval_at(fn, probe);
      probe[t][i] = orig - h;
      const double fm = eval_at(fn, probe);
      probe[t][i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[t][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (err > res.max_rel_error) res = {err, t, i};
    }
  }
  return res;
}

}  // namespace

GradCheckResult grad_check(const MultiScalarFn& fn, std::span<const Tensor> points, double h) {
  return check_points(fn, points, h, false);
}

double grad_check(const ScalarFn& fn, const Tensor& point, double h) {
  const MultiScalarFn multi = [&](Graph& g, std::span<const Var> v) { return fn(g, v[0]); };
  return grad_check(multi, std::span<const Tensor>(&point, 1), h).max_rel_error;
}

namespace {

// Case whose inputs are fresh uniform tensors of the given shapes.
GradCheckCase uniform_case(std::string name, std::vector<Shape> shapes, double lo, double hi, MultiScalarFn fn) {
  return {std::move(name), [shapes = std::move(shapes), lo, hi, fn = std::move(fn)](std::uint64_t seed) {
            Rng rng(seed);
            GradCheckInstance inst{{}, fn};
            for (const auto& s : shapes) inst.points.push_back(uniform_tensor(rng, s, lo, hi));
            return inst;
          }};
}

}  // namespace

std::vector<GradCheckCase> primitive_cases() {
  std::vector<GradCheckCase> cases;
  cases.push_back(uniform_case("add", {{3, 4}, {3, 4}}, -1.0, 1.0, [](Graph& g, std::span<const Var> v) {
    return project(g, g.add(v[0], v[1]), 1);
  }));
  cases.push_back(uniform_case("sub", {{3, 4}, {3, 4}}, -1.0, 1.0, [](Graph& g, std::span<const Var> v) {
    return project(g, g.sub(v[0], v[1]), 2);
  }));
  cases.push_back(uniform_case("mul", {{3, 4}, {3, 4}}, -1.0, 1.0, [](Graph& g, std::span<const Var> v) {
    return project(g, g.mul(v[0], v[1]), 3);
  }));
  cases.push_back(uniform_case("scale", {{3, 4}}, -1.0, 1.0, [](Graph& g, std::span<const Var> v) {
    return project(g, g.scale(v[0], -1.7), 4);
  }));
  cases.push_back(uniform_case("matmul", {{3, 4}, {4, 2}}, -1.0, 1.0, [](Graph& g, std::span<const Var> v) {
    return project(g, g.matmul(v[0], v[1]), 5);
  }));
  cases.push_back(uniform_case("add_bias", {{3, 4}, {4}}, -1.0, 1.0, [](Graph& g, std::span<const Var> v) {
    return project(g, g.add_bias(v[0], v[1]), 6);
  }));
  cases.push_back(uniform_case("conv2d", {{2, 2, 5, 5}, {3, 2, 3, 3}, {3}}, -1.0, 1.0,
                               [](Graph& g, std::span<const Var> v) {
                                 return project(g, g.conv2d(v[0], v[1], v[2], 1), 7);
                               }));
  cases.push_back({"relu", [](std::uint64_t seed) {
                     Rng rng(seed);
                     return GradCheckInstance{{away_from_zero(rng, {3, 5}, 1e-3)},
                                              [](Graph& g, std::span<const Var> v) {
                                                return project(g, g.relu(v[0]), 8);
                                              }};
                   }});
  cases.push_back(uniform_case("exp", {{3, 4}}, -2.0, 2.0, [](Graph& g, std::span<const Var> v) {
    return project(g, g.exp(v[0]), 9);
  }));
  cases.push_back(uniform_case("log1mexp", {{3, 4}}, -4.0, -0.05, [](Graph& g, std::span<const Var> v) {
    return project(g, g.log1mexp(v[0]), 10);
  }));
  cases.push_back(uniform_case("log_softmax", {{kB, kK}}, -3.0, 3.0, [](Graph& g, std::span<const Var> v) {
    return project(g, g.log_softmax(v[0]), 11);
  }));
  cases.push_back(uniform_case("sum", {{3, 4}}, -1.0, 1.0, [](Graph& g, std::span<const Var> v) {
    return g.sum(g.mul(v[0], v[0]));
  }));
  cases.push_back(uniform_case("mean", {{3, 4}}, -1.0, 1.0, [](Graph& g, std::span<const Var> v) {
    return g.mean(g.mul(v[0], v[0]));
  }));
  cases.push_back(uniform_case("sum_rows", {{3, 4}}, -1.0, 1.0, [](Graph& g, std::span<const Var> v) {
    return project(g, g.sum_rows(v[0]), 12);
  }));
  cases.push_back(uniform_case("pick", {{kB, kK}}, -1.0, 1.0, [](Graph& g, std::span<const Var> v) {
    return project(g, g.pick(v[0], fixed_labels()), 13);
  }));
  cases.push_back({"max_other", [](std::uint64_t seed) {
                     return GradCheckInstance{{smooth_logits(seed, 1e-3)}, [](Graph& g, std::span<const Var> v) {
                                                return project(g, g.max_other(v[0], fixed_labels()), 14);
                                              }};
                   }});
  cases.push_back(uniform_case("reshape", {{3, 4}}, -1.0, 1.0, [](Graph& g, std::span<const Var> v) {
    return project(g, g.reshape(v[0], {2, 6}), 15);
  }));
  return cases;
}

std::vector<GradCheckCase> loss_cases() {
  std::vector<GradCheckCase> cases;
  cases.push_back({"cross_entropy", [](std::uint64_t seed) {
                     return GradCheckInstance{{smooth_logits(seed, 1e-3)}, [](Graph& g, std::span<const Var> v) {
                                                return cross_entropy(g, v[0], fixed_labels());
                                              }};
                   }});
  cases.push_back({"label_smoothed_ce", [](std::uint64_t seed) {
                     Rng rng(seed ^ 0x5eedULL);
                     const double alpha = rng.uniform();
                     return GradCheckInstance{{smooth_logits(seed, 1e-3)},
                                              [alpha](Graph& g, std::span<const Var> v) {
                                                return label_smoothed_ce(g, v[0], fixed_labels(), alpha);
                                              }};
                   }});
  cases.push_back({"kl_divergence", [](std::uint64_t seed) {
                     Rng rng(seed ^ 0xfeedULL);
                     Tensor ref = log_softmax(uniform_tensor(rng, {kB, kK}, -2.0, 2.0));
                     return GradCheckInstance{{smooth_logits(seed, 1e-3)},
                                              [ref = std::move(ref)](Graph& g, std::span<const Var> v) {
                                                return kl_divergence(g, ref, v[0]);
                                              }};
                   }});
  cases.push_back({"mart_bce", [](std::uint64_t seed) {
                     return GradCheckInstance{{smooth_logits(seed, 1e-3)}, [](Graph& g, std::span<const Var> v) {
                                                return mart_bce(g, v[0], fixed_labels());
                                              }};
                   }});
  cases.push_back({"cw_margin", [](std::uint64_t seed) {
                     return GradCheckInstance{{smooth_logits(seed, 1e-3)}, [](Graph& g, std::span<const Var> v) {
                                                return cw_margin(g, v[0], fixed_labels());
                                              }};
                   }});
  return cases;
}

std::vector<SuiteRow> run_gradcheck_suite(std::span<const GradCheckCase> cases, const SuiteOptions& opts) {
  std::vector<SuiteRow> rows;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const auto& tc = cases[c];
    SuiteRow row{tc.name, 0.0, true};
    for (std::size_t p = 0; p < opts.points; ++p) {
      const auto inst = tc.instantiate(derive_seed(opts.seed, c, p));
      const double err = check_points(inst.fn, inst.points, opts.h, opts.inject_sign_bug == tc.name).max_rel_error;
      row.max_rel_error = std::max(row.max_rel_error, err);
    }
    row.passed = row.max_rel_error <= opts.tolerance;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace advlab
