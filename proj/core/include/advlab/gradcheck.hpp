#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "advlab/graph.hpp"
#include "advlab/tensor.hpp"

namespace advlab {

/// Scalar-valued function recorded on a graph from one leaf per input tensor.
using MultiScalarFn = std::function<Var(Graph&, std::span<const Var>)>;
using ScalarFn = std::function<Var(Graph&, Var)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
};

/// Compares the reverse-mode gradient of `fn` at `points` against central
/// differences with step `h`. Error per coordinate is
/// |analytic - numeric| / max(1, |analytic|).
/// Throws NumericError if any function value is non-finite.
GradCheckResult grad_check(const MultiScalarFn& fn, std::span<const Tensor> points, double h = 1e-5);
double grad_check(const ScalarFn& fn, const Tensor& point, double h = 1e-5);

/// Analytic gradient of `fn` at `points`, one tensor per input.
std::vector<Tensor> analytic_gradient(const MultiScalarFn& fn, std::span<const Tensor> points);

/// A sampled check: inputs to differentiate plus the function of them.
/// Anything held constant (labels, alpha, reference distributions) is
/// captured by `fn`.
struct GradCheckInstance {
  std::vector<Tensor> points;
  MultiScalarFn fn;
};

/// One entry of the finite-difference suite; `instantiate` draws a smooth
/// random point from a seed.
struct GradCheckCase {
  std::string name;
  std::function<GradCheckInstance(std::uint64_t seed)> instantiate;
};

/// One case per primitive op (every OpKind except leaf).
std::vector<GradCheckCase> primitive_cases();
/// One case per loss: ce, lsce, kl, mart_bce, cw_margin.
std::vector<GradCheckCase> loss_cases();

struct SuiteRow {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct SuiteOptions {
  std::size_t points = 100;
  double h = 1e-5;
  double tolerance = 1e-5;
  std::uint64_t seed = 1234;
  /// Test hook: negate the analytic gradient of the named case before comparing.
  std::string inject_sign_bug;
};

std::vector<SuiteRow> run_gradcheck_suite(std::span<const GradCheckCase> cases, const SuiteOptions& opts);

}  // namespace advlab
