#include "advlab/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "advlab/errors.hpp"

namespace advlab {

namespace {

// 1 - exp(a) is floored here, matching the additive 1e-12 guard common in
// MART implementations; past the floor the op is constant.
constexpr double kLog1mExpCeiling = -1e-12;

double log1mexp_value(double a) {
  a = std::min(a, kLog1mExpCeiling);
  return a > -0.6931471805599453 ? std::log(-std::expm1(a)) : std::log1p(-std::exp(a));
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kRelu: return "relu";
    case OpKind::kExp: return "exp";
    case OpKind::kLog1mExp: return "log1mexp";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kSumRows: return "sum_rows";
    case OpKind::kPick: return "pick";
    case OpKind::kMaxOther: return "max_other";
    case OpKind::kReshape: return "reshape";
  }
  return "?";
}

const Graph::Node& Graph::node(Var v) const {
  if (v.generation != generation_ || v.id >= nodes_.size()) {
    throw StateError("graph: variable does not belong to the current recording (forward not run or graph cleared)");
  }
  return nodes_[v.id];
}

std::string Graph::node_label(Var v) const {
  const Node& n = node(v);
  std::string s = std::string(op_name(n.kind)) + "#" + std::to_string(v.id);
  if (!n.name.empty()) s += "(" + n.name + ")";
  return s;
}

void Graph::shape_fail(OpKind kind, const std::string& detail) const {
  throw ShapeError(std::string(op_name(kind)) + "#" + std::to_string(nodes_.size()) + ": " + detail);
}

Var Graph::push(Node n) {
  n.requires_grad = n.requires_grad || std::any_of(std::begin(n.parents), std::end(n.parents), [&](std::size_t p) {
                      return p != kNone && nodes_[p].requires_grad;
                    });
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1, generation_};
}

Var Graph::leaf(Tensor value, bool requires_grad, std::string name) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.name = std::move(name);
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Graph::add(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.shape() != y.shape()) shape_fail(OpKind::kAdd, shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  Node n;
  n.kind = OpKind::kAdd;
  n.value = x;
  for (std::size_t i = 0; i < y.size(); ++i) n.value[i] += y[i];
  n.parents[0] = a.id;
  n.parents[1] = b.id;
  return push(std::move(n));
}

Var Graph::sub(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.shape() != y.shape()) shape_fail(OpKind::kSub, shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  Node n;
  n.kind = OpKind::kSub;
  n.value = x;
  for (std::size_t i = 0; i < y.size(); ++i) n.value[i] -= y[i];
  n.parents[0] = a.id;
  n.parents[1] = b.id;
  return push(std::move(n));
}

Var Graph::mul(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.shape() != y.shape()) shape_fail(OpKind::kMul, shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  Node n;
  n.kind = OpKind::kMul;
  n.value = x;
  for (std::size_t i = 0; i < y.size(); ++i) n.value[i] *= y[i];
  n.parents[0] = a.id;
  n.parents[1] = b.id;
  return push(std::move(n));
}

Var Graph::scale(Var a, double c) {
  Node n;
  n.kind = OpKind::kScale;
  n.value = value(a);
  for (double& v : n.value.values()) v *= c;
  n.scalar = c;
  n.parents[0] = a.id;
  return push(std::move(n));
}

Var Graph::matmul(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
    shape_fail(OpKind::kMatMul, shape_str(x.shape()) + " x " + shape_str(y.shape()));
  }
  const std::size_t m = x.dim(0), k = x.dim(1), cols = y.dim(1);
  Node n;
  n.kind = OpKind::kMatMul;
  n.value = Tensor({m, cols});
  double* out = n.value.data().data();
  const double* xd = x.data().data();
  const double* yd = y.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out + i * cols;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = xd[i * k + p];
      const double* yrow = yd + p * cols;
      for (std::size_t j = 0; j < cols; ++j) orow[j] += s * yrow[j];
    }
  }
  n.parents[0] = a.id;
  n.parents[1] = b.id;
  return push(std::move(n));
}

Var Graph::add_bias(Var a, Var bias) {
  const Tensor& x = value(a);
  const Tensor& b = value(bias);
  if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(1)) {
    shape_fail(OpKind::kAddBias, shape_str(x.shape()) + " + " + shape_str(b.shape()));
  }
  Node n;
  n.kind = OpKind::kAddBias;
  n.value = x;
  const std::size_t cols = x.dim(1);
  for (std::size_t i = 0; i < x.size(); ++i) n.value[i] += b[i % cols];
  n.parents[0] = a.id;
  n.parents[1] = bias.id;
  return push(std::move(n));
}

Var Graph::conv2d(Var x, Var weight, Var bias, std::size_t padding) {
  const Tensor& in = value(x);
  const Tensor& w = value(weight);
  const Tensor& b = value(bias);
  if (in.rank() != 4 || w.rank() != 4 || b.rank() != 1 || w.dim(1) != in.dim(1) || w.dim(2) != w.dim(3) ||
      b.dim(0) != w.dim(0)) {
    shape_fail(OpKind::kConv2d, "input " + shape_str(in.shape()) + ", weight " + shape_str(w.shape()) + ", bias " +
                                    shape_str(b.shape()));
  }
  const std::size_t batch = in.dim(0), cin = in.dim(1), h = in.dim(2), wd = in.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (h + 2 * padding < k || wd + 2 * padding < k) {
    shape_fail(OpKind::kConv2d, "kernel " + std::to_string(k) + " larger than padded input " + shape_str(in.shape()));
  }
  const std::size_t oh = h + 2 * padding - k + 1, ow = wd + 2 * padding - k + 1;
  const auto pad = static_cast<std::ptrdiff_t>(padding);

  Node n;
  n.kind = OpKind::kConv2d;
  n.value = Tensor({batch, cout, oh, ow});
  double* out = n.value.data().data();
  const double* ind = in.data().data();
  const double* wdat = w.data().data();
  for (std::size_t bi = 0; bi < batch; ++bi) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* oplane = out + (bi * cout + o) * oh * ow;
      std::fill(oplane, oplane + oh * ow, b[o]);
      for (std::size_t c = 0; c < cin; ++c) {
        const double* iplane = ind + (bi * cin + c) * h * wd;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const double wv = wdat[((o * cin + c) * k + ky) * k + kx];
            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
            const std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
            const std::size_t x1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(ow),
                                                            static_cast<std::ptrdiff_t>(wd) - dx);
            for (std::size_t y = 0; y < oh; ++y) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              const double* irow = iplane + static_cast<std::size_t>(iy) * wd;
              double* orow = oplane + y * ow;
              for (std::size_t xo = x0; xo < x1; ++xo) {
                orow[xo] += wv * irow[static_cast<std::ptrdiff_t>(xo) + dx];
              }
            }
          }
        }
      }
    }
  }
  n.scalar = static_cast<double>(padding);
  n.parents[0] = x.id;
  n.parents[1] = weight.id;
  n.parents[2] = bias.id;
  return push(std::move(n));
}

Var Graph::relu(Var a) {
  Node n;
  n.kind = OpKind::kRelu;
  n.value = value(a);
  for (double& v : n.value.values()) v = v > 0.0 ? v : 0.0;
  n.parents[0] = a.id;
  return push(std::move(n));
}

Var Graph::exp(Var a) {
  Node n;
  n.kind = OpKind::kExp;
  n.value = value(a);
  for (double& v : n.value.values()) v = std::exp(v);
  n.parents[0] = a.id;
  return push(std::move(n));
}

Var Graph::log1mexp(Var a) {
  Node n;
  n.kind = OpKind::kLog1mExp;
  n.value = value(a);
  for (double& v : n.value.values()) v = log1mexp_value(v);
  n.parents[0] = a.id;
  return push(std::move(n));
}

Var Graph::log_softmax(Var a) {
  const Tensor& x = value(a);
  if (x.rank() != 2 || x.dim(1) == 0) shape_fail(OpKind::kLogSoftmax, "expected [B,K], got " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Node n;
  n.kind = OpKind::kLogSoftmax;
  n.value = x;
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = n.value.data().data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < cols; ++j) row[j] -= lse;
  }
  n.parents[0] = a.id;
  return push(std::move(n));
}

Var Graph::sum(Var a) {
  Node n;
  n.kind = OpKind::kSum;
  double s = 0.0;
  for (double v : value(a).values()) s += v;
  n.value = Tensor::scalar(s);
  n.parents[0] = a.id;
  return push(std::move(n));
}

Var Graph::mean(Var a) {
  const Tensor& x = value(a);
  if (x.empty()) shape_fail(OpKind::kMean, "mean of empty tensor");
  Node n;
  n.kind = OpKind::kMean;
  double s = 0.0;
  for (double v : x.values()) s += v;
  n.value = Tensor::scalar(s / static_cast<double>(x.size()));
  n.parents[0] = a.id;
  return push(std::move(n));
}

Var Graph::sum_rows(Var a) {
  const Tensor& x = value(a);
  if (x.rank() != 2) shape_fail(OpKind::kSumRows, "expected [B,K], got " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Node n;
  n.kind = OpKind::kSumRows;
  n.value = Tensor({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += x[r * cols + j];
    n.value[r] = s;
  }
  n.parents[0] = a.id;
  return push(std::move(n));
}

Var Graph::pick(Var a, std::span<const int> labels) {
  const Tensor& x = value(a);
  if (x.rank() != 2 || labels.size() != x.dim(0)) {
    shape_fail(OpKind::kPick, shape_str(x.shape()) + " with " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Node n;
  n.kind = OpKind::kPick;
  n.value = Tensor({rows});
  n.index.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= cols) {
      throw ContractError("pick: label " + std::to_string(labels[r]) + " outside [0," + std::to_string(cols) + ")");
    }
    n.index[r] = static_cast<std::size_t>(labels[r]);
    n.value[r] = x[r * cols + n.index[r]];
  }
  n.parents[0] = a.id;
  return push(std::move(n));
}

Var Graph::max_other(Var a, std::span<const int> labels) {
  const Tensor& x = value(a);
  if (x.rank() != 2 || labels.size() != x.dim(0) || x.dim(1) < 2) {
    shape_fail(OpKind::kMaxOther, shape_str(x.shape()) + " with " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Node n;
  n.kind = OpKind::kMaxOther;
  n.value = Tensor({rows});
  n.index.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= cols) {
      throw ContractError("max_other: label " + std::to_string(labels[r]) + " outside [0," + std::to_string(cols) +
                          ")");
    }
    const auto y = static_cast<std::size_t>(labels[r]);
    std::size_t best = y == 0 ? 1 : 0;
    for (std::size_t j = best + 1; j < cols; ++j) {
      if (j != y && x[r * cols + j] > x[r * cols + best]) best = j;
    }
    n.index[r] = best;
    n.value[r] = x[r * cols + best];
  }
  n.parents[0] = a.id;
  return push(std::move(n));
}

Var Graph::reshape(Var a, Shape shape) {
  const Tensor& x = value(a);
  if (shape_numel(shape) != x.size()) shape_fail(OpKind::kReshape, shape_str(x.shape()) + " -> " + shape_str(shape));
  Node n;
  n.kind = OpKind::kReshape;
  n.value = x.reshaped(std::move(shape));
  n.parents[0] = a.id;
  return push(std::move(n));
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

bool Graph::requires_grad(Var v) const { return node(v).requires_grad; }

Tensor Graph::grad(Var v) const {
  const Node& n = node(v);
  if (!has_backward_) throw StateError("graph: grad requested before backward");
  if (n.grad.empty()) return Tensor(n.value.shape());
  return Tensor(n.value.shape(), n.grad);
}

void Graph::clear() {
  nodes_.clear();
  ++generation_;
  has_backward_ = false;
}

void Graph::backward(Var root) {
  if (root.generation != generation_ || root.id >= nodes_.size()) {
    throw StateError("graph: backward before forward (root is not a recorded node)");
  }
  if (nodes_[root.id].value.size() != 1) {
    throw ContractError("graph: backward root " + node_label(root) + " is not scalar, shape " +
                        shape_str(nodes_[root.id].value.shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  has_backward_ = true;
  if (!nodes_[root.id].requires_grad) return;
  nodes_[root.id].grad.assign(1, 1.0);
  for (std::size_t id = root.id + 1; id-- > 0;) {
    if (!nodes_[id].grad.empty()) backprop_node(id);
  }
}

void Graph::backprop_node(std::size_t id) {
  Node& n = nodes_[id];
  const std::vector<double>& g = n.grad;
  auto target = [&](int slot) -> std::vector<double>* {
    const std::size_t p = n.parents[slot];
    if (p == kNone || !nodes_[p].requires_grad) return nullptr;
    auto& pg = nodes_[p].grad;
    if (pg.empty()) pg.assign(nodes_[p].value.size(), 0.0);
    return &pg;
  };
  auto parent_value = [&](int slot) -> const Tensor& { return nodes_[n.parents[slot]].value; };

  switch (n.kind) {
    case OpKind::kLeaf:
      break;
    case OpKind::kAdd:
    case OpKind::kSub: {
      if (auto* ga = target(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      }
      if (auto* gb = target(1)) {
        const double sign = n.kind == OpKind::kAdd ? 1.0 : -1.0;
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += sign * g[i];
      }
      break;
    }
    case OpKind::kMul: {
      const Tensor& a = parent_value(0);
      const Tensor& b = parent_value(1);
      if (auto* ga = target(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b[i];
      }
      if (auto* gb = target(1)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a[i];
      }
      break;
    }
    case OpKind::kScale: {
      if (auto* ga = target(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += n.scalar * g[i];
      }
      break;
    }
    case OpKind::kMatMul: {
      const Tensor& a = parent_value(0);
      const Tensor& b = parent_value(1);
      const std::size_t m = a.dim(0), k = a.dim(1), cols = b.dim(1);
      if (auto* ga = target(0)) {
        // dA = G B^T
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < cols; ++j) s += g[i * cols + j] * b[p * cols + j];
            (*ga)[i * k + p] += s;
          }
        }
      }
      if (auto* gb = target(1)) {
        // dB = A^T G
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double s = a[i * k + p];
            double* row = gb->data() + p * cols;
            for (std::size_t j = 0; j < cols; ++j) row[j] += s * g[i * cols + j];
          }
        }
      }
      break;
    }
    case OpKind::kAddBias: {
      if (auto* ga = target(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      }
      if (auto* gb = target(1)) {
        const std::size_t cols = gb->size();
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % cols] += g[i];
      }
      break;
    }
    case OpKind::kConv2d: {
      const Tensor& in = parent_value(0);
      const Tensor& w = parent_value(1);
      const std::size_t batch = in.dim(0), cin = in.dim(1), h = in.dim(2), wd = in.dim(3);
      const std::size_t cout = w.dim(0), k = w.dim(2);
      const std::size_t oh = n.value.dim(2), ow = n.value.dim(3);
      const auto pad = static_cast<std::ptrdiff_t>(n.scalar);
      auto* gin = target(0);
      auto* gw = target(1);
      if (auto* gbias = target(2)) {
        for (std::size_t bi = 0; bi < batch; ++bi) {
          for (std::size_t o = 0; o < cout; ++o) {
            const double* gp = g.data() + (bi * cout + o) * oh * ow;
            double s = 0.0;
            for (std::size_t i = 0; i < oh * ow; ++i) s += gp[i];
            (*gbias)[o] += s;
          }
        }
      }
      if (!gin && !gw) break;
      for (std::size_t bi = 0; bi < batch; ++bi) {
        for (std::size_t o = 0; o < cout; ++o) {
          const double* gplane = g.data() + (bi * cout + o) * oh * ow;
          for (std::size_t c = 0; c < cin; ++c) {
            const double* iplane = in.data().data() + (bi * cin + c) * h * wd;
            double* giplane = gin ? gin->data() + (bi * cin + c) * h * wd : nullptr;
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::size_t widx = ((o * cin + c) * k + ky) * k + kx;
                const double wv = w[widx];
                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                const std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
                const std::size_t x1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(ow),
                                                                static_cast<std::ptrdiff_t>(wd) - dx);
                double wacc = 0.0;
                for (std::size_t y = 0; y < oh; ++y) {
                  const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - pad;
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                  const double* grow = gplane + y * ow;
                  const std::size_t roff = static_cast<std::size_t>(iy) * wd;
                  for (std::size_t xo = x0; xo < x1; ++xo) {
                    const std::size_t ix = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(xo) + dx);
                    if (gw) wacc += grow[xo] * iplane[roff + ix];
                    if (giplane) giplane[roff + ix] += wv * grow[xo];
                  }
                }
                if (gw) (*gw)[widx] += wacc;
              }
            }
          }
        }
      }
      break;
    }
    case OpKind::kRelu: {
      if (auto* ga = target(0)) {
        const Tensor& a = parent_value(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (a[i] > 0.0) (*ga)[i] += g[i];
        }
      }
      break;
    }
    case OpKind::kExp: {
      if (auto* ga = target(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * n.value[i];
      }
      break;
    }
    case OpKind::kLog1mExp: {
      if (auto* ga = target(0)) {
        const Tensor& a = parent_value(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (a[i] < kLog1mExpCeiling) (*ga)[i] += g[i] * (-1.0 / std::expm1(-a[i]));
        }
      }
      break;
    }
    case OpKind::kLogSoftmax: {
      if (auto* ga = target(0)) {
        const std::size_t rows = n.value.dim(0), cols = n.value.dim(1);
        for (std::size_t r = 0; r < rows; ++r) {
          double gs = 0.0;
          for (std::size_t j = 0; j < cols; ++j) gs += g[r * cols + j];
          for (std::size_t j = 0; j < cols; ++j) {
            (*ga)[r * cols + j] += g[r * cols + j] - std::exp(n.value[r * cols + j]) * gs;
          }
        }
      }
      break;
    }
    case OpKind::kSum:
    case OpKind::kMean: {
      if (auto* ga = target(0)) {
        const double s = n.kind == OpKind::kSum ? g[0] : g[0] / static_cast<double>(ga->size());
        for (double& v : *ga) v += s;
      }
      break;
    }
    case OpKind::kSumRows: {
      if (auto* ga = target(0)) {
        const std::size_t cols = ga->size() / g.size();
        for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g[i / cols];
      }
      break;
    }
    case OpKind::kPick:
    case OpKind::kMaxOther: {
      if (auto* ga = target(0)) {
        const std::size_t cols = ga->size() / g.size();
        for (std::size_t r = 0; r < g.size(); ++r) (*ga)[r * cols + n.index[r]] += g[r];
      }
      break;
    }
    case OpKind::kReshape: {
      if (auto* ga = target(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      }
      break;
    }
  }
}

}  // namespace advlab
