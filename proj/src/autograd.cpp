#include "bdl/autograd.hpp"

#include <algorithm>
#include <cmath>

namespace bdl {

// ---------------------------------------------------------------------------
// Var / BackwardContext / Tape

const Tensor& Var::value() const { return tape_->node(id_).value; }

const Tensor& Var::grad() const {
  auto& n = tape_->node(id_);
  if (n.grad.empty()) return tape_->ensure_grad(id_);
  return n.grad;
}

bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

const Tensor& BackwardContext::out_value() const { return tape_.node(node_).value; }
const Tensor& BackwardContext::out_grad() const { return tape_.node(node_).grad; }
const Tensor& BackwardContext::input(std::size_t k) const {
  return tape_.node(tape_.node(node_).inputs.at(k)).value;
}

Tensor* BackwardContext::input_grad(std::size_t k) {
  auto id = tape_.node(node_).inputs.at(k);
  if (!tape_.node(id).requires_grad) return nullptr;
  return &tape_.ensure_grad(id);
}

Tensor& Tape::ensure_grad(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0f);
  return n.grad;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const auto& in : inputs) {
    if (in.tape_ != this) throw std::invalid_argument("tape: op input recorded on a different tape");
    n.inputs.push_back(in.id_);
    n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw std::invalid_argument("backward: loss belongs to a different tape");
  const auto& lv = nodes_[loss.id_].value;
  if (lv.numel() != 1) throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(lv.shape()));
  if (!nodes_[loss.id_].requires_grad) return;
  ensure_grad(loss.id_).fill(1.0f);
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    BackwardContext ctx(*this, i);
    n.backward(ctx);
  }
}

// ---------------------------------------------------------------------------
// helpers

namespace {

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_same(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) mismatch(op, a.shape(), b.shape());
}

void require_rank(const char* op, const Var& a, std::size_t rank) {
  if (a.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(a.shape()));
  }
}

// Rows/cols view over the last axis of a rank-1 or rank-2 tensor.
std::pair<std::size_t, std::size_t> rows_cols(const char* op, const Tensor& t) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  throw ShapeError(std::string(op) + ": expected rank 1 or 2, got shape " + shape_str(t.shape()));
}

template <class F>
Var unary(const Var& a, F&& f, BackwardFn bw) {
  Tensor out(a.shape());
  const auto& x = a.value();
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
  return a.tape().record(std::move(out), {a}, std::move(bw));
}

}  // namespace

Tensor one_hot(std::span<const int> labels, std::size_t n_classes) {
  Tensor t({labels.size(), n_classes}, 0.0f);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto c = labels[i];
    if (c < 0 || static_cast<std::size_t>(c) >= n_classes) {
      throw std::out_of_range("one_hot: label " + std::to_string(c) + " outside [0, " +
                              std::to_string(n_classes) + ")");
    }
    t[i * n_classes + static_cast<std::size_t>(c)] = 1.0f;
  }
  return t;
}

// ---------------------------------------------------------------------------
// linear algebra

Var matmul(const Var& a, const Var& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) mismatch("matmul", a.shape(), b.shape());
  Tensor out({m, n});
  const float* A = a.value().raw();
  const float* B = b.value().raw();
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const float* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<float>(acc[j]);
  }
  return a.tape().record(std::move(out), {a, b}, [m, k, n](BackwardContext& ctx) {
    const float* G = ctx.out_grad().raw();
    const float* A = ctx.input(0).raw();
    const float* B = ctx.input(1).raw();
    if (auto* ga = ctx.input_grad(0)) {
      float* dA = ga->raw();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(G[i * n + j]) * B[p * n + j];
          dA[i * k + p] += static_cast<float>(s);
        }
    }
    if (auto* gb = ctx.input_grad(1)) {
      float* dB = gb->raw();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const float av = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += av * G[i * n + j];
        }
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same("add", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    const auto& g = ctx.out_grad();
    for (std::size_t k = 0; k < 2; ++k)
      if (auto* gi = ctx.input_grad(k))
        for (std::size_t i = 0; i < g.numel(); ++i) (*gi)[i] += g[i];
  });
}

Var sub(const Var& a, const Var& b) {
  require_same("sub", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    const auto& g = ctx.out_grad();
    if (auto* ga = ctx.input_grad(0))
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
    if (auto* gb = ctx.input_grad(1))
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] -= g[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same("mul", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    const auto& g = ctx.out_grad();
    const auto& x = ctx.input(0);
    const auto& y = ctx.input(1);
    if (auto* ga = ctx.input_grad(0))
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * y[i];
    if (auto* gb = ctx.input_grad(1))
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * x[i];
  });
}

Var div(const Var& a, const Var& b) {
  require_same("div", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] / b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    const auto& g = ctx.out_grad();
    const auto& x = ctx.input(0);
    const auto& y = ctx.input(1);
    if (auto* ga = ctx.input_grad(0))
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] / y[i];
    if (auto* gb = ctx.input_grad(1))
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] -= g[i] * x[i] / (y[i] * y[i]);
  });
}

Var add_bias(const Var& x, const Var& bias) {
  require_rank("add_bias", bias, 1);
  const auto n = bias.shape()[0];
  if (x.value().rank() == 0 || x.shape().back() != n) mismatch("add_bias", x.shape(), bias.shape());
  Tensor out(x.shape());
  const auto rows = x.value().numel() / n;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x.value()[r * n + j] + bias.value()[j];
  return x.tape().record(std::move(out), {x, bias}, [rows, n](BackwardContext& ctx) {
    const auto& g = ctx.out_grad();
    if (auto* gx = ctx.input_grad(0))
      for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i];
    if (auto* gb = ctx.input_grad(1)) {
      std::vector<double> acc(n, 0.0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) acc[j] += g[r * n + j];
      for (std::size_t j = 0; j < n; ++j) (*gb)[j] += static_cast<float>(acc[j]);
    }
  });
}

// ---------------------------------------------------------------------------
// elementwise

Var scale(const Var& a, float factor) {
  return unary(a, [factor](float v) { return v * factor; }, [factor](BackwardContext& ctx) {
    const auto& g = ctx.out_grad();
    auto* gi = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.numel(); ++i) (*gi)[i] += g[i] * factor;
  });
}

Var add_scalar(const Var& a, float value) {
  return unary(a, [value](float v) { return v + value; }, [](BackwardContext& ctx) {
    const auto& g = ctx.out_grad();
    auto* gi = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.numel(); ++i) (*gi)[i] += g[i];
  });
}

Var relu(const Var& a) {
  return unary(a, [](float v) { return v > 0.0f ? v : 0.0f; }, [](BackwardContext& ctx) {
    const auto& g = ctx.out_grad();
    const auto& x = ctx.input(0);
    auto* gi = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (x[i] > 0.0f) (*gi)[i] += g[i];
  });
}

Var exp(const Var& a) {
  return unary(a, [](float v) { return std::exp(v); }, [](BackwardContext& ctx) {
    const auto& g = ctx.out_grad();
    const auto& y = ctx.out_value();
    auto* gi = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.numel(); ++i) (*gi)[i] += g[i] * y[i];
  });
}

Var log(const Var& a) {
  return unary(a, [](float v) { return std::log(v); }, [](BackwardContext& ctx) {
    const auto& g = ctx.out_grad();
    const auto& x = ctx.input(0);
    auto* gi = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.numel(); ++i) (*gi)[i] += g[i] / x[i];
  });
}

// ---------------------------------------------------------------------------
// reductions

Var sum(const Var& a) {
  double s = 0.0;
  for (float v : a.value().data()) s += v;
  return a.tape().record(Tensor::scalar(static_cast<float>(s)), {a}, [](BackwardContext& ctx) {
    const float g = ctx.out_grad()[0];
    auto* gi = ctx.input_grad(0);
    for (auto& v : gi->data()) v += g;
  });
}

Var mean(const Var& a) {
  const auto n = a.value().numel();
  double s = 0.0;
  for (float v : a.value().data()) s += v;
  return a.tape().record(Tensor::scalar(static_cast<float>(s / static_cast<double>(n))), {a},
                         [n](BackwardContext& ctx) {
                           const float g = ctx.out_grad()[0] / static_cast<float>(n);
                           auto* gi = ctx.input_grad(0);
                           for (auto& v : gi->data()) v += g;
                         });
}

Var l2_norm(const Var& a) {
  double s = 0.0;
  for (float v : a.value().data()) s += static_cast<double>(v) * v;
  const float norm = static_cast<float>(std::sqrt(s));
  return a.tape().record(Tensor::scalar(norm), {a}, [](BackwardContext& ctx) {
    const float norm = ctx.out_value()[0];
    if (norm == 0.0f) return;  // subgradient 0 at the origin
    const float g = ctx.out_grad()[0] / norm;
    const auto& x = ctx.input(0);
    auto* gi = ctx.input_grad(0);
    for (std::size_t i = 0; i < x.numel(); ++i) (*gi)[i] += g * x[i];
  });
}

Var row_sum(const Var& a) {
  require_rank("row_sum", a, 2);
  const auto m = a.shape()[0], n = a.shape()[1];
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += a.value()[i * n + j];
    out[i] = static_cast<float>(s);
  }
  return a.tape().record(std::move(out), {a}, [m, n](BackwardContext& ctx) {
    const auto& g = ctx.out_grad();
    auto* gi = ctx.input_grad(0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) (*gi)[i * n + j] += g[i];
  });
}

Var row_l2_norm(const Var& a) {
  require_rank("row_l2_norm", a, 2);
  const auto m = a.shape()[0], n = a.shape()[1];
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(a.value()[i * n + j]) * a.value()[i * n + j];
    out[i] = static_cast<float>(std::sqrt(s));
  }
  return a.tape().record(std::move(out), {a}, [m, n](BackwardContext& ctx) {
    const auto& g = ctx.out_grad();
    const auto& y = ctx.out_value();
    const auto& x = ctx.input(0);
    auto* gi = ctx.input_grad(0);
    for (std::size_t i = 0; i < m; ++i) {
      if (y[i] == 0.0f) continue;
      const float f = g[i] / y[i];
      for (std::size_t j = 0; j < n; ++j) (*gi)[i * n + j] += f * x[i * n + j];
    }
  });
}

// ---------------------------------------------------------------------------
// softmax / cross-entropy

Var softmax(const Var& logits) {
  const auto [m, n] = rows_cols("softmax", logits.value());
  Tensor out(logits.shape());
  const auto& z = logits.value();
  for (std::size_t i = 0; i < m; ++i) {
    const float* row = z.raw() + i * n;
    const float mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(static_cast<double>(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = static_cast<float>(std::exp(static_cast<double>(row[j] - mx)) / s);
  }
  return logits.tape().record(std::move(out), {logits}, [m, n](BackwardContext& ctx) {
    const auto& g = ctx.out_grad();
    const auto& y = ctx.out_value();
    auto* gi = ctx.input_grad(0);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(g[i * n + j]) * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        (*gi)[i * n + j] += y[i * n + j] * static_cast<float>(g[i * n + j] - dot);
    }
  });
}

Var cross_entropy(const Var& probs, const Tensor& targets) {
  if (probs.shape() != targets.shape()) mismatch("cross_entropy", probs.shape(), targets.shape());
  const auto [m, n] = rows_cols("cross_entropy", probs.value());
  const auto& p = probs.value();
  double s = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i)
    if (targets[i] != 0.0f) s -= static_cast<double>(targets[i]) * std::log(static_cast<double>(p[i]));
  const auto rows = m;
  return probs.tape().record(Tensor::scalar(static_cast<float>(s / static_cast<double>(rows))), {probs},
                             [targets, rows](BackwardContext& ctx) {
                               const float g = ctx.out_grad()[0] / static_cast<float>(rows);
                               const auto& p = ctx.input(0);
                               auto* gi = ctx.input_grad(0);
                               for (std::size_t i = 0; i < p.numel(); ++i)
                                 if (targets[i] != 0.0f) (*gi)[i] -= g * targets[i] / p[i];
                             });
}

Var softmax_cross_entropy(const Var& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape()) mismatch("softmax_cross_entropy", logits.shape(), targets.shape());
  const auto [m, n] = rows_cols("softmax_cross_entropy", logits.value());
  const auto& z = logits.value();
  Tensor probs(z.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const float* row = z.raw() + i * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) {
      probs[i * n + j] = static_cast<float>(std::exp(row[j] - lse));
      total -= static_cast<double>(targets[i * n + j]) * (row[j] - lse);
    }
  }
  return logits.tape().record(
      Tensor::scalar(static_cast<float>(total / static_cast<double>(m))), {logits},
      [targets, probs = std::move(probs), m, n](BackwardContext& ctx) {
        const float g = ctx.out_grad()[0] / static_cast<float>(m);
        auto* gi = ctx.input_grad(0);
        for (std::size_t i = 0; i < m; ++i) {
          double tsum = 0.0;
          for (std::size_t j = 0; j < n; ++j) tsum += targets[i * n + j];
          for (std::size_t j = 0; j < n; ++j) {
            const auto k = i * n + j;
            (*gi)[k] += g * (probs[k] * static_cast<float>(tsum) - targets[k]);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// convolution and pooling

namespace {

struct ConvGeometry {
  std::size_t batch, in_h, in_w, cin, k, cout, out_h, out_w, stride, pad;
};

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dParams params) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", weight, 4);
  require_rank("conv2d", bias, 1);
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (ws[0] != ws[1] || (ws[0] != 3 && ws[0] != 5)) {
    throw ShapeError("conv2d: kernel must be 3x3 or 5x5, got weight shape " + shape_str(ws));
  }
  if (params.stride < 1 || params.stride > 2) {
    throw ShapeError("conv2d: stride must be 1 or 2, got " + std::to_string(params.stride));
  }
  if (ws[2] != xs[3]) mismatch("conv2d", xs, ws);
  if (bias.shape()[0] != ws[3]) mismatch("conv2d", ws, bias.shape());

  ConvGeometry g{};
  g.batch = xs[0];
  g.in_h = xs[1];
  g.in_w = xs[2];
  g.cin = xs[3];
  g.k = ws[0];
  g.cout = ws[3];
  g.stride = params.stride;
  g.pad = params.padding == Padding::same ? g.k / 2 : 0;
  if (g.in_h + 2 * g.pad < g.k || g.in_w + 2 * g.pad < g.k) {
    throw ShapeError("conv2d: input " + shape_str(xs) + " smaller than kernel " + shape_str(ws));
  }
  g.out_h = (g.in_h + 2 * g.pad - g.k) / g.stride + 1;
  g.out_w = (g.in_w + 2 * g.pad - g.k) / g.stride + 1;

  Tensor out({g.batch, g.out_h, g.out_w, g.cout});
  const float* X = x.value().raw();
  const float* W = weight.value().raw();
  const float* B = bias.value().raw();
  std::vector<double> acc(g.cout);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t oy = 0; oy < g.out_h; ++oy)
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        for (std::size_t co = 0; co < g.cout; ++co) acc[co] = B[co];
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            const float* xp = X + ((b * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + static_cast<std::size_t>(ix)) * g.cin;
            const float* wp = W + (ky * g.k + kx) * g.cin * g.cout;
            for (std::size_t ci = 0; ci < g.cin; ++ci) {
              const double xv = xp[ci];
              const float* wrow = wp + ci * g.cout;
              for (std::size_t co = 0; co < g.cout; ++co) acc[co] += xv * wrow[co];
            }
          }
        }
        float* op = out.raw() + ((b * g.out_h + oy) * g.out_w + ox) * g.cout;
        for (std::size_t co = 0; co < g.cout; ++co) op[co] = static_cast<float>(acc[co]);
      }

  return x.tape().record(std::move(out), {x, weight, bias}, [g](BackwardContext& ctx) {
    const float* G = ctx.out_grad().raw();
    const float* X = ctx.input(0).raw();
    const float* W = ctx.input(1).raw();
    auto* gx = ctx.input_grad(0);
    auto* gw = ctx.input_grad(1);
    auto* gb = ctx.input_grad(2);
    std::vector<double> dw(gw ? gw->numel() : 0, 0.0);
    std::vector<double> db(gb ? g.cout : 0, 0.0);
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          const float* gp = G + ((b * g.out_h + oy) * g.out_w + ox) * g.cout;
          if (gb)
            for (std::size_t co = 0; co < g.cout; ++co) db[co] += gp[co];
          for (std::size_t ky = 0; ky < g.k; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
            for (std::size_t kx = 0; kx < g.k; ++kx) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
              const auto xoff = ((b * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + static_cast<std::size_t>(ix)) * g.cin;
              const auto woff = (ky * g.k + kx) * g.cin * g.cout;
              for (std::size_t ci = 0; ci < g.cin; ++ci) {
                const float* wrow = W + woff + ci * g.cout;
                if (gx) {
                  float s = 0.0f;
                  for (std::size_t co = 0; co < g.cout; ++co) s += gp[co] * wrow[co];
                  (*gx)[xoff + ci] += s;
                }
                if (gw) {
                  const double xv = X[xoff + ci];
                  double* dwrow = dw.data() + woff + ci * g.cout;
                  for (std::size_t co = 0; co < g.cout; ++co) dwrow[co] += xv * gp[co];
                }
              }
            }
          }
        }
    if (gw)
      for (std::size_t i = 0; i < dw.size(); ++i) (*gw)[i] += static_cast<float>(dw[i]);
    if (gb)
      for (std::size_t co = 0; co < g.cout; ++co) (*gb)[co] += static_cast<float>(db[co]);
  });
}

Var global_avg_pool(const Var& x) {
  require_rank("global_avg_pool", x, 4);
  const auto b = x.shape()[0], hw = x.shape()[1] * x.shape()[2], c = x.shape()[3];
  Tensor out({b, c});
  std::vector<double> acc(c);
  for (std::size_t i = 0; i < b; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const float* xp = x.value().raw() + i * hw * c;
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += xp[p * c + ch];
    for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] = static_cast<float>(acc[ch] / static_cast<double>(hw));
  }
  return x.tape().record(std::move(out), {x}, [b, hw, c](BackwardContext& ctx) {
    const auto& g = ctx.out_grad();
    auto* gi = ctx.input_grad(0);
    const float inv = 1.0f / static_cast<float>(hw);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) (*gi)[(i * hw + p) * c + ch] += g[i * c + ch] * inv;
  });
}

// ---------------------------------------------------------------------------
// shape ops

Var reshape(const Var& a, Shape shape) {
  if (shape_numel(shape) != a.value().numel()) mismatch("reshape", a.shape(), shape);
  return a.tape().record(a.value().reshaped(std::move(shape)), {a}, [](BackwardContext& ctx) {
    const auto& g = ctx.out_grad();
    auto* gi = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.numel(); ++i) (*gi)[i] += g[i];
  });
}

Var gather_rows(const Var& a, std::span<const std::size_t> rows) {
  if (a.value().rank() == 0) throw ShapeError("gather_rows: needs rank >= 1, got " + shape_str(a.shape()));
  if (rows.empty()) throw ShapeError("gather_rows: empty row selection");
  const auto m = a.shape()[0];
  const auto width = a.value().numel() / m;
  Shape shape = a.shape();
  shape[0] = rows.size();
  Tensor out(shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= m) {
      throw std::out_of_range("gather_rows: row " + std::to_string(rows[r]) + " out of range for " +
                              shape_str(a.shape()));
    }
    std::copy_n(a.value().raw() + rows[r] * width, width, out.raw() + r * width);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.tape().record(std::move(out), {a}, [idx = std::move(idx), width](BackwardContext& ctx) {
    const auto& g = ctx.out_grad();
    auto* gi = ctx.input_grad(0);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < width; ++j) (*gi)[idx[r] * width + j] += g[r * width + j];
  });
}

Var pairwise_sq_dist(const Var& a) {
  require_rank("pairwise_sq_dist", a, 2);
  const auto m = a.shape()[0], d = a.shape()[1];
  const float* A = a.value().raw();
  Tensor out({m, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = static_cast<double>(A[i * d + k]) - A[j * d + k];
        s += diff * diff;
      }
      out[i * m + j] = out[j * m + i] = static_cast<float>(s);
    }
  return a.tape().record(std::move(out), {a}, [m, d](BackwardContext& ctx) {
    const auto& g = ctx.out_grad();
    const float* A = ctx.input(0).raw();
    auto* gi = ctx.input_grad(0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        if (i == j) continue;
        const float w = 2.0f * (g[i * m + j] + g[j * m + i]);
        if (w == 0.0f) continue;
        for (std::size_t k = 0; k < d; ++k) (*gi)[i * d + k] += w * (A[i * d + k] - A[j * d + k]);
      }
  });
}

}  // namespace bdl
