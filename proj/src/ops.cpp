#include "faultdet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace faultdet {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check_same_shape(const Value& a, const Value& b, const char* op) {
  if (a.shape() != b.shape())
    throw ConfigError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                      b.shape().str());
}

void check_rank(const Value& v, int rank, const char* op) {
  if (v.shape().rank() != rank)
    throw ConfigError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                      v.shape().str());
}

Value unary_op(const Value& a, const char* name, double (*fwd)(double), double (*dfdx)(double)) {
  Tensor out(a.shape());
  const double* x = a.val().data();
  double* y = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) y[i] = fwd(x[i]);
  return make_node(std::move(out), {a},
                   [dfdx](Node& self) {
                     Tensor* gx = grad_sink(self.parents[0]);
                     if (!gx) return;
                     const double* x = self.parents[0]->value.data();
                     const double* g = self.grad.data();
                     double* dst = gx->data();
                     const std::int64_t n = self.grad.numel();
                     for (std::int64_t i = 0; i < n; ++i) dst[i] += g[i] * dfdx(x[i]);
                   },
                   name);
}

double relu_fwd(double x) { return x > 0.0 ? x : 0.0; }
double relu_dfdx(double x) { return x > 0.0 ? 1.0 : 0.0; }

double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double gelu_dfdx(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

double softplus_fwd(double x) { return (x > 0.0 ? x : 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid_fwd(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
double sigmoid_dfdx(double x) {
  const double s = sigmoid_fwd(x);
  return s * (1.0 - s);
}

double exp_fwd(double x) { return std::exp(x); }

}  // namespace

Value add(const Value& a, const Value& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape());
  const double* pa = a.val().data();
  const double* pb = b.val().data();
  double* y = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) y[i] = pa[i] + pb[i];
  return make_node(std::move(out), {a, b},
                   [](Node& self) {
                     accumulate(self.parents[0], self.grad);
                     accumulate(self.parents[1], self.grad);
                   },
                   "add");
}

Value sub(const Value& a, const Value& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  const double* pa = a.val().data();
  const double* pb = b.val().data();
  double* y = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) y[i] = pa[i] - pb[i];
  return make_node(std::move(out), {a, b},
                   [](Node& self) {
                     accumulate(self.parents[0], self.grad);
                     if (Tensor* gb = grad_sink(self.parents[1])) {
                       const double* g = self.grad.data();
                       double* dst = gb->data();
                       const std::int64_t n = self.grad.numel();
                       for (std::int64_t i = 0; i < n; ++i) dst[i] -= g[i];
                     }
                   },
                   "sub");
}

Value mul(const Value& a, const Value& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const double* pa = a.val().data();
  const double* pb = b.val().data();
  double* y = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) y[i] = pa[i] * pb[i];
  return make_node(std::move(out), {a, b},
                   [](Node& self) {
                     const double* g = self.grad.data();
                     const std::int64_t n = self.grad.numel();
                     if (Tensor* ga = grad_sink(self.parents[0])) {
                       const double* pb = self.parents[1]->value.data();
                       double* dst = ga->data();
                       for (std::int64_t i = 0; i < n; ++i) dst[i] += g[i] * pb[i];
                     }
                     if (Tensor* gb = grad_sink(self.parents[1])) {
                       const double* pa = self.parents[0]->value.data();
                       double* dst = gb->data();
                       for (std::int64_t i = 0; i < n; ++i) dst[i] += g[i] * pa[i];
                     }
                   },
                   "mul");
}

Value scale(const Value& a, double s) {
  Tensor out(a.shape());
  const double* x = a.val().data();
  double* y = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) y[i] = s * x[i];
  return make_node(std::move(out), {a},
                   [s](Node& self) {
                     if (Tensor* gx = grad_sink(self.parents[0])) {
                       const double* g = self.grad.data();
                       double* dst = gx->data();
                       const std::int64_t n = self.grad.numel();
                       for (std::int64_t i = 0; i < n; ++i) dst[i] += s * g[i];
                     }
                   },
                   "scale");
}

Value add_scalar(const Value& a, double s) {
  Tensor out(a.shape());
  const double* x = a.val().data();
  double* y = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] + s;
  return make_node(std::move(out), {a},
                   [](Node& self) { accumulate(self.parents[0], self.grad); }, "add_scalar");
}

Value mul_scalar_value(const Value& x, const Value& s) {
  if (s.val().numel() != 1) throw ConfigError("mul_scalar_value: scalar operand must have one element");
  Tensor out(x.shape());
  const double sv = s.val()[0];
  const double* px = x.val().data();
  double* py = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) py[i] = sv * px[i];
  return make_node(std::move(out), {x, s},
                   [](Node& self) {
                     const double* g = self.grad.data();
                     const std::int64_t n = self.grad.numel();
                     if (Tensor* gx = grad_sink(self.parents[0])) {
                       const double sv = self.parents[1]->value[0];
                       double* dst = gx->data();
                       for (std::int64_t i = 0; i < n; ++i) dst[i] += sv * g[i];
                     }
                     if (Tensor* gs = grad_sink(self.parents[1])) {
                       const double* px = self.parents[0]->value.data();
                       double acc = 0.0;
                       for (std::int64_t i = 0; i < n; ++i) acc += g[i] * px[i];
                       (*gs)[0] += acc;
                     }
                   },
                   "mul_scalar_value");
}

Value relu(const Value& a) { return unary_op(a, "relu", relu_fwd, relu_dfdx); }
Value gelu(const Value& a) { return unary_op(a, "gelu", gelu_fwd, gelu_dfdx); }
Value softplus(const Value& a) { return unary_op(a, "softplus", softplus_fwd, sigmoid_fwd); }
Value sigmoid(const Value& a) { return unary_op(a, "sigmoid", sigmoid_fwd, sigmoid_dfdx); }
Value exp_value(const Value& a) { return unary_op(a, "exp", exp_fwd, exp_fwd); }

Value sum(const Value& a) {
  double acc = 0.0;
  const double* x = a.val().data();
  const std::int64_t n = a.val().numel();
  for (std::int64_t i = 0; i < n; ++i) acc += x[i];
  return make_node(Tensor::scalar(acc), {a},
                   [](Node& self) {
                     if (Tensor* gx = grad_sink(self.parents[0])) {
                       const double g = self.grad[0];
                       double* dst = gx->data();
                       const std::int64_t n = gx->numel();
                       for (std::int64_t i = 0; i < n; ++i) dst[i] += g;
                     }
                   },
                   "sum");
}

Value mean(const Value& a) { return scale(sum(a), 1.0 / static_cast<double>(a.val().numel())); }

Value matmul(const Value& a, const Value& b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw ConfigError("matmul: inner dims " + a.shape().str() + " x " + b.shape().str());
  Tensor out({m, n});
  {
    const double* pa = a.val().data();
    const double* pb = b.val().data();
    double* pc = out.data();
    for (int i = 0; i < m; ++i) {
      const double* arow = pa + static_cast<std::int64_t>(i) * k;
      double* crow = pc + static_cast<std::int64_t>(i) * n;
      for (int kk = 0; kk < k; ++kk) {
        const double av = arow[kk];
        if (av == 0.0) continue;
        const double* brow = pb + static_cast<std::int64_t>(kk) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  return make_node(std::move(out), {a, b},
                   [m, k, n](Node& self) {
                     const double* g = self.grad.data();
                     if (Tensor* ga = grad_sink(self.parents[0])) {
                       const double* pb = self.parents[1]->value.data();
                       double* da = ga->data();
                       for (int i = 0; i < m; ++i) {
                         const double* grow = g + static_cast<std::int64_t>(i) * n;
                         double* darow = da + static_cast<std::int64_t>(i) * k;
                         for (int kk = 0; kk < k; ++kk) {
                           const double* brow = pb + static_cast<std::int64_t>(kk) * n;
                           double acc = 0.0;
                           for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                           darow[kk] += acc;
                         }
                       }
                     }
                     if (Tensor* gb = grad_sink(self.parents[1])) {
                       const double* pa = self.parents[0]->value.data();
                       double* db = gb->data();
                       for (int i = 0; i < m; ++i) {
                         const double* arow = pa + static_cast<std::int64_t>(i) * k;
                         const double* grow = g + static_cast<std::int64_t>(i) * n;
                         for (int kk = 0; kk < k; ++kk) {
                           const double av = arow[kk];
                           if (av == 0.0) continue;
                           double* dbrow = db + static_cast<std::int64_t>(kk) * n;
                           for (int j = 0; j < n; ++j) dbrow[j] += av * grow[j];
                         }
                       }
                     }
                   },
                   "matmul");
}

Value transpose2d(const Value& a) {
  check_rank(a, 2, "transpose2d");
  const int m = a.shape()[0], n = a.shape()[1];
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = a.val().at(i, j);
  return make_node(std::move(out), {a},
                   [m, n](Node& self) {
                     if (Tensor* ga = grad_sink(self.parents[0])) {
                       for (int i = 0; i < m; ++i)
                         for (int j = 0; j < n; ++j) ga->at(i, j) += self.grad.at(j, i);
                     }
                   },
                   "transpose2d");
}

Value add_row_bias(const Value& x, const Value& b) {
  check_rank(x, 2, "add_row_bias");
  check_rank(b, 1, "add_row_bias");
  const int rows = x.shape()[0], cols = x.shape()[1];
  if (b.shape()[0] != cols)
    throw ConfigError("add_row_bias: bias " + b.shape().str() + " vs x " + x.shape().str());
  Tensor out(x.shape());
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out.at(i, j) = x.val().at(i, j) + b.val().at(j);
  return make_node(std::move(out), {x, b},
                   [rows, cols](Node& self) {
                     accumulate(self.parents[0], self.grad);
                     if (Tensor* gb = grad_sink(self.parents[1])) {
                       for (int i = 0; i < rows; ++i)
                         for (int j = 0; j < cols; ++j) gb->at(j) += self.grad.at(i, j);
                     }
                   },
                   "add_row_bias");
}

Value linear(const Value& x, const Value& w, const Value& b) {
  return add_row_bias(matmul(x, w), b);
}

Value softmax_rows(const Value& x) {
  check_rank(x, 2, "softmax_rows");
  const int rows = x.shape()[0], cols = x.shape()[1];
  Tensor out(x.shape());
  for (int i = 0; i < rows; ++i) {
    double mx = -1e308;
    for (int j = 0; j < cols; ++j) mx = std::max(mx, x.val().at(i, j));
    double z = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double e = std::exp(x.val().at(i, j) - mx);
      out.at(i, j) = e;
      z += e;
    }
    for (int j = 0; j < cols; ++j) out.at(i, j) /= z;
  }
  return make_node(std::move(out), {x},
                   [rows, cols](Node& self) {
                     if (Tensor* gx = grad_sink(self.parents[0])) {
                       for (int i = 0; i < rows; ++i) {
                         double dot = 0.0;
                         for (int j = 0; j < cols; ++j) dot += self.grad.at(i, j) * self.value.at(i, j);
                         for (int j = 0; j < cols; ++j)
                           gx->at(i, j) += self.value.at(i, j) * (self.grad.at(i, j) - dot);
                       }
                     }
                   },
                   "softmax_rows");
}

Value slice_cols(const Value& x, int c0, int len) {
  check_rank(x, 2, "slice_cols");
  const int rows = x.shape()[0], cols = x.shape()[1];
  if (c0 < 0 || len <= 0 || c0 + len > cols)
    throw ConfigError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c0 + len) +
                      ") of " + x.shape().str());
  Tensor out({rows, len});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < len; ++j) out.at(i, j) = x.val().at(i, c0 + j);
  return make_node(std::move(out), {x},
                   [rows, len, c0](Node& self) {
                     if (Tensor* gx = grad_sink(self.parents[0])) {
                       for (int i = 0; i < rows; ++i)
                         for (int j = 0; j < len; ++j) gx->at(i, c0 + j) += self.grad.at(i, j);
                     }
                   },
                   "slice_cols");
}

Value concat_cols(const std::vector<Value>& xs) {
  if (xs.empty()) throw ConfigError("concat_cols: empty input");
  const int rows = xs[0].shape()[0];
  int cols = 0;
  for (const Value& v : xs) {
    check_rank(v, 2, "concat_cols");
    if (v.shape()[0] != rows) throw ConfigError("concat_cols: row mismatch");
    cols += v.shape()[1];
  }
  Tensor out({rows, cols});
  int off = 0;
  for (const Value& v : xs) {
    const int c = v.shape()[1];
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < c; ++j) out.at(i, off + j) = v.val().at(i, j);
    off += c;
  }
  std::vector<Value> parents = xs;
  return make_node(std::move(out), std::move(parents),
                   [rows](Node& self) {
                     int off = 0;
                     for (auto& p : self.parents) {
                       const int c = p->value.shape()[1];
                       if (Tensor* gp = grad_sink(p)) {
                         for (int i = 0; i < rows; ++i)
                           for (int j = 0; j < c; ++j) gp->at(i, j) += self.grad.at(i, off + j);
                       }
                       off += c;
                     }
                   },
                   "concat_cols");
}

Value concat_rows(const std::vector<Value>& xs) {
  if (xs.empty()) throw ConfigError("concat_rows: empty input");
  const int cols = xs[0].shape()[1];
  int rows = 0;
  for (const Value& v : xs) {
    check_rank(v, 2, "concat_rows");
    if (v.shape()[1] != cols) throw ConfigError("concat_rows: col mismatch");
    rows += v.shape()[0];
  }
  Tensor out({rows, cols});
  int off = 0;
  for (const Value& v : xs) {
    const int r = v.shape()[0];
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < cols; ++j) out.at(off + i, j) = v.val().at(i, j);
    off += r;
  }
  std::vector<Value> parents = xs;
  return make_node(std::move(out), std::move(parents),
                   [cols](Node& self) {
                     int off = 0;
                     for (auto& p : self.parents) {
                       const int r = p->value.shape()[0];
                       if (Tensor* gp = grad_sink(p)) {
                         for (int i = 0; i < r; ++i)
                           for (int j = 0; j < cols; ++j) gp->at(i, j) += self.grad.at(off + i, j);
                       }
                       off += r;
                     }
                   },
                   "concat_rows");
}

Value conv2d(const Value& x, const Value& w, const Value& b) {
  check_rank(x, 3, "conv2d");
  check_rank(w, 4, "conv2d");
  check_rank(b, 1, "conv2d");
  const int ci = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  const int co = w.shape()[0], k = w.shape()[2];
  if (w.shape()[1] != ci)
    throw ConfigError("conv2d: weight expects " + std::to_string(w.shape()[1]) + " input channels, got " +
                      std::to_string(ci));
  if (w.shape()[3] != k || k % 2 == 0) throw ConfigError("conv2d: kernel must be square and odd");
  if (b.shape()[0] != co) throw ConfigError("conv2d: bias size mismatch");
  const int pad = k / 2;

  Tensor out({co, h, wd});
  {
    const double* px = x.val().data();
    const double* pw = w.val().data();
    double* py = out.data();
    for (int oc = 0; oc < co; ++oc) {
      const double bv = b.val().at(oc);
      double* plane = py + static_cast<std::int64_t>(oc) * h * wd;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * wd; ++i) plane[i] = bv;
      for (int ic = 0; ic < ci; ++ic) {
        const double* xplane = px + static_cast<std::int64_t>(ic) * h * wd;
        for (int kh = 0; kh < k; ++kh) {
          for (int kw = 0; kw < k; ++kw) {
            const double wv = pw[((static_cast<std::int64_t>(oc) * ci + ic) * k + kh) * k + kw];
            if (wv == 0.0) continue;
            const int dh = kh - pad, dw = kw - pad;
            const int h0 = std::max(0, -dh), h1 = std::min(h, h - dh);
            const int w0 = std::max(0, -dw), w1 = std::min(wd, wd - dw);
            for (int r = h0; r < h1; ++r) {
              double* orow = plane + static_cast<std::int64_t>(r) * wd;
              const double* xrow = xplane + static_cast<std::int64_t>(r + dh) * wd + dw;
              for (int c = w0; c < w1; ++c) orow[c] += wv * xrow[c];
            }
          }
        }
      }
    }
  }
  return make_node(
      std::move(out), {x, w, b},
      [ci, co, h, wd, k, pad](Node& self) {
        const double* g = self.grad.data();
        const double* px = self.parents[0]->value.data();
        const double* pw = self.parents[1]->value.data();
        Tensor* gx = grad_sink(self.parents[0]);
        Tensor* gw = grad_sink(self.parents[1]);
        Tensor* gb = grad_sink(self.parents[2]);
        if (gb) {
          for (int oc = 0; oc < co; ++oc) {
            const double* plane = g + static_cast<std::int64_t>(oc) * h * wd;
            double acc = 0.0;
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * wd; ++i) acc += plane[i];
            gb->at(oc) += acc;
          }
        }
        for (int oc = 0; oc < co; ++oc) {
          const double* gplane = g + static_cast<std::int64_t>(oc) * h * wd;
          for (int ic = 0; ic < ci; ++ic) {
            const double* xplane = px + static_cast<std::int64_t>(ic) * h * wd;
            double* gxplane = gx ? gx->data() + static_cast<std::int64_t>(ic) * h * wd : nullptr;
            for (int kh = 0; kh < k; ++kh) {
              for (int kw = 0; kw < k; ++kw) {
                const std::int64_t widx = ((static_cast<std::int64_t>(oc) * ci + ic) * k + kh) * k + kw;
                const double wv = pw[widx];
                const int dh = kh - pad, dw = kw - pad;
                const int h0 = std::max(0, -dh), h1 = std::min(h, h - dh);
                const int w0 = std::max(0, -dw), w1 = std::min(wd, wd - dw);
                double wacc = 0.0;
                for (int r = h0; r < h1; ++r) {
                  const double* grow = gplane + static_cast<std::int64_t>(r) * wd;
                  const double* xrow = xplane + static_cast<std::int64_t>(r + dh) * wd + dw;
                  double* gxrow = gxplane ? gxplane + static_cast<std::int64_t>(r + dh) * wd + dw : nullptr;
                  for (int c = w0; c < w1; ++c) {
                    if (gw) wacc += grow[c] * xrow[c];
                    if (gxrow) gxrow[c] += grow[c] * wv;
                  }
                }
                if (gw) gw->data()[widx] += wacc;
              }
            }
          }
        }
      },
      "conv2d");
}

namespace {

// Shared layer-norm core: normalizes `groups` groups of `n` elements, where
// element e of group g sits at flat index g * g_stride + e * e_stride.
struct LnAux {
  Tensor xhat;
  std::vector<double> istd;
};

Value layer_norm_impl(const Value& x, const Value& gain, const Value& bias, double eps, int groups,
                      int n, std::int64_t g_stride, std::int64_t e_stride, const char* name) {
  if (gain.shape()[0] != n || bias.shape()[0] != n)
    throw ConfigError(std::string(name) + ": gain/bias must have " + std::to_string(n) + " entries");
  Tensor out(x.shape());
  auto aux = std::make_shared<LnAux>();
  aux->xhat = Tensor(x.shape());
  aux->istd.resize(static_cast<std::size_t>(groups));
  const double* px = x.val().data();
  const double* pg = gain.val().data();
  const double* pb = bias.val().data();
  double* py = out.data();
  double* ph = aux->xhat.data();
  for (int g = 0; g < groups; ++g) {
    const std::int64_t base = g * g_stride;
    double mu = 0.0;
    for (int e = 0; e < n; ++e) mu += px[base + e * e_stride];
    mu /= n;
    double var = 0.0;
    for (int e = 0; e < n; ++e) {
      const double d = px[base + e * e_stride] - mu;
      var += d * d;
    }
    var /= n;
    const double istd = 1.0 / std::sqrt(var + eps);
    aux->istd[static_cast<std::size_t>(g)] = istd;
    for (int e = 0; e < n; ++e) {
      const std::int64_t idx = base + e * e_stride;
      const double xh = (px[idx] - mu) * istd;
      ph[idx] = xh;
      py[idx] = pg[e] * xh + pb[e];
    }
  }
  return make_node(
      std::move(out), {x, gain, bias},
      [aux, groups, n, g_stride, e_stride](Node& self) {
        const double* g_up = self.grad.data();
        const double* ph = aux->xhat.data();
        const double* pg = self.parents[1]->value.data();
        Tensor* gx = grad_sink(self.parents[0]);
        Tensor* gg = grad_sink(self.parents[1]);
        Tensor* gb = grad_sink(self.parents[2]);
        for (int grp = 0; grp < groups; ++grp) {
          const std::int64_t base = grp * g_stride;
          const double istd = aux->istd[static_cast<std::size_t>(grp)];
          double s1 = 0.0, s2 = 0.0;
          for (int e = 0; e < n; ++e) {
            const std::int64_t idx = base + e * e_stride;
            const double gd = g_up[idx] * pg[e];
            s1 += gd;
            s2 += gd * ph[idx];
          }
          s1 /= n;
          s2 /= n;
          for (int e = 0; e < n; ++e) {
            const std::int64_t idx = base + e * e_stride;
            if (gx) gx->data()[idx] += (g_up[idx] * pg[e] - s1 - ph[idx] * s2) * istd;
            if (gg) gg->at(e) += g_up[idx] * ph[idx];
            if (gb) gb->at(e) += g_up[idx];
          }
        }
      },
      name);
}

}  // namespace

Value layer_norm_chan(const Value& x, const Value& gain, const Value& bias, double eps) {
  check_rank(x, 3, "layer_norm_chan");
  const int c = x.shape()[0];
  const std::int64_t hw = static_cast<std::int64_t>(x.shape()[1]) * x.shape()[2];
  // group = one spatial position, element stride = plane size
  return layer_norm_impl(x, gain, bias, eps, static_cast<int>(hw), c, 1, hw, "layer_norm_chan");
}

Value layer_norm_rows(const Value& x, const Value& gain, const Value& bias, double eps) {
  check_rank(x, 2, "layer_norm_rows");
  const int rows = x.shape()[0], cols = x.shape()[1];
  return layer_norm_impl(x, gain, bias, eps, rows, cols, cols, 1, "layer_norm_rows");
}

Value upsample_nearest2x(const Value& x) {
  check_rank(x, 3, "upsample_nearest2x");
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  Tensor out({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < 2 * h; ++i)
      for (int j = 0; j < 2 * w; ++j) out.at(ch, i, j) = x.val().at(ch, i / 2, j / 2);
  return make_node(std::move(out), {x},
                   [c, h, w](Node& self) {
                     if (Tensor* gx = grad_sink(self.parents[0])) {
                       for (int ch = 0; ch < c; ++ch)
                         for (int i = 0; i < 2 * h; ++i)
                           for (int j = 0; j < 2 * w; ++j)
                             gx->at(ch, i / 2, j / 2) += self.grad.at(ch, i, j);
                     }
                   },
                   "upsample_nearest2x");
}

int axial_offset(int channel, int channels, int shift_size, int dilation) {
  const int group_size = (channels + shift_size - 1) / shift_size;  // ceil(C/s)
  return channel / group_size - (shift_size / 2) * dilation;
}

Value axial_shift_gather(const Value& x, int shift_size, int dilation, Axis axis) {
  check_rank(x, 3, "axial_shift_gather");
  if (shift_size < 1 || shift_size % 2 == 0)
    throw ConfigError("axial_shift_gather: shift size must be odd and positive, got " +
                      std::to_string(shift_size));
  if (dilation < 1) throw ConfigError("axial_shift_gather: dilation must be positive");
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  Tensor out(x.shape());
  for (int ch = 0; ch < c; ++ch) {
    const int off = axial_offset(ch, c, shift_size, dilation);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const int si = axis == Axis::Vertical ? i + off : i;
        const int sj = axis == Axis::Horizontal ? j + off : j;
        out.at(ch, i, j) =
            (si >= 0 && si < h && sj >= 0 && sj < w) ? x.val().at(ch, si, sj) : 0.0;
      }
    }
  }
  return make_node(std::move(out), {x},
                   [c, h, w, shift_size, dilation, axis](Node& self) {
                     if (Tensor* gx = grad_sink(self.parents[0])) {
                       for (int ch = 0; ch < c; ++ch) {
                         const int off = axial_offset(ch, c, shift_size, dilation);
                         for (int i = 0; i < h; ++i) {
                           for (int j = 0; j < w; ++j) {
                             const int si = axis == Axis::Vertical ? i + off : i;
                             const int sj = axis == Axis::Horizontal ? j + off : j;
                             if (si >= 0 && si < h && sj >= 0 && sj < w)
                               gx->at(ch, si, sj) += self.grad.at(ch, i, j);
                           }
                         }
                       }
                     }
                   },
                   "axial_shift_gather");
}

Value permute_elements(const Value& x, const Shape& out_shape,
                       std::shared_ptr<const std::vector<std::int64_t>> index) {
  if (out_shape.numel() != x.val().numel() ||
      static_cast<std::int64_t>(index->size()) != x.val().numel())
    throw ConfigError("permute_elements: index/shape size mismatch");
  Tensor out(out_shape);
  const double* px = x.val().data();
  double* py = out.data();
  const auto& idx = *index;
  for (std::size_t i = 0; i < idx.size(); ++i) py[i] = px[idx[i]];
  return make_node(std::move(out), {x},
                   [index](Node& self) {
                     if (Tensor* gx = grad_sink(self.parents[0])) {
                       const auto& idx = *index;
                       const double* g = self.grad.data();
                       double* dst = gx->data();
                       for (std::size_t i = 0; i < idx.size(); ++i) dst[idx[i]] += g[i];
                     }
                   },
                   "permute_elements");
}

Value reshape(const Value& x, const Shape& s) {
  if (s.numel() != x.val().numel())
    throw ConfigError("reshape: " + x.shape().str() + " -> " + s.str());
  Tensor out(s);
  std::memcpy(out.data(), x.val().data(), sizeof(double) * static_cast<std::size_t>(out.numel()));
  return make_node(std::move(out), {x},
                   [](Node& self) {
                     if (Tensor* gx = grad_sink(self.parents[0])) {
                       const double* g = self.grad.data();
                       double* dst = gx->data();
                       const std::int64_t n = self.grad.numel();
                       for (std::int64_t i = 0; i < n; ++i) dst[i] += g[i];
                     }
                   },
                   "reshape");
}

Value detach(const Value& x) { return make_constant(x.val()); }

Value mask_pool(const Value& x,
                std::shared_ptr<const std::vector<std::vector<std::int64_t>>> cells) {
  check_rank(x, 3, "mask_pool");
  const int c = x.shape()[0];
  const std::int64_t hw = static_cast<std::int64_t>(x.shape()[1]) * x.shape()[2];
  const int rows = static_cast<int>(cells->size());
  if (rows == 0) throw ConfigError("mask_pool: empty mask set");
  Tensor out({rows, c});
  const double* px = x.val().data();
  for (int r = 0; r < rows; ++r) {
    const auto& cs = (*cells)[static_cast<std::size_t>(r)];
    if (cs.empty()) throw ConfigError("mask_pool: mask " + std::to_string(r) + " has no active cell");
    const double inv = 1.0 / static_cast<double>(cs.size());
    for (int ch = 0; ch < c; ++ch) {
      const double* plane = px + ch * hw;
      double acc = 0.0;
      for (std::int64_t p : cs) acc += plane[p];
      out.at(r, ch) = acc * inv;
    }
  }
  return make_node(std::move(out), {x},
                   [cells, c, hw](Node& self) {
                     if (Tensor* gx = grad_sink(self.parents[0])) {
                       const int rows = static_cast<int>(cells->size());
                       for (int r = 0; r < rows; ++r) {
                         const auto& cs = (*cells)[static_cast<std::size_t>(r)];
                         const double inv = 1.0 / static_cast<double>(cs.size());
                         for (int ch = 0; ch < c; ++ch) {
                           const double g = self.grad.at(r, ch) * inv;
                           double* plane = gx->data() + ch * hw;
                           for (std::int64_t p : cs) plane[p] += g;
                         }
                       }
                     }
                   },
                   "mask_pool");
}

Value scatter_rows(const Value& rows, std::shared_ptr<const std::vector<int>> placement, int h,
                   int w) {
  check_rank(rows, 2, "scatter_rows");
  const int r = rows.shape()[0], c = rows.shape()[1];
  if (static_cast<int>(placement->size()) != h * w)
    throw ConfigError("scatter_rows: placement size mismatch");
  Tensor out({c, h, w});
  const auto& pl = *placement;
  for (int p = 0; p < h * w; ++p) {
    const int row = pl[static_cast<std::size_t>(p)];
    if (row < 0 || row >= r) throw ConfigError("scatter_rows: placement row out of range");
    for (int ch = 0; ch < c; ++ch)
      out.data()[static_cast<std::int64_t>(ch) * h * w + p] = rows.val().at(row, ch);
  }
  return make_node(std::move(out), {rows},
                   [placement, c, h, w](Node& self) {
                     if (Tensor* gr = grad_sink(self.parents[0])) {
                       const auto& pl = *placement;
                       for (int p = 0; p < h * w; ++p) {
                         const int row = pl[static_cast<std::size_t>(p)];
                         for (int ch = 0; ch < c; ++ch)
                           gr->at(row, ch) +=
                               self.grad.data()[static_cast<std::int64_t>(ch) * h * w + p];
                       }
                     }
                   },
                   "scatter_rows");
}

Value focal_loss_sum(const Value& logits, std::shared_ptr<const Tensor> targets, double alpha,
                     double gamma) {
  if (targets->shape() != logits.shape())
    throw ConfigError("focal_loss_sum: target shape mismatch");
  const std::int64_t n = logits.val().numel();
  const double* z = logits.val().data();
  const double* t = targets->data();
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double p = sigmoid_fwd(z[i]);
    if (t[i] > 0.5) {
      const double logp = -softplus_fwd(-z[i]);
      loss += -alpha * std::pow(1.0 - p, gamma) * logp;
    } else {
      const double log1mp = -softplus_fwd(z[i]);
      loss += -(1.0 - alpha) * std::pow(p, gamma) * log1mp;
    }
  }
  return make_node(Tensor::scalar(loss), {logits},
                   [targets, alpha, gamma](Node& self) {
                     if (Tensor* gx = grad_sink(self.parents[0])) {
                       const double g = self.grad[0];
                       const double* z = self.parents[0]->value.data();
                       const double* t = targets->data();
                       double* dst = gx->data();
                       const std::int64_t n = gx->numel();
                       for (std::int64_t i = 0; i < n; ++i) {
                         const double p = sigmoid_fwd(z[i]);
                         double d;
                         if (t[i] > 0.5) {
                           const double logp = -softplus_fwd(-z[i]);
                           d = alpha * std::pow(1.0 - p, gamma) * (gamma * p * logp - (1.0 - p));
                         } else {
                           const double log1mp = -softplus_fwd(z[i]);
                           d = (1.0 - alpha) * std::pow(p, gamma) * (p - gamma * (1.0 - p) * log1mp);
                         }
                         dst[i] += g * d;
                       }
                     }
                   },
                   "focal_loss_sum");
}

Value bce_logits_sum(const Value& logits, std::shared_ptr<const Tensor> targets,
                     std::shared_ptr<const Tensor> mask) {
  if (targets->shape() != logits.shape() || mask->shape() != logits.shape())
    throw ConfigError("bce_logits_sum: shape mismatch");
  const std::int64_t n = logits.val().numel();
  const double* z = logits.val().data();
  const double* y = targets->data();
  const double* m = mask->data();
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (m[i] == 0.0) continue;
    loss += m[i] * (softplus_fwd(z[i]) - y[i] * z[i]);
  }
  return make_node(Tensor::scalar(loss), {logits},
                   [targets, mask](Node& self) {
                     if (Tensor* gx = grad_sink(self.parents[0])) {
                       const double g = self.grad[0];
                       const double* z = self.parents[0]->value.data();
                       const double* y = targets->data();
                       const double* m = mask->data();
                       double* dst = gx->data();
                       const std::int64_t n = gx->numel();
                       for (std::int64_t i = 0; i < n; ++i) {
                         if (m[i] == 0.0) continue;
                         dst[i] += g * m[i] * (sigmoid_fwd(z[i]) - y[i]);
                       }
                     }
                   },
                   "bce_logits_sum");
}

Value iou_loss_sum(const Value& ltrb, std::shared_ptr<const Tensor> target_ltrb,
                   std::shared_ptr<const Tensor> pos_mask) {
  check_rank(ltrb, 3, "iou_loss_sum");
  if (ltrb.shape()[0] != 4) throw ConfigError("iou_loss_sum: expected 4 distance channels");
  if (target_ltrb->shape() != ltrb.shape()) throw ConfigError("iou_loss_sum: target shape mismatch");
  const int h = ltrb.shape()[1], w = ltrb.shape()[2];
  if (pos_mask->shape() != Shape{h, w}) throw ConfigError("iou_loss_sum: mask shape mismatch");
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;

  const double* d = ltrb.val().data();
  const double* t = target_ltrb->data();
  const double* m = pos_mask->data();
  double loss = 0.0;
  for (std::int64_t p = 0; p < hw; ++p) {
    if (m[p] == 0.0) continue;
    const double l = d[p], tt = d[hw + p], r = d[2 * hw + p], bb = d[3 * hw + p];
    const double lt = t[p], ttt = t[hw + p], rt = t[2 * hw + p], bt = t[3 * hw + p];
    const double wi = std::min(l, lt) + std::min(r, rt);
    const double hi = std::min(tt, ttt) + std::min(bb, bt);
    const double inter = wi * hi;
    const double uni = (l + r) * (tt + bb) + (lt + rt) * (ttt + bt) - inter;
    loss += std::log(uni) - std::log(inter);
  }
  return make_node(
      Tensor::scalar(loss), {ltrb},
      [target_ltrb, pos_mask, hw](Node& self) {
        if (Tensor* gx = grad_sink(self.parents[0])) {
          const double g = self.grad[0];
          const double* d = self.parents[0]->value.data();
          const double* t = target_ltrb->data();
          const double* m = pos_mask->data();
          double* dst = gx->data();
          for (std::int64_t p = 0; p < hw; ++p) {
            if (m[p] == 0.0) continue;
            const double l = d[p], tt = d[hw + p], r = d[2 * hw + p], bb = d[3 * hw + p];
            const double lt = t[p], ttt = t[hw + p], rt = t[2 * hw + p], bt = t[3 * hw + p];
            const double wi = std::min(l, lt) + std::min(r, rt);
            const double hi = std::min(tt, ttt) + std::min(bb, bt);
            const double inter = wi * hi;
            const double uni = (l + r) * (tt + bb) + (lt + rt) * (ttt + bt) - inter;
            // dL/dx = dU/dx / U - dI/dx / I, with dU/dx = dA/dx - dI/dx
            const double dIdl = (l <= lt ? hi : 0.0), dIdr = (r <= rt ? hi : 0.0);
            const double dIdt = (tt <= ttt ? wi : 0.0), dIdb = (bb <= bt ? wi : 0.0);
            const double dAdl = tt + bb, dAdt = l + r;
            dst[p] += g * ((dAdl - dIdl) / uni - dIdl / inter);
            dst[hw + p] += g * ((dAdt - dIdt) / uni - dIdt / inter);
            dst[2 * hw + p] += g * ((dAdl - dIdr) / uni - dIdr / inter);
            dst[3 * hw + p] += g * ((dAdt - dIdb) / uni - dIdb / inter);
          }
        }
      },
      "iou_loss_sum");
}

Tensor softened_distribution(const Tensor& logits, double tau) {
  if (tau <= 0.0) throw ConfigError("softened_distribution: tau must be positive");
  Tensor out(logits.shape());
  const std::int64_t n = logits.numel();
  double mx = -1e308;
  for (std::int64_t i = 0; i < n; ++i) mx = std::max(mx, logits[i] / tau);
  double z = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double e = std::exp(logits[i] / tau - mx);
    out[i] = e;
    z += e;
  }
  for (std::int64_t i = 0; i < n; ++i) out[i] /= z;
  return out;
}

Value kl_divergence_to(const Value& student_logits, std::shared_ptr<const Tensor> teacher_probs,
                       double tau, bool tau_squared) {
  if (tau <= 0.0) throw ConfigError("kl_divergence_to: tau must be positive");
  if (teacher_probs->numel() != student_logits.val().numel())
    throw ConfigError("kl_divergence_to: size mismatch");
  const double factor = tau_squared ? tau * tau : 1.0;
  auto q = std::make_shared<Tensor>(softened_distribution(student_logits.val(), tau));
  const std::int64_t n = q->numel();
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double p = (*teacher_probs)[i];
    if (p <= 0.0) continue;
    loss += p * (std::log(p) - std::log(std::max((*q)[i], 1e-300)));
  }
  loss *= factor;
  return make_node(Tensor::scalar(loss), {student_logits},
                   [teacher_probs, q, tau, factor](Node& self) {
                     if (Tensor* gx = grad_sink(self.parents[0])) {
                       const double g = self.grad[0] * factor / tau;
                       double* dst = gx->data();
                       const std::int64_t n = gx->numel();
                       for (std::int64_t i = 0; i < n; ++i)
                         dst[i] += g * ((*q)[i] - (*teacher_probs)[i]);
                     }
                   },
                   "kl_divergence_to");
}

}  // namespace faultdet
