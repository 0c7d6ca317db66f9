#include "dynanav/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace dynanav {

long long shape_numel(const Shape& s) {
  long long n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  long long n = shape_numel(shape);
  if (n != static_cast<long long>(data.size()))
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> d(shape_numel(shape));
  for (auto& v : d) v = rng.normal() * stddev;
  return Tensor(shape, std::move(d), requires_grad);
}

double Tensor::item() const {
  if (!is_scalar()) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
  return impl_->data[0];
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty())
    throw TapeError("gradient not populated; call Tape::backward first");
  return impl_->grad;
}

// ---- Tape -----------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
thread_local FlopCounter* g_active_flops = nullptr;
}  // namespace

Tape::Tape() {
  if (g_active_tape) throw TapeError("a tape is already active on this thread");
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = nullptr; }

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw TapeError("backward called twice on the same tape");
  if (!loss.is_scalar()) throw TapeError("backward requires a scalar loss");
  if (!loss.requires_grad())
    throw TapeError("loss is detached from the tape (no requires_grad input)");
  consumed_ = true;
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

FlopCounter::FlopCounter() {
  prev_ = g_active_flops;
  g_active_flops = this;
}

FlopCounter::~FlopCounter() { g_active_flops = prev_; }

void FlopCounter::add(long long n) {
  if (g_active_flops) g_active_flops->count_ += n;
}

// ---- op helpers -----------------------------------------------------------

namespace {

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.vec())
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite result");
}

bool tracing(std::initializer_list<const Tensor*> ins) {
  if (!Tape::active()) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

bool grad_ready(const ImplPtr& out) { return !out->grad.empty(); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

// outer/axis/inner decomposition for axis-wise ops
struct AxisSplit {
  long long outer, n, inner;
};

AxisSplit split_axis(const Shape& s, int axis) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit r{1, s[axis], 1};
  for (int i = 0; i < axis; ++i) r.outer *= s[i];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  long long n = a.size();
  std::vector<double> d(n);
  for (long long i = 0; i < n; ++i) d[i] = a[i] + b[i];
  FlopCounter::add(n);
  Tensor out(a.shape(), std::move(d));
  check_finite(out, "add");
  if (tracing({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([ai, bi, oi, n] {
      if (!grad_ready(oi)) return;
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (long long i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (long long i = 0; i < n; ++i) bi->grad[i] += oi->grad[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  long long n = a.size();
  std::vector<double> d(n);
  for (long long i = 0; i < n; ++i) d[i] = a[i] - b[i];
  FlopCounter::add(n);
  Tensor out(a.shape(), std::move(d));
  check_finite(out, "sub");
  if (tracing({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([ai, bi, oi, n] {
      if (!grad_ready(oi)) return;
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (long long i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (long long i = 0; i < n; ++i) bi->grad[i] -= oi->grad[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  long long n = a.size();
  std::vector<double> d(n);
  for (long long i = 0; i < n; ++i) d[i] = a[i] * b[i];
  FlopCounter::add(n);
  Tensor out(a.shape(), std::move(d));
  check_finite(out, "mul");
  if (tracing({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([ai, bi, oi, n] {
      if (!grad_ready(oi)) return;
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (long long i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (long long i = 0; i < n; ++i) bi->grad[i] += oi->grad[i] * ai->data[i];
      }
    });
  }
  return out;
}

Tensor mul_scalar(const Tensor& a, double s) {
  long long n = a.size();
  std::vector<double> d(n);
  for (long long i = 0; i < n; ++i) d[i] = a[i] * s;
  FlopCounter::add(n);
  Tensor out(a.shape(), std::move(d));
  check_finite(out, "mul_scalar");
  if (tracing({&a})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    Tape::active()->record([ai, oi, n, s] {
      if (!grad_ready(oi)) return;
      ai->ensure_grad();
      for (long long i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * s;
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double s) {
  long long n = a.size();
  std::vector<double> d(n);
  for (long long i = 0; i < n; ++i) d[i] = a[i] + s;
  FlopCounter::add(n);
  Tensor out(a.shape(), std::move(d));
  check_finite(out, "add_scalar");
  if (tracing({&a})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    Tape::active()->record([ai, oi, n] {
      if (!grad_ready(oi)) return;
      ai->ensure_grad();
      for (long long i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  if (x.shape().size() != 2 || b.shape().size() != 1 || b.shape()[0] != x.shape()[1])
    throw ShapeError("add_rowvec: want (m,n) and (n), got " + shape_str(x.shape()) +
                     " and " + shape_str(b.shape()));
  long long m = x.shape()[0], n = x.shape()[1];
  std::vector<double> d(m * n);
  for (long long i = 0; i < m; ++i)
    for (long long j = 0; j < n; ++j) d[i * n + j] = x[i * n + j] + b[j];
  FlopCounter::add(m * n);
  Tensor out(x.shape(), std::move(d));
  check_finite(out, "add_rowvec");
  if (tracing({&x, &b})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([xi, bi, oi, m, n] {
      if (!grad_ready(oi)) return;
      if (xi->requires_grad) {
        xi->ensure_grad();
        for (long long i = 0; i < m * n; ++i) xi->grad[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (long long i = 0; i < m; ++i)
          for (long long j = 0; j < n; ++j) bi->grad[j] += oi->grad[i * n + j];
      }
    });
  }
  return out;
}

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  long long m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> d(m * n, 0.0);
  const auto& A = a.vec();
  const auto& B = b.vec();
  for (long long i = 0; i < m; ++i)
    for (long long kk = 0; kk < k; ++kk) {
      double av = A[i * k + kk];
      const double* brow = B.data() + kk * n;
      double* orow = d.data() + i * n;
      for (long long j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  FlopCounter::add(2 * m * k * n);
  Tensor out({static_cast<int>(m), static_cast<int>(n)}, std::move(d));
  check_finite(out, "matmul");
  if (tracing({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([ai, bi, oi, m, k, n] {
      if (!grad_ready(oi)) return;
      if (ai->requires_grad) {
        ai->ensure_grad();  // dA = dC * B^T
        for (long long i = 0; i < m; ++i)
          for (long long j = 0; j < n; ++j) {
            double g = oi->grad[i * n + j];
            for (long long kk = 0; kk < k; ++kk)
              ai->grad[i * k + kk] += g * bi->data[kk * n + j];
          }
      }
      if (bi->requires_grad) {
        bi->ensure_grad();  // dB = A^T * dC
        for (long long kk = 0; kk < k; ++kk)
          for (long long i = 0; i < m; ++i) {
            double av = ai->data[i * k + kk];
            for (long long j = 0; j < n; ++j)
              bi->grad[kk * n + j] += av * oi->grad[i * n + j];
          }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.shape().size() != 2) throw ShapeError("transpose: want 2-D, got " + shape_str(a.shape()));
  long long m = a.shape()[0], n = a.shape()[1];
  std::vector<double> d(m * n);
  for (long long i = 0; i < m; ++i)
    for (long long j = 0; j < n; ++j) d[j * m + i] = a[i * n + j];
  Tensor out({static_cast<int>(n), static_cast<int>(m)}, std::move(d));
  if (tracing({&a})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    Tape::active()->record([ai, oi, m, n] {
      if (!grad_ready(oi)) return;
      ai->ensure_grad();
      for (long long i = 0; i < m; ++i)
        for (long long j = 0; j < n; ++j) ai->grad[i * n + j] += oi->grad[j * m + i];
    });
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  if (x.shape().size() != 3 || w.shape().size() != 4 || b.shape().size() != 1)
    throw ShapeError("conv2d: want x (H,W,Cin), w (Kh,Kw,Cin,Cout), b (Cout)");
  int H = x.shape()[0], W = x.shape()[1], Cin = x.shape()[2];
  int Kh = w.shape()[0], Kw = w.shape()[1], Cout = w.shape()[3];
  if (w.shape()[2] != Cin || b.shape()[0] != Cout)
    throw ShapeError("conv2d: channel mismatch");
  if (stride <= 0) throw ShapeError("conv2d: stride must be positive");
  int Ho = (H + 2 * pad - Kh) / stride + 1;
  int Wo = (W + 2 * pad - Kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: empty output");

  std::vector<double> d(static_cast<std::size_t>(Ho) * Wo * Cout, 0.0);
  const auto& X = x.vec();
  const auto& Wt = w.vec();
  for (int ho = 0; ho < Ho; ++ho)
    for (int wo = 0; wo < Wo; ++wo) {
      double* orow = d.data() + (static_cast<std::size_t>(ho) * Wo + wo) * Cout;
      for (int kh = 0; kh < Kh; ++kh) {
        int h = ho * stride - pad + kh;
        if (h < 0 || h >= H) continue;
        for (int kw = 0; kw < Kw; ++kw) {
          int ww = wo * stride - pad + kw;
          if (ww < 0 || ww >= W) continue;
          const double* xrow = X.data() + (static_cast<std::size_t>(h) * W + ww) * Cin;
          const double* wrow = Wt.data() + (static_cast<std::size_t>(kh) * Kw + kw) * Cin * Cout;
          for (int ci = 0; ci < Cin; ++ci) {
            double xv = xrow[ci];
            const double* wk = wrow + static_cast<std::size_t>(ci) * Cout;
            for (int co = 0; co < Cout; ++co) orow[co] += xv * wk[co];
          }
        }
      }
      for (int co = 0; co < Cout; ++co) orow[co] += b[co];
    }
  FlopCounter::add(2LL * Kh * Kw * Cin * Cout * Ho * Wo + static_cast<long long>(Ho) * Wo * Cout);
  Tensor out({Ho, Wo, Cout}, std::move(d));
  check_finite(out, "conv2d");
  if (tracing({&x, &w, &b})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), wi = w.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([xi, wi, bi, oi, H, W, Cin, Kh, Kw, Cout, Ho, Wo, stride, pad] {
      if (!grad_ready(oi)) return;
      if (bi->requires_grad) bi->ensure_grad();
      if (xi->requires_grad) xi->ensure_grad();
      if (wi->requires_grad) wi->ensure_grad();
      for (int ho = 0; ho < Ho; ++ho)
        for (int wo = 0; wo < Wo; ++wo) {
          const double* grow = oi->grad.data() + (static_cast<std::size_t>(ho) * Wo + wo) * Cout;
          if (bi->requires_grad)
            for (int co = 0; co < Cout; ++co) bi->grad[co] += grow[co];
          for (int kh = 0; kh < Kh; ++kh) {
            int h = ho * stride - pad + kh;
            if (h < 0 || h >= H) continue;
            for (int kw = 0; kw < Kw; ++kw) {
              int ww = wo * stride - pad + kw;
              if (ww < 0 || ww >= W) continue;
              std::size_t xoff = (static_cast<std::size_t>(h) * W + ww) * Cin;
              std::size_t woff = (static_cast<std::size_t>(kh) * Kw + kw) * Cin * Cout;
              for (int ci = 0; ci < Cin; ++ci) {
                double xv = xi->data[xoff + ci];
                const double* wk = wi->data.data() + woff + static_cast<std::size_t>(ci) * Cout;
                double gx = 0.0;
                for (int co = 0; co < Cout; ++co) {
                  double g = grow[co];
                  if (wi->requires_grad)
                    wi->grad[woff + static_cast<std::size_t>(ci) * Cout + co] += xv * g;
                  gx += wk[co] * g;
                }
                if (xi->requires_grad) xi->grad[xoff + ci] += gx;
              }
            }
          }
        }
    });
  }
  return out;
}

// ---- nonlinearities -------------------------------------------------------

Tensor relu(const Tensor& x) {
  long long n = x.size();
  std::vector<double> d(n);
  for (long long i = 0; i < n; ++i) d[i] = x[i] > 0.0 ? x[i] : 0.0;
  FlopCounter::add(n);
  Tensor out(x.shape(), std::move(d));
  if (tracing({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, n] {
      if (!grad_ready(oi)) return;
      xi->ensure_grad();
      for (long long i = 0; i < n; ++i)
        if (xi->data[i] > 0.0) xi->grad[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  AxisSplit sp = split_axis(x.shape(), axis);
  long long total = x.size();
  std::vector<double> d(total);
  const auto& X = x.vec();
  for (long long o = 0; o < sp.outer; ++o)
    for (long long in = 0; in < sp.inner; ++in) {
      long long base = o * sp.n * sp.inner + in;
      double mx = -1e300;
      for (long long k = 0; k < sp.n; ++k) mx = std::max(mx, X[base + k * sp.inner]);
      double sum = 0.0;
      for (long long k = 0; k < sp.n; ++k) {
        double e = std::exp(X[base + k * sp.inner] - mx);
        d[base + k * sp.inner] = e;
        sum += e;
      }
      for (long long k = 0; k < sp.n; ++k) d[base + k * sp.inner] /= sum;
    }
  FlopCounter::add(3 * total);
  Tensor out(x.shape(), std::move(d));
  check_finite(out, "softmax");
  if (tracing({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, sp] {
      if (!grad_ready(oi)) return;
      xi->ensure_grad();
      for (long long o = 0; o < sp.outer; ++o)
        for (long long in = 0; in < sp.inner; ++in) {
          long long base = o * sp.n * sp.inner + in;
          double dot = 0.0;
          for (long long k = 0; k < sp.n; ++k)
            dot += oi->grad[base + k * sp.inner] * oi->data[base + k * sp.inner];
          for (long long k = 0; k < sp.n; ++k) {
            long long idx = base + k * sp.inner;
            xi->grad[idx] += oi->data[idx] * (oi->grad[idx] - dot);
          }
        }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.shape().empty()) throw ShapeError("layer_norm: scalar input");
  int n = x.shape().back();
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n})
    throw ShapeError("layer_norm: gain/bias must have shape (" + std::to_string(n) + ")");
  long long rows = x.size() / n;
  std::vector<double> d(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto invs = std::make_shared<std::vector<double>>(rows);
  const auto& X = x.vec();
  for (long long r = 0; r < rows; ++r) {
    const double* row = X.data() + r * n;
    double mu = 0.0;
    for (int i = 0; i < n; ++i) mu += row[i];
    mu /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= n;
    double inv = 1.0 / std::sqrt(var + eps);
    (*invs)[r] = inv;
    for (int i = 0; i < n; ++i) {
      double xh = (row[i] - mu) * inv;
      (*xhat)[r * n + i] = xh;
      d[r * n + i] = xh * gain[i] + bias[i];
    }
  }
  FlopCounter::add(8 * x.size());
  Tensor out(x.shape(), std::move(d));
  check_finite(out, "layer_norm");
  if (tracing({&x, &gain, &bias})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
    Tape::active()->record([xi, gi, bi, oi, xhat, invs, rows, n] {
      if (!grad_ready(oi)) return;
      if (xi->requires_grad) xi->ensure_grad();
      if (gi->requires_grad) gi->ensure_grad();
      if (bi->requires_grad) bi->ensure_grad();
      for (long long r = 0; r < rows; ++r) {
        const double* g = oi->grad.data() + r * n;
        const double* xh = xhat->data() + r * n;
        double inv = (*invs)[r];
        if (gi->requires_grad)
          for (int i = 0; i < n; ++i) gi->grad[i] += g[i] * xh[i];
        if (bi->requires_grad)
          for (int i = 0; i < n; ++i) bi->grad[i] += g[i];
        if (xi->requires_grad) {
          double sum_dxhat = 0.0, sum_dxhat_xh = 0.0;
          for (int i = 0; i < n; ++i) {
            double dxh = g[i] * gi->data[i];
            sum_dxhat += dxh;
            sum_dxhat_xh += dxh * xh[i];
          }
          for (int i = 0; i < n; ++i) {
            double dxh = g[i] * gi->data[i];
            xi->grad[r * n + i] +=
                inv * (dxh - sum_dxhat / n - xh[i] * sum_dxhat_xh / n);
          }
        }
      }
    });
  }
  return out;
}

// ---- shape ops ------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  AxisSplit sp0 = split_axis(s0, axis);
  long long total_n = 0;
  for (const Tensor& p : parts) {
    if (p.shape().size() != s0.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s0.size(); ++i)
      if (static_cast<int>(i) != axis && p.shape()[i] != s0[i])
        throw ShapeError("concat: shape mismatch off the concat axis");
    total_n += p.shape()[axis];
  }
  Shape os = s0;
  os[axis] = static_cast<int>(total_n);
  std::vector<double> d(sp0.outer * total_n * sp0.inner);
  long long off = 0;
  for (const Tensor& p : parts) {
    long long pn = p.shape()[axis];
    const auto& P = p.vec();
    for (long long o = 0; o < sp0.outer; ++o)
      std::copy(P.begin() + o * pn * sp0.inner, P.begin() + (o + 1) * pn * sp0.inner,
                d.begin() + (o * total_n + off) * sp0.inner);
    off += pn;
  }
  Tensor out(os, std::move(d));
  bool any_rg = false;
  if (Tape::active())
    for (const Tensor& p : parts)
      if (p.requires_grad()) any_rg = true;
  if (any_rg) {
    out.set_requires_grad(true);
    std::vector<ImplPtr> impls;
    for (const Tensor& p : parts) impls.push_back(p.impl());
    auto oi = out.impl();
    Tape::active()->record([impls, oi, sp0, total_n] {
      if (!grad_ready(oi)) return;
      long long off = 0;
      for (const auto& pi : impls) {
        long long pn = 1;
        // recover this part's axis length from its size
        pn = static_cast<long long>(pi->data.size()) / (sp0.outer * sp0.inner);
        if (pi->requires_grad) {
          pi->ensure_grad();
          for (long long o = 0; o < sp0.outer; ++o)
            for (long long i = 0; i < pn * sp0.inner; ++i)
              pi->grad[o * pn * sp0.inner + i] +=
                  oi->grad[(o * total_n + off) * sp0.inner + i];
        }
        off += pn;
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
  AxisSplit sp = split_axis(x.shape(), axis);
  if (start < 0 || len <= 0 || start + len > sp.n)
    throw ShapeError("slice: range out of bounds");
  Shape os = x.shape();
  os[axis] = len;
  std::vector<double> d(sp.outer * len * sp.inner);
  const auto& X = x.vec();
  for (long long o = 0; o < sp.outer; ++o)
    std::copy(X.begin() + (o * sp.n + start) * sp.inner,
              X.begin() + (o * sp.n + start + len) * sp.inner,
              d.begin() + o * len * sp.inner);
  Tensor out(os, std::move(d));
  if (tracing({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, sp, start, len] {
      if (!grad_ready(oi)) return;
      xi->ensure_grad();
      for (long long o = 0; o < sp.outer; ++o)
        for (long long i = 0; i < len * sp.inner; ++i)
          xi->grad[(o * sp.n + start) * sp.inner + i] += oi->grad[o * len * sp.inner + i];
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor out(shape, x.vec());
  if (tracing({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    long long n = x.size();
    Tape::active()->record([xi, oi, n] {
      if (!grad_ready(oi)) return;
      xi->ensure_grad();
      for (long long i = 0; i < n; ++i) xi->grad[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  if (x.shape().size() != 2) throw ShapeError("gather_rows: want 2-D input");
  int N = x.shape()[0], C = x.shape()[1];
  for (int r : rows)
    if (r < 0 || r >= N) throw ShapeError("gather_rows: index out of range");
  std::vector<double> d(rows.size() * C);
  const auto& X = x.vec();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(X.begin() + static_cast<long long>(rows[i]) * C,
              X.begin() + static_cast<long long>(rows[i] + 1) * C, d.begin() + i * C);
  Tensor out({static_cast<int>(rows.size()), C}, std::move(d));
  if (tracing({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, rows, C] {
      if (!grad_ready(oi)) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (int c = 0; c < C; ++c)
          xi->grad[static_cast<long long>(rows[i]) * C + c] += oi->grad[i * C + c];
    });
  }
  return out;
}

// ---- reductions -----------------------------------------------------------

Tensor sum_all(const Tensor& x) {
  long long n = x.size();
  double s = 0.0;
  for (long long i = 0; i < n; ++i) s += x[i];
  FlopCounter::add(n);
  Tensor out = Tensor::scalar(s);
  check_finite(out, "sum");
  if (tracing({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, n] {
      if (!grad_ready(oi)) return;
      xi->ensure_grad();
      for (long long i = 0; i < n; ++i) xi->grad[i] += oi->grad[0];
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  long long n = x.size();
  double s = 0.0;
  for (long long i = 0; i < n; ++i) s += x[i];
  s /= n;
  FlopCounter::add(n + 1);
  Tensor out = Tensor::scalar(s);
  check_finite(out, "mean");
  if (tracing({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, n] {
      if (!grad_ready(oi)) return;
      xi->ensure_grad();
      double g = oi->grad[0] / n;
      for (long long i = 0; i < n; ++i) xi->grad[i] += g;
    });
  }
  return out;
}

Tensor mean_axis0(const Tensor& x) {
  if (x.shape().size() != 2) throw ShapeError("mean_axis0: want 2-D input");
  long long T = x.shape()[0], C = x.shape()[1];
  std::vector<double> d(C, 0.0);
  for (long long t = 0; t < T; ++t)
    for (long long c = 0; c < C; ++c) d[c] += x[t * C + c];
  for (long long c = 0; c < C; ++c) d[c] /= T;
  FlopCounter::add(T * C + C);
  Tensor out({static_cast<int>(C)}, std::move(d));
  check_finite(out, "mean_axis0");
  if (tracing({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, T, C] {
      if (!grad_ready(oi)) return;
      xi->ensure_grad();
      for (long long t = 0; t < T; ++t)
        for (long long c = 0; c < C; ++c) xi->grad[t * C + c] += oi->grad[c] / T;
    });
  }
  return out;
}

// ---- norms and similarity -------------------------------------------------

Tensor l2_norm(const Tensor& x) {
  long long n = x.size();
  double s = 0.0;
  for (long long i = 0; i < n; ++i) s += x[i] * x[i];
  double nrm = std::sqrt(s);
  FlopCounter::add(2 * n + 1);
  Tensor out = Tensor::scalar(nrm);
  check_finite(out, "l2_norm");
  if (tracing({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, n, nrm] {
      if (!grad_ready(oi)) return;
      if (nrm == 0.0) return;
      xi->ensure_grad();
      double g = oi->grad[0] / nrm;
      for (long long i = 0; i < n; ++i) xi->grad[i] += g * xi->data[i];
    });
  }
  return out;
}

Tensor cosine_sim(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size())
    throw ShapeError("cosine_sim: element count mismatch");
  long long n = a.size();
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (long long i = 0; i < n; ++i) {
    dot += a[i] * b[i];
    na2 += a[i] * a[i];
    nb2 += b[i] * b[i];
  }
  FlopCounter::add(6 * n + 3);
  double na = std::sqrt(na2), nb = std::sqrt(nb2);
  double c = (na == 0.0 || nb == 0.0) ? 0.0 : dot / (na * nb);
  Tensor out = Tensor::scalar(c);
  if (tracing({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([ai, bi, oi, n, na, nb, c] {
      if (!grad_ready(oi)) return;
      if (na == 0.0 || nb == 0.0) return;
      double g = oi->grad[0];
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (long long i = 0; i < n; ++i)
          ai->grad[i] += g * (bi->data[i] / (na * nb) - c * ai->data[i] / (na * na));
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (long long i = 0; i < n; ++i)
          bi->grad[i] += g * (ai->data[i] / (na * nb) - c * bi->data[i] / (nb * nb));
      }
    });
  }
  return out;
}

Tensor log(const Tensor& x) {
  long long n = x.size();
  std::vector<double> d(n);
  for (long long i = 0; i < n; ++i) d[i] = std::log(x[i]);
  FlopCounter::add(n);
  Tensor out(x.shape(), std::move(d));
  check_finite(out, "log");
  if (tracing({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, n] {
      if (!grad_ready(oi)) return;
      xi->ensure_grad();
      for (long long i = 0; i < n; ++i) xi->grad[i] += oi->grad[i] / xi->data[i];
    });
  }
  return out;
}

Tensor exp(const Tensor& x) {
  long long n = x.size();
  std::vector<double> d(n);
  for (long long i = 0; i < n; ++i) d[i] = std::exp(x[i]);
  FlopCounter::add(n);
  Tensor out(x.shape(), std::move(d));
  check_finite(out, "exp");
  if (tracing({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, n] {
      if (!grad_ready(oi)) return;
      xi->ensure_grad();
      for (long long i = 0; i < n; ++i) xi->grad[i] += oi->grad[i] * oi->data[i];
    });
  }
  return out;
}

Tensor row_normalize(const Tensor& x, double eps) {
  if (x.shape().size() != 2) throw ShapeError("row_normalize: want 2-D input");
  long long m = x.shape()[0], k = x.shape()[1];
  std::vector<double> d(m * k);
  auto rinv = std::make_shared<std::vector<double>>(m);
  for (long long i = 0; i < m; ++i) {
    double s = 0.0;
    for (long long j = 0; j < k; ++j) s += x[i * k + j] * x[i * k + j];
    double inv = 1.0 / std::sqrt(s + eps);
    (*rinv)[i] = inv;
    for (long long j = 0; j < k; ++j) d[i * k + j] = x[i * k + j] * inv;
  }
  FlopCounter::add(4 * m * k);
  Tensor out(x.shape(), std::move(d));
  check_finite(out, "row_normalize");
  if (tracing({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, rinv, m, k] {
      if (!grad_ready(oi)) return;
      xi->ensure_grad();
      for (long long i = 0; i < m; ++i) {
        double inv = (*rinv)[i];
        double dot = 0.0;
        for (long long j = 0; j < k; ++j) dot += oi->grad[i * k + j] * xi->data[i * k + j];
        for (long long j = 0; j < k; ++j)
          xi->grad[i * k + j] +=
              inv * oi->grad[i * k + j] - inv * inv * inv * dot * xi->data[i * k + j];
      }
    });
  }
  return out;
}

// ---- grad check -----------------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& fn,
                           const Tensor& input, double eps) {
  Tensor x(input.shape(), input.vec(), true);
  std::vector<double> tape_grad;
  {
    Tape tape;
    Tensor loss = fn(x);
    if (!loss.is_scalar()) throw ShapeError("grad_check: fn must return a scalar");
    if (loss.requires_grad()) {
      tape.backward(loss);
      tape_grad = x.impl()->grad;
    } else {
      tape_grad.assign(x.size(), 0.0);  // fn ignores its input
    }
  }
  GradCheckReport rep;
  Tensor probe(input.shape(), input.vec(), false);
  for (long long i = 0; i < probe.size(); ++i) {
    double orig = probe.vec()[i];
    probe.vec()[i] = orig + eps;
    double fp = fn(probe).item();
    probe.vec()[i] = orig - eps;
    double fm = fn(probe).item();
    probe.vec()[i] = orig;
    double fd = (fp - fm) / (2.0 * eps);
    double g = tape_grad[i];
    double abs_err = std::abs(fd - g);
    double rel = abs_err / std::max(1e-6, std::abs(fd) + std::abs(g));
    rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
    rep.max_rel_err = std::max(rep.max_rel_err, rel);
  }
  return rep;
}

}  // namespace dynanav
