#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dynanav/rng.hpp"

namespace dynanav {

using Shape = std::vector<int>;

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class TapeError : public std::runtime_error {
 public:
  explicit TapeError(const std::string& msg) : std::runtime_error(msg) {}
};

long long shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until first use

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};
}  // namespace detail

// Dense row-major tensor of doubles. Value-semantic handle; copying a Tensor
// shares the underlying buffer (ops never mutate their inputs).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(const Shape& shape, Rng& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  long long size() const { return static_cast<long long>(impl_->data.size()); }
  bool is_scalar() const { return size() == 1; }
  double item() const;

  const std::vector<double>& vec() const { return impl_->data; }
  std::vector<double>& vec() { return impl_->data; }
  double operator[](long long i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }
  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad() { impl_->grad.clear(); }

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Define-by-run gradient tape. At most one tape may be active per thread;
// ops append backward closures while it is active and an input requires
// gradients. Destroying the tape deactivates it.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Accumulates gradients into every requires_grad leaf reachable from loss.
  // loss must be a scalar produced under this tape; a second call is an error.
  void backward(const Tensor& loss);

  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  std::size_t num_nodes() const { return nodes_.size(); }

  static Tape* active();

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

// Scoped multiply-add counter; ops add their executed FLOPs while one is
// active on the current thread.
class FlopCounter {
 public:
  FlopCounter();
  ~FlopCounter();
  FlopCounter(const FlopCounter&) = delete;
  long long count() const { return count_; }

  static void add(long long n);

 private:
  long long count_ = 0;
  FlopCounter* prev_ = nullptr;
};

// ---- Primitive ops --------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
// (m,n) plus a length-n row vector added to every row.
Tensor add_rowvec(const Tensor& x, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// x: (H,W,Cin), w: (Kh,Kw,Cin,Cout), b: (Cout). Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad);

Tensor relu(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);
// Normalizes over the last axis; gain/bias have that axis' length.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor reshape(const Tensor& x, const Shape& shape);
// x: (N,C); picks the given rows in order.
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor mean_axis0(const Tensor& x);  // (T,C) -> (C)

Tensor l2_norm(const Tensor& x);                      // scalar
Tensor cosine_sim(const Tensor& a, const Tensor& b);  // scalar; 0 on zero norm
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
// Rows of (m,k) scaled to unit L2 norm (with eps inside the sqrt).
Tensor row_normalize(const Tensor& x, double eps = 1e-12);

// ---- Gradient checking ----------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
};

// Compares the tape gradient of fn at input against central finite
// differences with step eps. fn must return a scalar.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& fn,
                           const Tensor& input, double eps);

}  // namespace dynanav
