#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "smoa/rng.hpp"

namespace smoa {

using Shape = std::vector<std::size_t>;

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& s);
std::size_t shape_size(const Shape& s);

// Whether newly created ops record the graph. Off inside a NoGradGuard
// scope (evaluation); the flag is thread-local so evaluation threads can
// disable recording independently.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

namespace detail {
struct TensorImpl;
}

// Dense row-major f64 tensor with reverse-mode autodiff. The graph is
// rebuilt on every forward pass; ops record parents and a backward
// closure only while grad recording is enabled and some input requires
// gradients. Copies are shallow (shared storage), which is what makes
// parameter sharing across blocks observable to the gradient.
class Tensor {
 public:
  Tensor();  // undefined tensor

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor row(std::vector<double> values, bool requires_grad = false);  // 1-D
  static Tensor rand_trunc_normal(Shape shape, Rng& rng, double stddev, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t ndim() const;
  std::size_t dim(std::size_t axis) const;

  std::span<const double> values() const;
  std::span<double> mutable_values();  // leaf in-place mutation (optimizer, tests)
  double value() const;                // single-element tensors
  double at(std::initializer_list<std::size_t> idx) const;

  bool requires_grad() const;
  void set_requires_grad(bool rg);  // leaves only
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  std::uint64_t node_id() const;
  bool is_leaf() const;

  // Value-only copies. detach shares nothing with the graph; clone is a
  // deep copy of a leaf parameter (fresh storage, same flags).
  Tensor detach() const;
  Tensor clone() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<detail::TensorImpl> impl_ptr() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Accumulates gradients from a scalar loss into every tensor that
// requires grad and is reachable from it, in reverse topological order.
// Repeated calls without zeroing accumulate additively.
void backward(const Tensor& loss);

// --- elementwise ---------------------------------------------------------
// Binary ops broadcast a lower-rank operand along leading axes
// (e.g. [R x d] (+) [d]); trailing dimensions must match or be 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // exact erf form
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }

// --- linear algebra ------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);     // [m x k] . [k x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m x k] . [n x k]^T
Tensor transpose(const Tensor& a);                   // 2-D
// x [R x in] . w[out x in]^T + b[out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// --- shape ---------------------------------------------------------------
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1);
Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
// out[i] = a[rows[i]]; duplicate indices accumulate gradient.
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows);

// --- reductions / normalization -----------------------------------------
Tensor sum(const Tensor& a);        // -> scalar
Tensor mean_rows(const Tensor& a);  // [R x d] -> [1 x d]
// Row-wise softmax along `axis` (0 or 1 for 2-D, 0 for 1-D), computed
// with max subtraction.
Tensor softmax(const Tensor& a, int axis);
// Per-row standardization over the last axis, then affine by gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);
// Rows scaled to unit L2 norm. With detach_norm the norm is treated as a
// per-step constant (no gradient through the magnitude).
Tensor l2_normalize_rows(const Tensor& a, bool detach_norm = false);
// Mean over rows of log-softmax negative likelihood; labels index columns.
Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& labels);

// Index of the first maximum (ties resolve to the lowest index).
std::size_t argmax(std::span<const double> v);

}  // namespace smoa
