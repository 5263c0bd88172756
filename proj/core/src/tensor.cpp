#include "smoa/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

namespace smoa {

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backprop;

  std::size_t size() const { return values.size(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
  }
};

}  // namespace detail

using detail::TensorImpl;

namespace {

std::atomic<std::uint64_t> g_next_node_id{1};
thread_local int g_no_grad_depth = 0;

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<double> values) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
  return impl;
}

[[noreturn]] void throw_shape(const std::string& op, const Shape& a, const Shape& b) {
  throw ShapeError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// Records the graph edge if recording is on and any input requires grad.
Tensor make_op(Shape shape, std::vector<double> values,
               std::initializer_list<Tensor> inputs,
               std::function<void(TensorImpl&)> backprop) {
  auto impl = make_impl(std::move(shape), std::move(values));
  if (grad_enabled()) {
    bool needs = false;
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
    if (needs) {
      impl->requires_grad = true;
      for (const Tensor& t : inputs) impl->parents.push_back(t.impl_ptr());
      impl->backprop = std::move(backprop);
    }
  }
  return Tensor(std::move(impl));
}

}  // namespace

bool grad_enabled() { return g_no_grad_depth == 0; }
NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ")";
  return os.str();
}

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

// --- Tensor --------------------------------------------------------------

Tensor::Tensor() = default;

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_size(shape);
  auto impl = make_impl(std::move(shape), std::vector<double>(n, 0.0));
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_size(shape);
  auto impl = make_impl(std::move(shape), std::vector<double>(n, value));
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size())
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  auto impl = make_impl(std::move(shape), std::move(values));
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::row(std::vector<double> values, bool requires_grad) {
  Shape shape{values.size()};
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::rand_trunc_normal(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::size_t n = shape_size(shape);
  std::vector<double> v(n);
  for (double& x : v) x = rng.trunc_normal(stddev);
  return from(std::move(shape), std::move(v), requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::size() const { return impl_->values.size(); }
std::size_t Tensor::ndim() const { return impl_->shape.size(); }
std::size_t Tensor::dim(std::size_t axis) const { return impl_->shape.at(axis); }

std::span<const double> Tensor::values() const { return impl_->values; }
std::span<double> Tensor::mutable_values() { return impl_->values; }

double Tensor::value() const {
  if (size() != 1)
    throw ContractError("Tensor::value: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return impl_->values[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != ndim())
    throw ShapeError("Tensor::at: rank mismatch for shape " + shape_str(shape()));
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) {
    off = off * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->values[off];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool rg) {
  if (!is_leaf()) throw ContractError("set_requires_grad: only valid on leaf tensors");
  impl_->requires_grad = rg;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad())
    throw ContractError("Tensor::grad: no gradient accumulated for node " + std::to_string(node_id()));
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

std::uint64_t Tensor::node_id() const { return impl_->id; }
bool Tensor::is_leaf() const { return impl_->parents.empty(); }

Tensor Tensor::detach() const {
  auto impl = make_impl(impl_->shape, impl_->values);
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  auto impl = make_impl(impl_->shape, impl_->values);
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

// --- backward ------------------------------------------------------------

void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));

  // Post-order DFS over parent edges: leaves first, loss last. Walking the
  // order in reverse guarantees every consumer has pushed its contribution
  // before a node propagates.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  struct Frame {
    TensorImpl* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  TensorImpl* root = loss.impl();
  if (visited.insert(root).second) stack.push_back({root, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorImpl* p = f.node->parents[f.next_parent++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  // Interior nodes get a fresh gradient buffer per call; leaves keep
  // accumulating, so repeated backward calls add the same contribution
  // again.
  for (TensorImpl* node : order)
    if (!node->parents.empty()) node->grad.assign(node->values.size(), 0.0);

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backprop && node->requires_grad && !node->grad.empty()) node->backprop(*node);
  }
}

// --- broadcasting --------------------------------------------------------

namespace {

// Aligns shapes from the trailing axis; a dimension may match or be 1 (or
// be absent in the lower-rank operand).
bool broadcast_shape(const Shape& a, const Shape& b, Shape& out) {
  std::size_t rank = std::max(a.size(), b.size());
  out.assign(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) return false;
    out[rank - 1 - i] = std::max(da, db);
  }
  return true;
}

// Row-major strides of `shape` padded to `rank`, with stride 0 where the
// dimension is broadcast.
std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& out) {
  std::size_t rank = out.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t acc = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    std::size_t axis = shape.size() - 1 - i;
    std::size_t out_axis = rank - 1 - i;
    strides[out_axis] = (shape[axis] == 1 && out[out_axis] != 1) ? 0 : acc;
    acc *= shape[axis];
  }
  return strides;
}

// Walks every element of the broadcast result, handing the callback the
// linear offsets into the result and both operands.
template <typename F>
void for_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                   const std::vector<std::size_t>& sb, F&& f) {
  std::size_t n = shape_size(out);
  std::size_t rank = out.size();
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, oa, ob);
    for (std::size_t axis = rank; axis-- > 0;) {
      ++idx[axis];
      oa += sa[axis];
      ob += sb[axis];
      if (idx[axis] < out[axis]) break;
      oa -= sa[axis] * out[axis];
      ob -= sb[axis] * out[axis];
      idx[axis] = 0;
    }
  }
}

enum class BinKind { Add, Sub, Mul };

Tensor binary_op(const char* name, BinKind kind, const Tensor& a, const Tensor& b) {
  Shape out_shape;
  if (!broadcast_shape(a.shape(), b.shape(), out_shape)) throw_shape(name, a.shape(), b.shape());
  auto sa = broadcast_strides(a.shape(), out_shape);
  auto sb = broadcast_strides(b.shape(), out_shape);

  const double* av = a.values().data();
  const double* bv = b.values().data();
  std::vector<double> out(shape_size(out_shape));
  switch (kind) {
    case BinKind::Add:
      for_broadcast(out_shape, sa, sb, [&](std::size_t i, std::size_t oa, std::size_t ob) {
        out[i] = av[oa] + bv[ob];
      });
      break;
    case BinKind::Sub:
      for_broadcast(out_shape, sa, sb, [&](std::size_t i, std::size_t oa, std::size_t ob) {
        out[i] = av[oa] - bv[ob];
      });
      break;
    case BinKind::Mul:
      for_broadcast(out_shape, sa, sb, [&](std::size_t i, std::size_t oa, std::size_t ob) {
        out[i] = av[oa] * bv[ob];
      });
      break;
  }

  auto ai = a.impl_ptr();
  auto bi = b.impl_ptr();
  Shape oshape = out_shape;
  return make_op(std::move(out_shape), std::move(out), {a, b},
                 [ai, bi, sa, sb, oshape, kind](TensorImpl& self) {
                   const double* g = self.grad.data();
                   const bool na = ai->requires_grad;
                   const bool nb = bi->requires_grad;
                   if (na) ai->ensure_grad();
                   if (nb) bi->ensure_grad();
                   double* ga = na ? ai->grad.data() : nullptr;
                   double* gb = nb ? bi->grad.data() : nullptr;
                   const double* av = ai->values.data();
                   const double* bv = bi->values.data();
                   for_broadcast(oshape, sa, sb, [&](std::size_t i, std::size_t oa, std::size_t ob) {
                     switch (kind) {
                       case BinKind::Add:
                         if (na) ga[oa] += g[i];
                         if (nb) gb[ob] += g[i];
                         break;
                       case BinKind::Sub:
                         if (na) ga[oa] += g[i];
                         if (nb) gb[ob] -= g[i];
                         break;
                       case BinKind::Mul:
                         if (na) ga[oa] += g[i] * bv[ob];
                         if (nb) gb[ob] += g[i] * av[oa];
                         break;
                     }
                   });
                 });
}

Tensor unary_op(const Tensor& a, std::vector<double> out,
                std::function<double(double x, double y, double g)> dinput) {
  auto ai = a.impl_ptr();
  return make_op(a.shape(), std::move(out), {a}, [ai, dinput](TensorImpl& self) {
    ai->ensure_grad();
    for (std::size_t i = 0; i < self.values.size(); ++i)
      ai->grad[i] += dinput(ai->values[i], self.values[i], self.grad[i]);
  });
}

}  // namespace

// --- elementwise ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary_op("add", BinKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op("sub", BinKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op("mul", BinKind::Mul, a, b); }

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  auto ai = a.impl_ptr();
  return make_op(a.shape(), std::move(out), {a}, [ai, c](TensorImpl& self) {
    ai->ensure_grad();
    for (std::size_t i = 0; i < self.values.size(); ++i) ai->grad[i] += self.grad[i] * c;
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return unary_op(a, std::move(out),
                  [](double x, double, double g) { return x > 0.0 ? g : 0.0; });
}

Tensor gelu(const Tensor& a) {
  static const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = av[i] * 0.5 * (1.0 + std::erf(av[i] * inv_sqrt2));
  return unary_op(a, std::move(out), [](double x, double, double g) {
    const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
    const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
    return g * (cdf + x * pdf);
  });
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
  return unary_op(a, std::move(out), [](double, double y, double g) { return g * y; });
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(av[i]);
  return unary_op(a, std::move(out), [](double x, double, double g) { return g / x; });
}

Tensor sqrt(const Tensor& a) {
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(av[i]);
  return unary_op(a, std::move(out), [](double, double y, double g) { return g * 0.5 / y; });
}

// --- linear algebra ------------------------------------------------------

namespace {

void check_2d(const char* op, const Tensor& t) {
  if (t.ndim() != 2)
    throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d("matmul", a);
  check_2d("matmul", b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw_shape("matmul", a.shape(), b.shape());

  std::vector<double> out(m * n, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = av + i * k;
    double* orow = out.data() + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double s = arow[kk];
      const double* brow = bv + kk * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += s * brow[j];
    }
  }

  auto ai = a.impl_ptr();
  auto bi = b.impl_ptr();
  return make_op({m, n}, std::move(out), {a, b}, [ai, bi, m, k, n](TensorImpl& self) {
    const double* g = self.grad.data();
    if (ai->requires_grad) {
      // dA = dC . B^T
      ai->ensure_grad();
      double* ga = ai->grad.data();
      const double* bv = bi->values.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        double* garow = ga + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double* brow = bv + kk * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          garow[kk] += s;
        }
      }
    }
    if (bi->requires_grad) {
      // dB = A^T . dC
      bi->ensure_grad();
      double* gb = bi->grad.data();
      const double* av = ai->values.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = av + i * k;
        const double* grow = g + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double s = arow[kk];
          double* gbrow = gb + kk * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
        }
      }
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_2d("matmul_nt", a);
  check_2d("matmul_nt", b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) throw_shape("matmul_nt", a.shape(), b.shape());

  std::vector<double> out(m * n);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = av + i * k;
    double* orow = out.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = bv + j * k;
      double s = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
      orow[j] = s;
    }
  }

  auto ai = a.impl_ptr();
  auto bi = b.impl_ptr();
  return make_op({m, n}, std::move(out), {a, b}, [ai, bi, m, k, n](TensorImpl& self) {
    const double* g = self.grad.data();
    if (ai->requires_grad) {
      // dA = dC . B
      ai->ensure_grad();
      double* ga = ai->grad.data();
      const double* bv = bi->values.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        double* garow = ga + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double s = grow[j];
          const double* brow = bv + j * k;
          for (std::size_t kk = 0; kk < k; ++kk) garow[kk] += s * brow[kk];
        }
      }
    }
    if (bi->requires_grad) {
      // dB = dC^T . A
      bi->ensure_grad();
      double* gb = bi->grad.data();
      const double* av = ai->values.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = av + i * k;
        const double* grow = g + i * n;
        for (std::size_t j = 0; j < n; ++j) {
          const double s = grow[j];
          double* gbrow = gb + j * k;
          for (std::size_t kk = 0; kk < k; ++kk) gbrow[kk] += s * arow[kk];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  check_2d("transpose", a);
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  const double* av = a.values().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  auto ai = a.impl_ptr();
  return make_op({n, m}, std::move(out), {a}, [ai, m, n](TensorImpl& self) {
    ai->ensure_grad();
    const double* g = self.grad.data();
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < m; ++i) ai->grad[i * n + j] += g[j * m + i];
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul_nt(x, w), b);
}

// --- shape ---------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  auto ai = a.impl_ptr();
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_op(std::move(shape), std::move(out), {a}, [ai](TensorImpl& self) {
    ai->ensure_grad();
    for (std::size_t i = 0; i < self.values.size(); ++i) ai->grad[i] += self.grad[i];
  });
}

Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
  check_2d("slice_rows", a);
  if (r0 > r1 || r1 > a.dim(0))
    throw ShapeError("slice_rows: range [" + std::to_string(r0) + ", " + std::to_string(r1) +
                     ") out of bounds for " + shape_str(a.shape()));
  const std::size_t cols = a.dim(1);
  std::vector<double> out(a.values().begin() + r0 * cols, a.values().begin() + r1 * cols);
  auto ai = a.impl_ptr();
  return make_op({r1 - r0, cols}, std::move(out), {a}, [ai, r0, cols](TensorImpl& self) {
    ai->ensure_grad();
    const std::size_t n = self.values.size();
    for (std::size_t i = 0; i < n; ++i) ai->grad[r0 * cols + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  check_2d("slice_cols", a);
  if (c0 > c1 || c1 > a.dim(1))
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                     ") out of bounds for " + shape_str(a.shape()));
  const std::size_t rows = a.dim(0), cols = a.dim(1), w = c1 - c0;
  std::vector<double> out(rows * w);
  const double* av = a.values().data();
  for (std::size_t i = 0; i < rows; ++i)
    std::copy(av + i * cols + c0, av + i * cols + c1, out.begin() + i * w);
  auto ai = a.impl_ptr();
  return make_op({rows, w}, std::move(out), {a}, [ai, rows, cols, c0, w](TensorImpl& self) {
    ai->ensure_grad();
    const double* g = self.grad.data();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < w; ++j) ai->grad[i * cols + c0 + j] += g[i * w + j];
  });
}

namespace {

Tensor concat_impl(std::span<const Tensor> parts, bool by_rows) {
  if (parts.empty()) throw ContractError("concat: empty part list");
  for (const Tensor& t : parts) check_2d("concat", t);
  const std::size_t fixed = by_rows ? parts[0].dim(1) : parts[0].dim(0);
  std::size_t total = 0;
  for (const Tensor& t : parts) {
    const std::size_t f = by_rows ? t.dim(1) : t.dim(0);
    if (f != fixed) throw_shape("concat", parts[0].shape(), t.shape());
    total += by_rows ? t.dim(0) : t.dim(1);
  }

  Shape shape = by_rows ? Shape{total, fixed} : Shape{fixed, total};
  std::vector<double> out(shape_size(shape));
  std::vector<std::shared_ptr<TensorImpl>> impls;
  std::vector<std::size_t> widths;
  impls.reserve(parts.size());
  if (by_rows) {
    std::size_t off = 0;
    for (const Tensor& t : parts) {
      std::copy(t.values().begin(), t.values().end(), out.begin() + off);
      off += t.size();
      impls.push_back(t.impl_ptr());
      widths.push_back(t.dim(0));
    }
  } else {
    std::size_t col_off = 0;
    for (const Tensor& t : parts) {
      const std::size_t w = t.dim(1);
      const double* tv = t.values().data();
      for (std::size_t i = 0; i < fixed; ++i)
        std::copy(tv + i * w, tv + (i + 1) * w, out.begin() + i * total + col_off);
      col_off += w;
      impls.push_back(t.impl_ptr());
      widths.push_back(w);
    }
  }

  auto impl = make_impl(std::move(shape), std::move(out));
  if (grad_enabled()) {
    bool needs = false;
    for (const auto& p : impls) needs = needs || p->requires_grad;
    if (needs) {
      impl->requires_grad = true;
      impl->parents = impls;
      impl->backprop = [impls, widths, fixed, total, by_rows](TensorImpl& self) {
        const double* g = self.grad.data();
        if (by_rows) {
          std::size_t off = 0;
          for (std::size_t p = 0; p < impls.size(); ++p) {
            const std::size_t n = widths[p] * fixed;
            if (impls[p]->requires_grad) {
              impls[p]->ensure_grad();
              for (std::size_t i = 0; i < n; ++i) impls[p]->grad[i] += g[off + i];
            }
            off += n;
          }
        } else {
          std::size_t col_off = 0;
          for (std::size_t p = 0; p < impls.size(); ++p) {
            const std::size_t w = widths[p];
            if (impls[p]->requires_grad) {
              impls[p]->ensure_grad();
              for (std::size_t i = 0; i < fixed; ++i)
                for (std::size_t j = 0; j < w; ++j)
                  impls[p]->grad[i * w + j] += g[i * total + col_off + j];
            }
            col_off += w;
          }
        }
      };
    }
  }
  return Tensor(std::move(impl));
}

}  // namespace

Tensor concat_rows(std::span<const Tensor> parts) { return concat_impl(parts, true); }
Tensor concat_cols(std::span<const Tensor> parts) { return concat_impl(parts, false); }

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows) {
  check_2d("gather_rows", a);
  const std::size_t cols = a.dim(1);
  std::vector<double> out(rows.size() * cols);
  const double* av = a.values().data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= a.dim(0))
      throw ShapeError("gather_rows: index " + std::to_string(rows[i]) + " out of bounds for " +
                       shape_str(a.shape()));
    std::copy(av + rows[i] * cols, av + (rows[i] + 1) * cols, out.begin() + i * cols);
  }
  auto ai = a.impl_ptr();
  return make_op({rows.size(), cols}, std::move(out), {a}, [ai, rows, cols](TensorImpl& self) {
    ai->ensure_grad();
    const double* g = self.grad.data();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < cols; ++j) ai->grad[rows[i] * cols + j] += g[i * cols + j];
  });
}

// --- reductions / normalization -----------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  auto ai = a.impl_ptr();
  return make_op({}, {s}, {a}, [ai](TensorImpl& self) {
    ai->ensure_grad();
    const double g = self.grad[0];
    for (double& v : ai->grad) v += g;
  });
}

Tensor mean_rows(const Tensor& a) {
  check_2d("mean_rows", a);
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (rows == 0) throw ContractError("mean_rows: empty row set");
  std::vector<double> out(cols, 0.0);
  const double* av = a.values().data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j] += av[i * cols + j];
  for (double& v : out) v /= static_cast<double>(rows);
  auto ai = a.impl_ptr();
  return make_op({1, cols}, std::move(out), {a}, [ai, rows, cols](TensorImpl& self) {
    ai->ensure_grad();
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) ai->grad[i * cols + j] += self.grad[j] * inv;
  });
}

Tensor softmax(const Tensor& a, int axis) {
  if (a.ndim() == 1) {
    if (axis != 0) throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " +
                                    shape_str(a.shape()));
    Tensor r = softmax(reshape(a, {1, a.size()}), 1);
    return reshape(r, a.shape());
  }
  check_2d("softmax", a);
  if (axis == 0) return transpose(softmax(transpose(a), 1));
  if (axis != 1)
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(a.shape()));

  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<double> out(rows * cols);
  const double* av = a.values().data();
  for (std::size_t i = 0; i < rows; ++i) {
    const double* x = av + i * cols;
    double* y = out.data() + i * cols;
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      s += y[j];
    }
    for (std::size_t j = 0; j < cols; ++j) y[j] /= s;
  }
  auto ai = a.impl_ptr();
  return make_op({rows, cols}, std::move(out), {a}, [ai, rows, cols](TensorImpl& self) {
    ai->ensure_grad();
    const double* y = self.values.data();
    const double* g = self.grad.data();
    for (std::size_t i = 0; i < rows; ++i) {
      const double* yr = y + i * cols;
      const double* gr = g + i * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += yr[j] * gr[j];
      for (std::size_t j = 0; j < cols; ++j) ai->grad[i * cols + j] += yr[j] * (gr[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
  const Shape& xs = x.shape();
  if (xs.empty()) throw ShapeError("layer_norm: scalar input");
  const std::size_t cols = xs.back();
  const std::size_t rows = x.size() / cols;
  if (gamma.size() != cols || beta.size() != cols)
    throw ShapeError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " +
                     shape_str(beta.shape()) + " do not match last axis of " + shape_str(xs));

  std::vector<double> out(x.size());
  std::vector<double> mu(rows), inv_std(rows);
  const double* xv = x.values().data();
  const double* gv = gamma.values().data();
  const double* bv = beta.values().data();
  for (std::size_t i = 0; i < rows; ++i) {
    const double* r = xv + i * cols;
    double m = 0.0;
    for (std::size_t j = 0; j < cols; ++j) m += r[j];
    m /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (r[j] - m) * (r[j] - m);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    mu[i] = m;
    inv_std[i] = is;
    double* o = out.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) o[j] = gv[j] * (r[j] - m) * is + bv[j];
  }

  auto xi = x.impl_ptr();
  auto gi = gamma.impl_ptr();
  auto bi = beta.impl_ptr();
  return make_op(xs, std::move(out), {x, gamma, beta},
                 [xi, gi, bi, rows, cols, mu, inv_std](TensorImpl& self) {
                   const double* g = self.grad.data();
                   const double* xv = xi->values.data();
                   const double* gv = gi->values.data();
                   if (gi->requires_grad) gi->ensure_grad();
                   if (bi->requires_grad) bi->ensure_grad();
                   if (xi->requires_grad) xi->ensure_grad();
                   for (std::size_t i = 0; i < rows; ++i) {
                     const double* xr = xv + i * cols;
                     const double* gr = g + i * cols;
                     const double is = inv_std[i];
                     const double m = mu[i];
                     if (gi->requires_grad || bi->requires_grad) {
                       for (std::size_t j = 0; j < cols; ++j) {
                         const double xhat = (xr[j] - m) * is;
                         if (gi->requires_grad) gi->grad[j] += gr[j] * xhat;
                         if (bi->requires_grad) bi->grad[j] += gr[j];
                       }
                     }
                     if (xi->requires_grad) {
                       double mean_gg = 0.0, mean_ggx = 0.0;
                       for (std::size_t j = 0; j < cols; ++j) {
                         const double gg = gr[j] * gv[j];
                         const double xhat = (xr[j] - m) * is;
                         mean_gg += gg;
                         mean_ggx += gg * xhat;
                       }
                       mean_gg /= static_cast<double>(cols);
                       mean_ggx /= static_cast<double>(cols);
                       for (std::size_t j = 0; j < cols; ++j) {
                         const double gg = gr[j] * gv[j];
                         const double xhat = (xr[j] - m) * is;
                         xi->grad[i * cols + j] += is * (gg - mean_gg - xhat * mean_ggx);
                       }
                     }
                   }
                 });
}

Tensor l2_normalize_rows(const Tensor& a, bool detach_norm) {
  check_2d("l2_normalize_rows", a);
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<double> out(a.size());
  std::vector<double> norms(rows);
  const double* av = a.values().data();
  for (std::size_t i = 0; i < rows; ++i) {
    const double* r = av + i * cols;
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += r[j] * r[j];
    const double nrm = std::sqrt(s);
    if (!(nrm > 0.0))
      throw NumericError("l2_normalize_rows: zero-norm row " + std::to_string(i));
    norms[i] = nrm;
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = r[j] / nrm;
  }
  auto ai = a.impl_ptr();
  return make_op({rows, cols}, std::move(out), {a},
                 [ai, rows, cols, norms, detach_norm](TensorImpl& self) {
                   ai->ensure_grad();
                   const double* y = self.values.data();
                   const double* g = self.grad.data();
                   for (std::size_t i = 0; i < rows; ++i) {
                     const double inv = 1.0 / norms[i];
                     const double* yr = y + i * cols;
                     const double* gr = g + i * cols;
                     if (detach_norm) {
                       for (std::size_t j = 0; j < cols; ++j) ai->grad[i * cols + j] += gr[j] * inv;
                     } else {
                       double dot = 0.0;
                       for (std::size_t j = 0; j < cols; ++j) dot += yr[j] * gr[j];
                       for (std::size_t j = 0; j < cols; ++j)
                         ai->grad[i * cols + j] += (gr[j] - yr[j] * dot) * inv;
                     }
                   }
                 });
}

Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& labels) {
  check_2d("cross_entropy_with_logits", logits);
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (labels.size() != rows)
    throw ShapeError("cross_entropy_with_logits: " + std::to_string(labels.size()) +
                     " labels for logits " + shape_str(logits.shape()));
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= cols)
      throw ContractError("cross_entropy_with_logits: label " + std::to_string(y) + " out of range");

  const double* zv = logits.values().data();
  double loss = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const double* z = zv + i * cols;
    double mx = z[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, z[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(z[j] - mx);
    loss += mx + std::log(s) - z[labels[i]];
  }
  loss /= static_cast<double>(rows);

  auto li = logits.impl_ptr();
  return make_op({}, {loss}, {logits}, [li, labels, rows, cols](TensorImpl& self) {
    li->ensure_grad();
    const double g = self.grad[0] / static_cast<double>(rows);
    const double* zv = li->values.data();
    for (std::size_t i = 0; i < rows; ++i) {
      const double* z = zv + i * cols;
      double mx = z[0];
      for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, z[j]);
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) s += std::exp(z[j] - mx);
      for (std::size_t j = 0; j < cols; ++j) {
        const double p = std::exp(z[j] - mx) / s;
        li->grad[i * cols + j] += g * (p - (static_cast<std::size_t>(labels[i]) == j ? 1.0 : 0.0));
      }
    }
  });
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw ContractError("argmax: empty span");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace smoa
