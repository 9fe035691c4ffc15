#pragma once

// Dense 64-bit tensors with a reverse-mode tape over the small, fixed set of
// operations the group recommender needs. Tensors are cheap handles onto a
// shared node; copying a Tensor aliases the same storage.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <cblas.h>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mavenrec {

namespace detail {

// Every batch builds and frees multi-megabyte activations. glibc would hand
// those to mmap and trim them on free, page-faulting them back in each step;
// keeping them on the heap roughly halves training time.
inline bool keep_large_blocks_on_heap() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return true;
}

inline const bool allocator_tuned = keep_large_blocks_on_heap();

}  // namespace detail

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Propagates this node's grad into its inputs' grads.
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data) : node_(std::make_shared<detail::Node>()) {
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static Tensor zeros(Shape shape) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor full(Shape shape, double value) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor vector(std::vector<double> values) {
    Shape s{values.size()};
    return Tensor(std::move(s), std::move(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t rows() const { return dim() == 2 ? node_->shape[0] : 1; }
  std::size_t cols() const { return dim() == 2 ? node_->shape[1] : numel(); }

  std::span<const double> data() const { return node_->data; }
  // Direct writes bypass the tape; intended for leaves (optimizer updates, loading).
  std::span<double> mutable_data() { return node_->data; }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    if (!is_leaf()) throw std::logic_error("requires_grad can only be toggled on leaf tensors");
    node_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return !node_->backward_fn; }

  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  /// Copy of the values with no grad slot and no graph history.
  Tensor detach() const { return Tensor(node_->shape, node_->data); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Builds an op result. Graph edges are only recorded when grad mode is on and
// some input participates in differentiation.
inline Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward_fn) {
  Tensor out(std::move(shape), std::move(data));
  if (!grad_mode()) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  n.inputs.reserve(inputs.size());
  for (auto& t : inputs) n.inputs.push_back(t.node());
  n.backward_fn = std::move(backward_fn);
  return out;
}

// Grad buffer of input i, or nullptr when that input is not differentiated.
inline double* input_grad(Node& n, std::size_t i) {
  auto& in = *n.inputs[i];
  if (!in.requires_grad) return nullptr;
  in.ensure_grad();
  return in.grad.data();
}

inline void require_2d(const Tensor& t, const char* op) {
  if (t.dim() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Parameters

enum class Init { zeros, ones, xavier_uniform };

/// Xavier bound sqrt(6 / (fan_in + fan_out)). Matrices are [out x in]; a vector
/// of length n counts as fan_in = n, fan_out = 1.
inline double xavier_bound(const Shape& shape) {
  double fan_in = 0, fan_out = 0;
  if (shape.size() == 1) {
    fan_in = static_cast<double>(shape[0]);
    fan_out = 1;
  } else {
    fan_out = static_cast<double>(shape[0]);
    fan_in = static_cast<double>(shape_numel(shape) / shape[0]);
  }
  return std::sqrt(6.0 / (fan_in + fan_out));
}

inline Tensor param(const Shape& shape, Init init, std::uint64_t seed) {
  if (shape.empty()) throw ShapeError("param: empty shape");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("param: zero dimension in " + shape_str(shape));
  }
  std::vector<double> data(shape_numel(shape), 0.0);
  switch (init) {
    case Init::zeros:
      break;
    case Init::ones:
      std::fill(data.begin(), data.end(), 1.0);
      break;
    case Init::xavier_uniform: {
      const double a = xavier_bound(shape);
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> dist(-a, a);
      for (auto& v : data) v = dist(rng);
      break;
    }
  }
  Tensor t(shape, std::move(data));
  t.set_requires_grad(true);
  return t;
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = detail::input_grad(n, k)) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
      }
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] - B[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    if (auto* g = detail::input_grad(n, 0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    }
    if (auto* g = detail::input_grad(n, 1)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

/// Hadamard product.
inline Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "elementwise_mul");
  std::vector<double> out(a.numel());
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    const auto& av = n.inputs[0]->data;
    const auto& bv = n.inputs[1]->data;
    if (auto* g = detail::input_grad(n, 0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (auto* g = detail::input_grad(n, 1)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

inline Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.numel());
  const double* X = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = X[i] * c;
  return detail::make_result(x.shape(), std::move(out), {x}, [c](detail::Node& n) {
    if (auto* g = detail::input_grad(n, 0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += c * n.grad[i];
    }
  });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  std::vector<double> out(x.numel());
  const double* X = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = X[i] + c;
  return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& n) {
    if (auto* g = detail::input_grad(n, 0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    }
  });
}

inline Tensor square(const Tensor& x) {
  std::vector<double> out(x.numel());
  const double* X = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = X[i] * X[i];
  return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& n) {
    const auto& xv = n.inputs[0]->data;
    if (auto* g = detail::input_grad(n, 0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += 2.0 * xv[i] * n.grad[i];
    }
  });
}

/// max(0, x); the subgradient at exactly 0 is 0.
inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const double* X = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = X[i] > 0.0 ? X[i] : 0.0;
  return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& n) {
    const auto& xv = n.inputs[0]->data;
    if (auto* g = detail::input_grad(n, 0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        if (xv[i] > 0.0) g[i] += n.grad[i];
      }
    }
  });
}

/// X[r, :] + bias for every row r. The only broadcast the tape supports.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t cols = x.cols();
  if (bias.numel() != cols) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not fit " + shape_str(x.shape()));
  }
  std::vector<double> out(x.numel());
  const double* X = x.data().data();
  const double* Bv = bias.data().data();
  for (std::size_t r = 0; r < x.numel() / cols; ++r)
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = X[r * cols + j] + Bv[j];
  return detail::make_result(x.shape(), std::move(out), {x, bias}, [cols](detail::Node& n) {
    if (auto* g = detail::input_grad(n, 0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    }
    if (auto* g = detail::input_grad(n, 1)) {
      for (std::size_t r = 0; r < n.grad.size() / cols; ++r)
        for (std::size_t j = 0; j < cols; ++j) g[j] += n.grad[r * cols + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return detail::make_result({1}, {s}, {x}, [](detail::Node& n) {
    if (auto* g = detail::input_grad(n, 0)) {
      const double up = n.grad[0];
      for (std::size_t i = 0; i < n.inputs[0]->data.size(); ++i) g[i] += up;
    }
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return detail::make_result(std::move(shape), std::move(out), {x}, [](detail::Node& n) {
    if (auto* g = detail::input_grad(n, 0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    }
  });
}

inline Tensor transpose(const Tensor& x) {
  detail::require_2d(x, "transpose");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return detail::make_result({c, r}, std::move(out), {x}, [r, c](detail::Node& n) {
    if (auto* g = detail::input_grad(n, 0)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += n.grad[j * r + i];
    }
  });
}

/// Matrices are concatenated along axis 0 (rows) or 1 (columns); 1-D inputs
/// only along axis 0.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const bool vec = parts[0].dim() == 1;
  if (vec && axis != 0) throw ShapeError("concat: vectors only concatenate along axis 0");
  if (!vec) detail::require_2d(parts[0], "concat");
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");

  if (vec || axis == 0) {
    const std::size_t cols = vec ? 1 : parts[0].cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
      if (p.dim() != parts[0].dim() || (!vec && p.cols() != cols)) {
        throw ShapeError("concat: incompatible shapes " + shape_str(parts[0].shape()) + " and " +
                         shape_str(p.shape()));
      }
      total += p.numel();
    }
    std::vector<double> out;
    out.reserve(total);
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
      offsets.push_back(out.size());
      out.insert(out.end(), p.data().begin(), p.data().end());
    }
    Shape shape = vec ? Shape{total} : Shape{total / cols, cols};
    return detail::make_result(std::move(shape), std::move(out), parts, [offsets](detail::Node& n) {
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        if (auto* g = detail::input_grad(n, k)) {
          const std::size_t len = n.inputs[k]->data.size();
          for (std::size_t i = 0; i < len; ++i) g[i] += n.grad[offsets[k] + i];
        }
      }
    });
  }

  const std::size_t rows = parts[0].rows();
  std::vector<std::size_t> col_off;
  std::size_t total_cols = 0;
  for (const auto& p : parts) {
    detail::require_2d(p, "concat");
    if (p.rows() != rows) {
      throw ShapeError("concat: row mismatch " + shape_str(parts[0].shape()) + " and " + shape_str(p.shape()));
    }
    col_off.push_back(total_cols);
    total_cols += p.cols();
  }
  std::vector<double> out(rows * total_cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto c = parts[k].cols();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) out[r * total_cols + col_off[k] + j] = parts[k][r * c + j];
  }
  return detail::make_result({rows, total_cols}, std::move(out), parts,
                             [col_off, rows, total_cols](detail::Node& n) {
                               for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                                 auto* g = detail::input_grad(n, k);
                                 if (!g) continue;
                                 const auto c = n.inputs[k]->shape[1];
                                 for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t j = 0; j < c; ++j)
                                     g[r * c + j] += n.grad[r * total_cols + col_off[k] + j];
                               }
                             });
}

/// Contiguous slice of a matrix along axis 0 (rows) or 1 (columns).
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
  detail::require_2d(x, "slice");
  const std::size_t r = x.rows(), c = x.cols();
  const std::size_t extent = axis == 0 ? r : c;
  if (axis > 1 || len == 0 || start + len > extent) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") out of bounds for " + shape_str(x.shape()));
  }
  const std::size_t orow = axis == 0 ? len : r;
  const std::size_t ocol = axis == 0 ? c : len;
  const std::size_t r0 = axis == 0 ? start : 0;
  const std::size_t c0 = axis == 0 ? 0 : start;
  std::vector<double> out(orow * ocol);
  for (std::size_t i = 0; i < orow; ++i)
    for (std::size_t j = 0; j < ocol; ++j) out[i * ocol + j] = x[(r0 + i) * c + c0 + j];
  return detail::make_result({orow, ocol}, std::move(out), {x}, [=](detail::Node& n) {
    if (auto* g = detail::input_grad(n, 0)) {
      for (std::size_t i = 0; i < orow; ++i)
        for (std::size_t j = 0; j < ocol; ++j) g[(r0 + i) * c + c0 + j] += n.grad[i * ocol + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace detail {

/// C [m x n] += op(A) . op(B) with row-major operands, where op transposes
/// when the matching flag is set and k is the shared inner dimension.
inline void gemm_acc(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* A,
                     const double* B, double* C) {
  if (m == 0 || n == 0 || k == 0) return;
  // One BLAS thread: results then depend only on the operands, and callers
  // parallelize at a coarser grain.
  static const bool single_threaded = (openblas_set_num_threads(1), true);
  (void)single_threaded;
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<blasint>(m), static_cast<blasint>(n), static_cast<blasint>(k), 1.0, A,
              static_cast<blasint>(trans_a ? m : k), B, static_cast<blasint>(trans_b ? k : n), 1.0, C,
              static_cast<blasint>(n));
}

}  // namespace detail

/// a [m x k] . b [k x n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  detail::gemm_acc(false, false, m, n, k, a.data().data(), b.data().data(), out.data());
  return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& node) {
    const double* G = node.grad.data();
    // dA = G . B^T, dB = A^T . G
    if (auto* ga = detail::input_grad(node, 0)) detail::gemm_acc(false, true, m, k, n, G, node.inputs[1]->data.data(), ga);
    if (auto* gb = detail::input_grad(node, 1)) detail::gemm_acc(true, false, k, n, m, node.inputs[0]->data.data(), G, gb);
  });
}

/// a [m x k] . b^T for b [n x k], without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: cannot multiply " + shape_str(a.shape()) + " by the transpose of " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> out(m * n, 0.0);
  detail::gemm_acc(false, true, m, n, k, a.data().data(), b.data().data(), out.data());
  return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& node) {
    const double* G = node.grad.data();
    // dA = G . B, dB = G^T . A
    if (auto* ga = detail::input_grad(node, 0)) detail::gemm_acc(false, false, m, k, n, G, node.inputs[1]->data.data(), ga);
    if (auto* gb = detail::input_grad(node, 1)) detail::gemm_acc(true, false, n, k, m, G, node.inputs[0]->data.data(), gb);
  });
}

/// X . W^T + b for X [rows x in], W [out x in], b [out].
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_bias(matmul_nt(x, weight), bias);
}

/// Gathers rows of a matrix. Backward scatter-adds into the selected rows only.
inline Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids) {
  detail::require_2d(table, "embedding_lookup");
  if (ids.empty()) throw ShapeError("embedding_lookup: no ids");
  const std::size_t n = table.rows(), d = table.cols();
  std::vector<double> out(ids.size() * d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= n) {
      throw std::out_of_range("embedding_lookup: row " + std::to_string(ids[r]) + " outside table of " +
                              std::to_string(n) + " rows");
    }
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[r] * d), d, out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  return detail::make_result({ids.size(), d}, std::move(out), {table}, [rows = std::move(rows), d](detail::Node& node) {
    if (auto* g = detail::input_grad(node, 0)) {
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t j = 0; j < d; ++j) g[rows[r] * d + j] += node.grad[r * d + j];
    }
  });
}

/// Softmax restricted to unmasked entries; masked entries are exactly 0.
/// A matrix is normalized row by row with the mask laid out row-major, a
/// vector as a single row. Every row needs at least one unmasked entry.
inline Tensor masked_softmax(const Tensor& logits, const std::vector<bool>& mask) {
  if (mask.size() != logits.numel()) {
    throw ShapeError("masked_softmax: mask of " + std::to_string(mask.size()) + " entries for logits " +
                     shape_str(logits.shape()));
  }
  const std::size_t rows = logits.rows(), cols = logits.cols();
  std::vector<double> out(logits.numel(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < cols; ++j) {
      if (mask[r * cols + j]) {
        mx = std::max(mx, logits[r * cols + j]);
        any = true;
      }
    }
    if (!any) throw std::invalid_argument("masked_softmax: every entry of a row is masked");
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      if (mask[r * cols + j]) {
        out[r * cols + j] = std::exp(logits[r * cols + j] - mx);
        z += out[r * cols + j];
      }
    }
    for (std::size_t j = 0; j < cols; ++j) {
      if (mask[r * cols + j]) out[r * cols + j] /= z;
    }
  }
  return detail::make_result(logits.shape(), std::move(out), {logits}, [rows, cols](detail::Node& n) {
    auto* g = detail::input_grad(n, 0);
    if (!g) return;
    const auto& y = n.data;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += n.grad[r * cols + j] * y[r * cols + j];
      for (std::size_t j = 0; j < cols; ++j) {
        const auto i = r * cols + j;
        if (y[i] != 0.0) g[i] += y[i] * (n.grad[i] - dot);
      }
    }
  });
}

/// Weighted row sums. With weights [m] and x [m x d] returns sum_j w_j x_j as
/// a [d] vector. With weights [b x m] and x [(b*m) x d], row i of the [b x d]
/// result combines rows i*m .. i*m+m-1 of x.
inline Tensor weighted_sum(const Tensor& weights, const Tensor& x) {
  detail::require_2d(x, "weighted_sum");
  const std::size_t b = weights.rows(), m = weights.cols(), d = x.cols();
  if (x.rows() != b * m) {
    throw ShapeError("weighted_sum: weights " + shape_str(weights.shape()) + " do not fit rows of " +
                     shape_str(x.shape()));
  }
  std::vector<double> out(b * d, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double w = weights[i * m + j];
      for (std::size_t c = 0; c < d; ++c) out[i * d + c] += w * x[(i * m + j) * d + c];
    }
  Shape shape = weights.dim() == 1 ? Shape{d} : Shape{b, d};
  return detail::make_result(std::move(shape), std::move(out), {weights, x}, [b, m, d](detail::Node& n) {
    const auto& wv = n.inputs[0]->data;
    const auto& xv = n.inputs[1]->data;
    if (auto* gw = detail::input_grad(n, 0)) {
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < d; ++c) s += n.grad[i * d + c] * xv[(i * m + j) * d + c];
          gw[i * m + j] += s;
        }
    }
    if (auto* gx = detail::input_grad(n, 1)) {
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double w = wv[i * m + j];
          for (std::size_t c = 0; c < d; ++c) gx[(i * m + j) * d + c] += w * n.grad[i * d + c];
        }
    }
  });
}

/// Row-wise layer normalization with learned gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  detail::require_2d(x, "layer_norm");
  const std::size_t rows = x.rows(), d = x.cols();
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm: gain/bias do not match width of " + shape_str(x.shape()));
  }
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x[r * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x[r * d + j] - mu) * (x[r * d + j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (x[r * d + j] - mu) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * gain[j] + bias[j];
    }
  }
  return detail::make_result(x.shape(), std::move(out), {x, gain, bias},
                             [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& n) {
                               const auto& gv = n.inputs[1]->data;
                               const double* G = n.grad.data();
                               if (auto* gx = detail::input_grad(n, 0)) {
                                 for (std::size_t r = 0; r < rows; ++r) {
                                   double s1 = 0.0, s2 = 0.0;
                                   for (std::size_t j = 0; j < d; ++j) {
                                     const double dy = G[r * d + j] * gv[j];
                                     s1 += dy;
                                     s2 += dy * xhat[r * d + j];
                                   }
                                   const double invd = 1.0 / static_cast<double>(d);
                                   for (std::size_t j = 0; j < d; ++j) {
                                     const double dy = G[r * d + j] * gv[j];
                                     gx[r * d + j] += inv_std[r] * (dy - invd * s1 - xhat[r * d + j] * invd * s2);
                                   }
                                 }
                               }
                               if (auto* gg = detail::input_grad(n, 1)) {
                                 for (std::size_t i = 0; i < rows * d; ++i) gg[i % d] += G[i] * xhat[i];
                               }
                               if (auto* gb = detail::input_grad(n, 2)) {
                                 for (std::size_t i = 0; i < rows * d; ++i) gb[i % d] += G[i];
                               }
                             });
}

// ---------------------------------------------------------------------------
// Reverse pass

/// Accumulates d(root)/d(leaf) into every reachable leaf that requires grad.
/// Intermediate grads are reset first, so calling twice on the same graph
/// doubles leaf grads and nothing else.
inline void backward(const Tensor& root) {
  if (root.numel() != 1) throw ShapeError("backward: root must be a scalar, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (n->backward_fn) n->grad.assign(n->data.size(), 0.0);
  }
  auto* r = root.node().get();
  r->ensure_grad();
  r->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

}  // namespace mavenrec
