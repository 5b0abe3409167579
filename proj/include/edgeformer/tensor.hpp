#pragma once

// Reverse-mode autodiff over dense rank-1/rank-2 tensors.
//
// Tensor<T> is a cheap handle (shared_ptr) to a node in a define-by-run
// graph.  Ops record their parents and a backward closure; backward()
// walks the graph once in reverse topological order and accumulates
// gradients with +=, so a tensor used at several sites (shared weights)
// collects the sum of all site gradients.
//
// Kernels are written so results do not depend on how rows are split
// across callers: matmul accumulates over k in a fixed ikj order and
// masked softmax excludes masked keys from max/sum entirely.  That is
// what makes incremental decoding bitwise-equal to prefix recompute.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace edgeformer {

// Configuration / usage errors that should surface as exit code 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

[[noreturn]] inline void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              shape_str(a) + " and " + shape_str(b));
}

// ---- grad mode ----------------------------------------------------------

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool is_grad_enabled() { return detail::grad_mode(); }

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// ---- tensor node --------------------------------------------------------

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct TensorData {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<Tensor<T>> parents;
  std::function<void(TensorData<T>&)> backward;
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Data = detail::TensorData<T>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(Shape shape, T value, bool requires_grad = false) {
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->data.assign(shape_numel(t.d_->shape), value);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (values.size() != shape_numel(shape))
      throw std::invalid_argument("Tensor::from: " + std::to_string(values.size()) +
                                  " values for shape " + shape_str(shape));
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->data = std::move(values);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return d_ != nullptr; }
  Data* node() const { return d_.get(); }

  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t numel() const { return d_->data.size(); }
  std::size_t rows() const { return rank() == 2 ? d_->shape[0] : 1; }
  std::size_t cols() const { return rank() == 2 ? d_->shape[1] : d_->shape[0]; }

  std::vector<T>& data() { return d_->data; }
  const std::vector<T>& data() const { return d_->data; }
  T& at(std::size_t i) { return d_->data[i]; }
  T at(std::size_t i) const { return d_->data[i]; }
  T& at(std::size_t i, std::size_t j) { return d_->data[i * cols() + j]; }
  T at(std::size_t i, std::size_t j) const { return d_->data[i * cols() + j]; }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool v) { d_->requires_grad = v; }

  bool has_grad() const { return !d_->grad.empty(); }
  std::vector<T>& grad() {
    ensure_grad();
    return d_->grad;
  }
  void ensure_grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->data.size(), T(0));
  }
  void zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), T(0));
  }

  // Deep copy of values only; the copy is a fresh leaf.
  Tensor clone() const {
    Tensor t = from(d_->shape, d_->data, d_->requires_grad);
    return t;
  }

  // Same values, same node flags, but cut loose from the graph.
  Tensor detach() const {
    Tensor t = from(d_->shape, d_->data, false);
    return t;
  }

  const char* op() const { return d_->op; }
  const std::vector<Tensor>& parents() const { return d_->parents; }

 private:
  std::shared_ptr<Data> d_;

  template <typename U>
  friend Tensor<U> make_op(const char* op, Shape shape, std::vector<Tensor<U>> parents,
                           std::function<void(detail::TensorData<U>&)> backward);
};

template <typename T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<Tensor<T>> parents,
                  std::function<void(detail::TensorData<T>&)> backward) {
  Tensor<T> out = Tensor<T>::zeros(std::move(shape));
  out.d_->op = op;
  bool track = is_grad_enabled();
  if (track) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    track = any;
  }
  if (track) {
    out.d_->requires_grad = true;
    out.d_->parents = std::move(parents);
    out.d_->backward = std::move(backward);
  }
  return out;
}

// ---- backward -----------------------------------------------------------

// Reverse topological order via iterative post-order DFS, so deep graphs
// (long decodes, many layers) cannot overflow the call stack.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: expected a defined scalar, got " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("null")));
  if (!loss.requires_grad()) return;

  using Node = detail::TensorData<T>;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].node();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

namespace detail {

template <typename T>
std::vector<T>& accum_grad(Tensor<T>& p) {
  p.ensure_grad();
  return p.node()->grad;
}

}  // namespace detail

// ---- ops ----------------------------------------------------------------

// C = A * B, [m x k] [k x n].  ikj order: the k-loop is outermost of the
// inner pair, so each output row is a fixed-order sum independent of the
// other rows and of n-tiling.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
    shape_fail("matmul", a.shape(), b.shape());
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor<T> out = make_op<T>(
      "matmul", {m, n}, {a, b}, [m, k, n](detail::TensorData<T>& node) {
        auto a = node.parents[0];
        auto b = node.parents[1];
        const auto& go = node.grad;
        if (a.requires_grad()) {
          // dA = dC * B^T
          auto& ga = detail::accum_grad(a);
          const auto& bd = b.data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j) {
              T acc = 0;
              for (std::size_t c = 0; c < n; ++c) acc += go[i * n + c] * bd[j * n + c];
              ga[i * k + j] += acc;
            }
        }
        if (b.requires_grad()) {
          // dB = A^T * dC
          auto& gb = detail::accum_grad(b);
          const auto& ad = a.data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j) {
              const T av = ad[i * k + j];
              if (av == T(0)) continue;
              for (std::size_t c = 0; c < n; ++c) gb[j * n + c] += av * go[i * n + c];
            }
        }
      });
  auto& od = out.data();
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = ad[i * k + kk];
      if (av == T(0)) continue;
      const T* brow = bd.data() + kk * n;
      T* orow = od.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  return out;
}

// C = A * B^T, [m x k] [n x k].  Plain dot products per output element.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1])
    shape_fail("matmul_nt", a.shape(), b.shape());
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  Tensor<T> out = make_op<T>(
      "matmul_nt", {m, n}, {a, b}, [m, k, n](detail::TensorData<T>& node) {
        auto a = node.parents[0];
        auto b = node.parents[1];
        const auto& go = node.grad;
        if (a.requires_grad()) {
          // dA = dC * B
          auto& ga = detail::accum_grad(a);
          const auto& bd = b.data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j) {
              T acc = 0;
              for (std::size_t c = 0; c < n; ++c) acc += go[i * n + c] * bd[c * k + j];
              ga[i * k + j] += acc;
            }
        }
        if (b.requires_grad()) {
          // dB = dC^T * A
          auto& gb = detail::accum_grad(b);
          const auto& ad = a.data();
          for (std::size_t c = 0; c < n; ++c)
            for (std::size_t j = 0; j < k; ++j) {
              T acc = 0;
              for (std::size_t i = 0; i < m; ++i) acc += go[i * n + c] * ad[i * k + j];
              gb[c * k + j] += acc;
            }
        }
      });
  auto& od = out.data();
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const T* arow = ad.data() + i * k;
      const T* brow = bd.data() + j * k;
      T acc = 0;
      for (std::size_t c = 0; c < k; ++c) acc += arow[c] * brow[c];
      od[i * n + j] = acc;
    }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_fail("add", a.shape(), b.shape());
  Tensor<T> out = make_op<T>("add", a.shape(), {a, b}, [](detail::TensorData<T>& node) {
    for (int pi = 0; pi < 2; ++pi) {
      auto p = node.parents[pi];
      if (!p.requires_grad()) continue;
      auto& g = detail::accum_grad(p);
      for (std::size_t i = 0; i < node.grad.size(); ++i) g[i] += node.grad[i];
    }
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = a.at(i) + b.at(i);
  return out;
}

// x [n x m] + bias [m] broadcast over rows.
template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || x.shape()[1] != bias.shape()[0])
    shape_fail("add_row_bias", x.shape(), bias.shape());
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  Tensor<T> out = make_op<T>(
      "add_row_bias", x.shape(), {x, bias}, [n, m](detail::TensorData<T>& node) {
        auto x = node.parents[0];
        auto b = node.parents[1];
        if (x.requires_grad()) {
          auto& g = detail::accum_grad(x);
          for (std::size_t i = 0; i < node.grad.size(); ++i) g[i] += node.grad[i];
        }
        if (b.requires_grad()) {
          auto& g = detail::accum_grad(b);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) g[j] += node.grad[i * m + j];
        }
      });
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) = x.at(i, j) + bias.at(j);
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
  Tensor<T> out = make_op<T>("mul", a.shape(), {a, b}, [](detail::TensorData<T>& node) {
    auto a = node.parents[0];
    auto b = node.parents[1];
    if (a.requires_grad()) {
      auto& g = detail::accum_grad(a);
      for (std::size_t i = 0; i < node.grad.size(); ++i) g[i] += node.grad[i] * b.at(i);
    }
    if (b.requires_grad()) {
      auto& g = detail::accum_grad(b);
      for (std::size_t i = 0; i < node.grad.size(); ++i) g[i] += node.grad[i] * a.at(i);
    }
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = a.at(i) * b.at(i);
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  Tensor<T> out = make_op<T>("scale", x.shape(), {x}, [s](detail::TensorData<T>& node) {
    auto x = node.parents[0];
    if (!x.requires_grad()) return;
    auto& g = detail::accum_grad(x);
    for (std::size_t i = 0; i < node.grad.size(); ++i) g[i] += node.grad[i] * s;
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = x.at(i) * s;
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = make_op<T>("relu", x.shape(), {x}, [](detail::TensorData<T>& node) {
    auto x = node.parents[0];
    if (!x.requires_grad()) return;
    auto& g = detail::accum_grad(x);
    for (std::size_t i = 0; i < node.grad.size(); ++i)
      if (x.at(i) > T(0)) g[i] += node.grad[i];
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = x.at(i) > T(0) ? x.at(i) : T(0);
  return out;
}

// ---- softmax ------------------------------------------------------------

// Key-visibility mask for attention: allowed[q * n_k + k] != 0 means query
// row q may attend to key k.
struct AttnMask {
  std::size_t n_q = 0, n_k = 0;
  std::vector<std::uint8_t> allowed;

  static AttnMask all(std::size_t n_q, std::size_t n_k) {
    return {n_q, n_k, std::vector<std::uint8_t>(n_q * n_k, 1)};
  }
  static AttnMask causal(std::size_t n) {
    AttnMask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
    for (std::size_t q = 0; q < n; ++q)
      for (std::size_t k = 0; k <= q; ++k) m.allowed[q * n + k] = 1;
    return m;
  }
  // Every query sees exactly the keys marked visible (e.g. non-pad source
  // positions).
  static AttnMask keys_visible(std::size_t n_q, const std::vector<std::uint8_t>& key_ok) {
    AttnMask m{n_q, key_ok.size(), std::vector<std::uint8_t>(n_q * key_ok.size(), 0)};
    for (std::size_t q = 0; q < n_q; ++q)
      for (std::size_t k = 0; k < key_ok.size(); ++k) m.allowed[q * key_ok.size() + k] = key_ok[k];
    return m;
  }
  // Rows [row0, row0+n_q) of a causal mask over n_k total positions: query
  // at absolute position row0+q sees keys 0..row0+q.  This is what a step
  // of incremental decoding uses.
  static AttnMask causal_rows(std::size_t row0, std::size_t n_q, std::size_t n_k) {
    AttnMask m{n_q, n_k, std::vector<std::uint8_t>(n_q * n_k, 0)};
    for (std::size_t q = 0; q < n_q; ++q)
      for (std::size_t k = 0; k < n_k && k <= row0 + q; ++k) m.allowed[q * n_k + k] = 1;
    return m;
  }
};

// Row-wise softmax.  With a mask, masked keys never enter the max or the
// sum, so a row's result depends only on the scores at its allowed keys;
// a fully masked row comes out all-zero.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, const AttnMask* mask = nullptr) {
  if (x.rank() != 2) throw std::invalid_argument("softmax_rows: expected rank-2, got " + shape_str(x.shape()));
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  if (mask && (mask->n_q != n || mask->n_k != m))
    throw std::invalid_argument("softmax_rows: mask " + shape_str({mask->n_q, mask->n_k}) +
                                " does not match scores " + shape_str(x.shape()));
  std::vector<std::uint8_t> allow;
  if (mask) allow = mask->allowed;
  Tensor<T> out = make_op<T>(
      "softmax_rows", x.shape(), {x}, [n, m, allow](detail::TensorData<T>& node) {
        auto x = node.parents[0];
        if (!x.requires_grad()) return;
        auto& g = detail::accum_grad(x);
        for (std::size_t i = 0; i < n; ++i) {
          const T* y = node.data.data() + i * m;
          const T* go = node.grad.data() + i * m;
          T dot = 0;
          for (std::size_t j = 0; j < m; ++j) dot += go[j] * y[j];
          for (std::size_t j = 0; j < m; ++j) {
            if (!allow.empty() && !allow[i * m + j]) continue;
            g[i * m + j] += y[j] * (go[j] - dot);
          }
        }
      });
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* row_ok = allow.empty() ? nullptr : allow.data() + i * m;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < m; ++j)
      if ((!row_ok || row_ok[j]) && x.at(i, j) > mx) mx = x.at(i, j);
    if (mx == -std::numeric_limits<T>::infinity()) continue;  // row fully masked -> zeros
    T sum = 0;
    for (std::size_t j = 0; j < m; ++j) {
      if (row_ok && !row_ok[j]) continue;
      const T e = std::exp(x.at(i, j) - mx);
      out.at(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (row_ok && !row_ok[j]) continue;
      out.at(i, j) /= sum;
    }
  }
  return out;
}

// ---- layer norm ---------------------------------------------------------

template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                          T eps = T(1e-5)) {
  if (x.rank() != 2) throw std::invalid_argument("layer_norm_rows: expected rank-2, got " + shape_str(x.shape()));
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  if (gain.rank() != 1 || gain.shape()[0] != m) shape_fail("layer_norm_rows", x.shape(), gain.shape());
  if (bias.rank() != 1 || bias.shape()[0] != m) shape_fail("layer_norm_rows", x.shape(), bias.shape());
  Tensor<T> out = make_op<T>(
      "layer_norm_rows", x.shape(), {x, gain, bias}, [n, m, eps](detail::TensorData<T>& node) {
        auto x = node.parents[0];
        auto gain = node.parents[1];
        auto bias = node.parents[2];
        for (std::size_t i = 0; i < n; ++i) {
          const T* xr = x.data().data() + i * m;
          const T* go = node.grad.data() + i * m;
          T mean = 0;
          for (std::size_t j = 0; j < m; ++j) mean += xr[j];
          mean /= T(m);
          T var = 0;
          for (std::size_t j = 0; j < m; ++j) var += (xr[j] - mean) * (xr[j] - mean);
          var /= T(m);
          const T inv = T(1) / std::sqrt(var + eps);
          if (bias.requires_grad()) {
            auto& gb = detail::accum_grad(bias);
            for (std::size_t j = 0; j < m; ++j) gb[j] += go[j];
          }
          if (gain.requires_grad()) {
            auto& gg = detail::accum_grad(gain);
            for (std::size_t j = 0; j < m; ++j) gg[j] += go[j] * (xr[j] - mean) * inv;
          }
          if (x.requires_grad()) {
            auto& gx = detail::accum_grad(x);
            // d/dx of gain*(x-mean)*inv + bias, with mean and var functions of x.
            T sum_gh = 0, sum_ghx = 0;
            for (std::size_t j = 0; j < m; ++j) {
              const T gh = go[j] * gain.at(j);
              sum_gh += gh;
              sum_ghx += gh * (xr[j] - mean) * inv;
            }
            for (std::size_t j = 0; j < m; ++j) {
              const T gh = go[j] * gain.at(j);
              const T xhat = (xr[j] - mean) * inv;
              gx[i * m + j] += inv * (gh - sum_gh / T(m) - xhat * sum_ghx / T(m));
            }
          }
        }
      });
  for (std::size_t i = 0; i < n; ++i) {
    T mean = 0;
    for (std::size_t j = 0; j < m; ++j) mean += x.at(i, j);
    mean /= T(m);
    T var = 0;
    for (std::size_t j = 0; j < m; ++j) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
    var /= T(m);
    const T inv = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j)
      out.at(i, j) = gain.at(j) * (x.at(i, j) - mean) * inv + bias.at(j);
  }
  return out;
}

// ---- gather / reshape ---------------------------------------------------

// Rows of `table` selected by ids; grad scatters back with +=.
template <typename T>
Tensor<T> embedding_rows(const Tensor<T>& table, const std::vector<std::int32_t>& ids) {
  if (table.rank() != 2) throw std::invalid_argument("embedding_rows: table must be rank-2");
  const std::size_t v = table.shape()[0], m = table.shape()[1];
  for (std::int32_t id : ids)
    if (id < 0 || std::size_t(id) >= v)
      throw std::invalid_argument("embedding_rows: id " + std::to_string(id) +
                                  " out of range for table " + shape_str(table.shape()));
  auto ids_copy = ids;
  Tensor<T> out = make_op<T>(
      "embedding_rows", {ids.size(), m}, {table}, [m, ids_copy](detail::TensorData<T>& node) {
        auto table = node.parents[0];
        if (!table.requires_grad()) return;
        auto& g = detail::accum_grad(table);
        for (std::size_t i = 0; i < ids_copy.size(); ++i)
          for (std::size_t j = 0; j < m; ++j)
            g[std::size_t(ids_copy[i]) * m + j] += node.grad[i * m + j];
      });
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) = table.at(std::size_t(ids[i]), j);
  return out;
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1])
    shape_fail("concat_rows", a.shape(), b.shape());
  const std::size_t na = a.shape()[0], nb = b.shape()[0], m = a.shape()[1];
  Tensor<T> out = make_op<T>(
      "concat_rows", {na + nb, m}, {a, b}, [na, nb, m](detail::TensorData<T>& node) {
        auto a = node.parents[0];
        auto b = node.parents[1];
        if (a.requires_grad()) {
          auto& g = detail::accum_grad(a);
          for (std::size_t i = 0; i < na * m; ++i) g[i] += node.grad[i];
        }
        if (b.requires_grad()) {
          auto& g = detail::accum_grad(b);
          for (std::size_t i = 0; i < nb * m; ++i) g[i] += node.grad[na * m + i];
        }
      });
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + na * m);
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t off, std::size_t len) {
  if (x.rank() != 2 || off + len > x.shape()[1])
    throw std::invalid_argument("slice_cols: [" + std::to_string(off) + ", " +
                                std::to_string(off + len) + ") out of range for " +
                                shape_str(x.shape()));
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  Tensor<T> out = make_op<T>(
      "slice_cols", {n, len}, {x}, [n, m, off, len](detail::TensorData<T>& node) {
        auto x = node.parents[0];
        if (!x.requires_grad()) return;
        auto& g = detail::accum_grad(x);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < len; ++j) g[i * m + off + j] += node.grad[i * len + j];
      });
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < len; ++j) out.at(i, j) = x.at(i, off + j);
  return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const std::size_t n = parts[0].shape()[0];
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.shape()[0] != n) shape_fail("concat_cols", parts[0].shape(), p.shape());
    m += p.shape()[1];
  }
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[1]);
  Tensor<T> out = make_op<T>(
      "concat_cols", {n, m}, parts, [n, m, widths](detail::TensorData<T>& node) {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < node.parents.size(); ++pi) {
          auto p = node.parents[pi];
          const std::size_t w = widths[pi];
          if (p.requires_grad()) {
            auto& g = detail::accum_grad(p);
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < w; ++j) g[i * w + j] += node.grad[i * m + off + j];
          }
          off += w;
        }
      });
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[1];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) out.at(i, off + j) = p.at(i, j);
    off += w;
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  Tensor<T> out = make_op<T>("sum_all", {1}, {x}, [](detail::TensorData<T>& node) {
    auto x = node.parents[0];
    if (!x.requires_grad()) return;
    auto& g = detail::accum_grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[0];
  });
  T acc = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += x.at(i);
  out.at(0) = acc;
  return out;
}

// ---- dropout ------------------------------------------------------------

// Inverted dropout: kept activations are scaled by 1/(1-rate) so eval needs
// no rescaling.  A no-op when rate == 0 or grad mode is off (inference).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  if (rate == 0.0 || !is_grad_enabled()) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<std::uint8_t> mask(x.numel());
  for (auto& b : mask) b = keep(rng) ? 1 : 0;
  const T inv = T(1.0 / (1.0 - rate));
  Tensor<T> out = make_op<T>("dropout", x.shape(), {x}, [mask, inv](detail::TensorData<T>& node) {
    auto x = node.parents[0];
    if (!x.requires_grad()) return;
    auto& g = detail::accum_grad(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (mask[i]) g[i] += node.grad[i] * inv;
  });
  for (std::size_t i = 0; i < x.numel(); ++i) out.at(i) = mask[i] ? x.at(i) * inv : T(0);
  return out;
}

// ---- label-smoothed cross entropy ---------------------------------------

// Fused log-softmax + smoothed NLL, summed over non-pad target positions.
// Per position with smoothing eps over vocab V, target y:
//   loss = -(1-eps) * log p[y] - (eps/V) * sum_w log p[w]
// Positions whose target is pad_id contribute nothing.  `count` reports how
// many positions were kept so callers can average across a batch.
template <typename T>
Tensor<T> label_smoothed_ce_sum(const Tensor<T>& logits, const std::vector<std::int32_t>& targets,
                                T eps_smooth, std::int32_t pad_id, std::size_t* count = nullptr) {
  if (logits.rank() != 2 || logits.shape()[0] != targets.size())
    throw std::invalid_argument("label_smoothed_ce_sum: logits " + shape_str(logits.shape()) +
                                " vs " + std::to_string(targets.size()) + " targets");
  const std::size_t n = logits.shape()[0], v = logits.shape()[1];
  for (std::int32_t t : targets)
    if (t < 0 || std::size_t(t) >= v)
      throw std::invalid_argument("label_smoothed_ce_sum: target " + std::to_string(t) +
                                  " out of range for vocab " + std::to_string(v));
  // log-softmax rows, computed once and reused by the backward closure
  std::vector<T> logp(n * v);
  for (std::size_t i = 0; i < n; ++i) {
    T mx = logits.at(i, 0);
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, logits.at(i, j));
    T sum = 0;
    for (std::size_t j = 0; j < v; ++j) sum += std::exp(logits.at(i, j) - mx);
    const T lse = mx + std::log(sum);
    for (std::size_t j = 0; j < v; ++j) logp[i * v + j] = logits.at(i, j) - lse;
  }
  std::size_t kept = 0;
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] == pad_id) continue;
    ++kept;
    T sum_logp = 0;
    for (std::size_t j = 0; j < v; ++j) sum_logp += logp[i * v + j];
    total += -(T(1) - eps_smooth) * logp[i * v + std::size_t(targets[i])] -
             (eps_smooth / T(v)) * sum_logp;
  }
  if (count) *count = kept;
  auto tg = targets;
  Tensor<T> out = make_op<T>(
      "label_smoothed_ce_sum", {1}, {logits},
      [n, v, eps_smooth, pad_id, tg, logp](detail::TensorData<T>& node) {
        auto logits = node.parents[0];
        if (!logits.requires_grad()) return;
        auto& g = detail::accum_grad(logits);
        const T go = node.grad[0];
        for (std::size_t i = 0; i < n; ++i) {
          if (tg[i] == pad_id) continue;
          for (std::size_t j = 0; j < v; ++j) {
            // d loss / d logit = softmax - q, q the smoothed target dist
            T q = eps_smooth / T(v);
            if (j == std::size_t(tg[i])) q += T(1) - eps_smooth;
            g[i * v + j] += go * (std::exp(logp[i * v + j]) - q);
          }
        }
      });
  out.at(0) = total;
  return out;
}

}  // namespace edgeformer
