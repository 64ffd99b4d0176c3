#pragma once

// Minimal reverse-mode autodiff over dense tensors. The operation set is
// closed: matmul, conv2d, group norm, softmax attention, SiLU/sigmoid,
// elementwise arithmetic, reshape/concat/slice, reductions. Heavy inner
// products delegate to Eigen; gradients are recorded on a dynamic tape.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace mvdpp::nc {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
  return r + "]";
}

// Global toggle for post-op finite checks. On by default; training loops may
// disable it for speed.
inline bool& debug_checks() {
  static bool v = true;
  return v;
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> val;
  std::vector<T> grad;
  bool requires_grad = false;
  bool is_param = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backprop;

  std::int64_t numel() const { return static_cast<std::int64_t>(val.size()); }
  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  static Tensor zeros(Shape s) { return filled(std::move(s), T(0)); }

  static Tensor filled(Shape s, T value) {
    auto n = std::make_shared<Node<T>>();
    n->val.assign(shape_numel(s), value);
    n->shape = std::move(s);
    return Tensor(std::move(n));
  }

  static Tensor from_data(Shape s, std::vector<T> data) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(s))
      throw std::invalid_argument("from_data: size mismatch for " + shape_str(s));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(s);
    n->val = std::move(data);
    return Tensor(std::move(n));
  }

  template <class Rng>
  static Tensor randn(Shape s, Rng& rng, T stddev = T(1)) {
    std::normal_distribution<double> d(0.0, 1.0);
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(s);
    n->val.resize(shape_numel(n->shape));
    for (auto& v : n->val) v = static_cast<T>(d(rng)) * stddev;
    return Tensor(std::move(n));
  }

  Tensor as_param() {
    n_->requires_grad = true;
    n_->is_param = true;
    return *this;
  }

  const Shape& shape() const { return n_->shape; }
  std::int64_t numel() const { return n_->numel(); }
  std::vector<T>& val() { return n_->val; }
  const std::vector<T>& val() const { return n_->val; }
  std::vector<T>& grad() { n_->ensure_grad(); return n_->grad; }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  bool defined() const { return n_ != nullptr; }
  T item() const {
    if (numel() != 1) throw std::invalid_argument("item: tensor not scalar");
    return n_->val[0];
  }

  std::shared_ptr<Node<T>> node() const { return n_; }

 private:
  std::shared_ptr<Node<T>> n_;
};

template <class T>
inline void check_finite(const Tensor<T>& t, const char* op) {
  if (!debug_checks()) return;
  for (T v : t.val())
    if (!std::isfinite(static_cast<double>(v)))
      throw std::runtime_error(std::string("non-finite value after op ") + op);
}

namespace detail {

template <class T>
Tensor<T> make_result(Shape s, std::vector<std::shared_ptr<Node<T>>> parents) {
  auto n = std::make_shared<Node<T>>();
  n->val.assign(shape_numel(s), T(0));
  n->shape = std::move(s);
  bool rg = false;
  for (auto& p : parents) rg = rg || p->requires_grad;
  n->requires_grad = rg;
  if (rg) n->parents = std::move(parents);
  return Tensor<T>(std::move(n));
}

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<MatRM<T>>;
template <class T>
using CMapM = Eigen::Map<const MatRM<T>>;

}  // namespace detail

// ---- elementwise ----

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = detail::make_result<T>(a.shape(), {a.node(), b.node()});
  const auto &av = a.val(), &bv = b.val();
  auto& ov = out.val();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (out.requires_grad()) {
    auto an = a.node(); auto bn = b.node();
    out.node()->backprop = [an, bn](Node<T>& self) {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
      }
    };
  }
  check_finite(out, "add");
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("sub: shape mismatch");
  auto out = detail::make_result<T>(a.shape(), {a.node(), b.node()});
  const auto &av = a.val(), &bv = b.val();
  auto& ov = out.val();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  if (out.requires_grad()) {
    auto an = a.node(); auto bn = b.node();
    out.node()->backprop = [an, bn](Node<T>& self) {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
      }
    };
  }
  check_finite(out, "sub");
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("mul: shape mismatch");
  auto out = detail::make_result<T>(a.shape(), {a.node(), b.node()});
  const auto &av = a.val(), &bv = b.val();
  auto& ov = out.val();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (out.requires_grad()) {
    auto an = a.node(); auto bn = b.node();
    out.node()->backprop = [an, bn](Node<T>& self) {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->val[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->val[i];
      }
    };
  }
  check_finite(out, "mul");
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, double c) {
  auto out = detail::make_result<T>(a.shape(), {a.node()});
  const auto& av = a.val();
  auto& ov = out.val();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * static_cast<T>(c);
  if (out.requires_grad()) {
    auto an = a.node();
    out.node()->backprop = [an, c](Node<T>& self) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * static_cast<T>(c);
    };
  }
  check_finite(out, "scale");
  return out;
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, double c) {
  auto out = detail::make_result<T>(a.shape(), {a.node()});
  const auto& av = a.val();
  auto& ov = out.val();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + static_cast<T>(c);
  if (out.requires_grad()) {
    auto an = a.node();
    out.node()->backprop = [an](Node<T>& self) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    };
  }
  return out;
}

// Broadcast multiply by a trainable scalar ([1] tensor).
template <class T>
Tensor<T> scale_by(const Tensor<T>& a, const Tensor<T>& s) {
  if (s.numel() != 1) throw std::invalid_argument("scale_by: scale must be scalar");
  auto out = detail::make_result<T>(a.shape(), {a.node(), s.node()});
  const T sv = s.val()[0];
  const auto& av = a.val();
  auto& ov = out.val();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * sv;
  if (out.requires_grad()) {
    auto an = a.node(); auto sn = s.node();
    out.node()->backprop = [an, sn](Node<T>& self) {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * sn->val[0];
      }
      if (sn->requires_grad) {
        sn->ensure_grad();
        T acc = 0;
        for (size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * an->val[i];
        sn->grad[0] += acc;
      }
    };
  }
  return out;
}

// ---- activations ----

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  auto out = detail::make_result<T>(a.shape(), {a.node()});
  const auto& av = a.val();
  auto& ov = out.val();
  for (size_t i = 0; i < ov.size(); ++i)
    ov[i] = T(1) / (T(1) + std::exp(-av[i]));
  if (out.requires_grad()) {
    auto an = a.node();
    auto yv = out.val();
    out.node()->backprop = [an, yv](Node<T>& self) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        an->grad[i] += self.grad[i] * yv[i] * (T(1) - yv[i]);
    };
  }
  check_finite(out, "sigmoid");
  return out;
}

template <class T>
Tensor<T> silu(const Tensor<T>& a) {
  auto out = detail::make_result<T>(a.shape(), {a.node()});
  const auto& av = a.val();
  auto& ov = out.val();
  for (size_t i = 0; i < ov.size(); ++i) {
    T s = T(1) / (T(1) + std::exp(-av[i]));
    ov[i] = av[i] * s;
  }
  if (out.requires_grad()) {
    auto an = a.node();
    out.node()->backprop = [an](Node<T>& self) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        T x = an->val[i];
        T s = T(1) / (T(1) + std::exp(-x));
        an->grad[i] += self.grad[i] * s * (T(1) + x * (T(1) - s));
      }
    };
  }
  check_finite(out, "silu");
  return out;
}

template <class T>
Tensor<T> reciprocal(const Tensor<T>& a) {
  auto out = detail::make_result<T>(a.shape(), {a.node()});
  const auto& av = a.val();
  auto& ov = out.val();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = T(1) / av[i];
  if (out.requires_grad()) {
    auto an = a.node();
    auto yv = out.val();
    out.node()->backprop = [an, yv](Node<T>& self) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] -= self.grad[i] * yv[i] * yv[i];
    };
  }
  check_finite(out, "reciprocal");
  return out;
}

template <class T>
Tensor<T> exp_of(const Tensor<T>& a) {
  auto out = detail::make_result<T>(a.shape(), {a.node()});
  const auto& av = a.val();
  auto& ov = out.val();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::exp(av[i]);
  if (out.requires_grad()) {
    auto an = a.node();
    auto yv = out.val();
    out.node()->backprop = [an, yv](Node<T>& self) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * yv[i];
    };
  }
  check_finite(out, "exp");
  return out;
}

// ---- shape ops ----

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape s) {
  if (shape_numel(s) != a.numel())
    throw std::invalid_argument("reshape: numel mismatch " + shape_str(a.shape()) + " -> " + shape_str(s));
  auto out = detail::make_result<T>(std::move(s), {a.node()});
  out.val() = a.val();
  if (out.requires_grad()) {
    auto an = a.node();
    out.node()->backprop = [an](Node<T>& self) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    };
  }
  return out;
}

template <class T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  if (a.shape().size() != 2) throw std::invalid_argument("transpose2d: need 2-D");
  int m = a.shape()[0], n = a.shape()[1];
  auto out = detail::make_result<T>({n, m}, {a.node()});
  const auto& av = a.val();
  auto& ov = out.val();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) ov[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
  if (out.requires_grad()) {
    auto an = a.node();
    out.node()->backprop = [an, m, n](Node<T>& self) {
      an->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          an->grad[static_cast<size_t>(i) * n + j] += self.grad[static_cast<size_t>(j) * m + i];
    };
  }
  return out;
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: empty input");
  Shape s = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) throw std::invalid_argument("concat: bad axis");
  int total = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != s.size()) throw std::invalid_argument("concat: rank mismatch");
    for (size_t d = 0; d < s.size(); ++d)
      if (static_cast<int>(d) != axis && p.shape()[d] != s[d])
        throw std::invalid_argument("concat: extent mismatch");
    total += p.shape()[axis];
  }
  s[axis] = total;
  std::vector<std::shared_ptr<Node<T>>> parents;
  for (const auto& p : parts) parents.push_back(p.node());
  auto out = detail::make_result<T>(s, parents);

  // outer = product of dims before axis, inner = product after.
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s[d];
  for (size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];

  auto& ov = out.val();
  std::int64_t off = 0;
  std::vector<std::int64_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(off);
    std::int64_t ext = p.shape()[axis];
    const auto& pv = p.val();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy(pv.begin() + o * ext * inner, pv.begin() + (o + 1) * ext * inner,
                ov.begin() + (o * total + off) * inner);
    off += ext;
  }
  if (out.requires_grad()) {
    std::vector<std::shared_ptr<Node<T>>> nodes;
    std::vector<std::int64_t> exts;
    for (const auto& p : parts) { nodes.push_back(p.node()); exts.push_back(p.shape()[axis]); }
    out.node()->backprop = [nodes, exts, offsets, outer, inner, total](Node<T>& self) {
      for (size_t k = 0; k < nodes.size(); ++k) {
        if (!nodes[k]->requires_grad) continue;
        nodes[k]->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t i = 0; i < exts[k] * inner; ++i)
            nodes[k]->grad[o * exts[k] * inner + i] += self.grad[(o * total + offsets[k]) * inner + i];
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> slice(const Tensor<T>& a, int axis, int start, int len) {
  Shape s = a.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) throw std::invalid_argument("slice: bad axis");
  if (start < 0 || len <= 0 || start + len > s[axis]) throw std::invalid_argument("slice: bad range");
  int full = s[axis];
  s[axis] = len;
  auto out = detail::make_result<T>(s, {a.node()});
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= a.shape()[d];
  for (size_t d = axis + 1; d < a.shape().size(); ++d) inner *= a.shape()[d];
  const auto& av = a.val();
  auto& ov = out.val();
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy(av.begin() + (o * full + start) * inner, av.begin() + (o * full + start + len) * inner,
              ov.begin() + o * len * inner);
  if (out.requires_grad()) {
    auto an = a.node();
    out.node()->backprop = [an, outer, inner, full, start, len](Node<T>& self) {
      an->ensure_grad();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(len) * inner; ++i)
          an->grad[(o * full + start) * inner + i] += self.grad[o * len * inner + i];
    };
  }
  return out;
}

// ---- linear algebra ----

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  auto out = detail::make_result<T>({m, n}, {a.node(), b.node()});
  detail::CMapM<T> A(a.val().data(), m, k), B(b.val().data(), k, n);
  detail::MapM<T> O(out.val().data(), m, n);
  O.noalias() = A * B;
  if (out.requires_grad()) {
    auto an = a.node(); auto bn = b.node();
    out.node()->backprop = [an, bn, m, k, n](Node<T>& self) {
      detail::CMapM<T> G(self.grad.data(), m, n);
      if (an->requires_grad) {
        an->ensure_grad();
        detail::CMapM<T> B(bn->val.data(), k, n);
        detail::MapM<T> dA(an->grad.data(), m, k);
        dA.noalias() += G * B.transpose();
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        detail::CMapM<T> A(an->val.data(), m, k);
        detail::MapM<T> dB(bn->grad.data(), k, n);
        dB.noalias() += A.transpose() * G;
      }
    };
  }
  check_finite(out, "matmul");
  return out;
}

// x:[S,Din] + b:[Din] broadcast over rows.
template <class T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& b) {
  if (x.shape().size() != 2 || b.shape().size() != 1 || x.shape()[1] != b.shape()[0])
    throw std::invalid_argument("add_row_bias: shape mismatch");
  int s = x.shape()[0], d = x.shape()[1];
  auto out = detail::make_result<T>(x.shape(), {x.node(), b.node()});
  const auto &xv = x.val(), &bv = b.val();
  auto& ov = out.val();
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < d; ++j) ov[static_cast<size_t>(i) * d + j] = xv[static_cast<size_t>(i) * d + j] + bv[j];
  if (out.requires_grad()) {
    auto xn = x.node(); auto bnn = b.node();
    out.node()->backprop = [xn, bnn, s, d](Node<T>& self) {
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
      }
      if (bnn->requires_grad) {
        bnn->ensure_grad();
        for (int i = 0; i < s; ++i)
          for (int j = 0; j < d; ++j) bnn->grad[j] += self.grad[static_cast<size_t>(i) * d + j];
      }
    };
  }
  return out;
}

// x:[N,C,H,W] + b:[N,C] broadcast over spatial positions.
template <class T>
Tensor<T> add_nc_bias(const Tensor<T>& x, const Tensor<T>& b) {
  if (x.shape().size() != 4 || b.shape().size() != 2 || x.shape()[0] != b.shape()[0] || x.shape()[1] != b.shape()[1])
    throw std::invalid_argument("add_nc_bias: shape mismatch");
  int N = x.shape()[0], C = x.shape()[1];
  std::int64_t hw = static_cast<std::int64_t>(x.shape()[2]) * x.shape()[3];
  auto out = detail::make_result<T>(x.shape(), {x.node(), b.node()});
  const auto &xv = x.val(), &bv = b.val();
  auto& ov = out.val();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      T bb = bv[static_cast<size_t>(n) * C + c];
      std::int64_t base = (static_cast<std::int64_t>(n) * C + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) ov[base + i] = xv[base + i] + bb;
    }
  if (out.requires_grad()) {
    auto xn = x.node(); auto bnn = b.node();
    out.node()->backprop = [xn, bnn, N, C, hw](Node<T>& self) {
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
      }
      if (bnn->requires_grad) {
        bnn->ensure_grad();
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            std::int64_t base = (static_cast<std::int64_t>(n) * C + c) * hw;
            T acc = 0;
            for (std::int64_t i = 0; i < hw; ++i) acc += self.grad[base + i];
            bnn->grad[static_cast<size_t>(n) * C + c] += acc;
          }
      }
    };
  }
  return out;
}

// ---- softmax / attention ----

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  if (a.shape().size() != 2) throw std::invalid_argument("softmax_rows: need 2-D");
  int s = a.shape()[0], m = a.shape()[1];
  auto out = detail::make_result<T>(a.shape(), {a.node()});
  const auto& av = a.val();
  auto& ov = out.val();
  for (int i = 0; i < s; ++i) {
    const T* row = av.data() + static_cast<size_t>(i) * m;
    T* orow = ov.data() + static_cast<size_t>(i) * m;
    T mx = row[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    T sum = 0;
    for (int j = 0; j < m; ++j) { orow[j] = std::exp(row[j] - mx); sum += orow[j]; }
    for (int j = 0; j < m; ++j) orow[j] /= sum;
  }
  if (out.requires_grad()) {
    auto an = a.node();
    auto yv = out.val();
    out.node()->backprop = [an, yv, s, m](Node<T>& self) {
      an->ensure_grad();
      for (int i = 0; i < s; ++i) {
        const T* y = yv.data() + static_cast<size_t>(i) * m;
        const T* g = self.grad.data() + static_cast<size_t>(i) * m;
        T dot = 0;
        for (int j = 0; j < m; ++j) dot += g[j] * y[j];
        T* ag = an->grad.data() + static_cast<size_t>(i) * m;
        for (int j = 0; j < m; ++j) ag[j] += (g[j] - dot) * y[j];
      }
    };
  }
  check_finite(out, "softmax");
  return out;
}

// softmax(Q Kᵀ / sqrt(D)) V with Q:[S,D], K:[M,D], V:[M,Dv].
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  if (q.shape().size() != 2 || k.shape().size() != 2 || v.shape().size() != 2 ||
      q.shape()[1] != k.shape()[1] || k.shape()[0] != v.shape()[0])
    throw std::invalid_argument("attention: incompatible shapes");
  int d = q.shape()[1];
  auto scores = scale(matmul(q, transpose2d(k)), 1.0 / std::sqrt(static_cast<double>(d)));
  return matmul(softmax_rows(scores), v);
}

// ---- conv / norm ----

namespace detail {

// Output-column range [j0, j1) for which xj = j*stride + kj - pad lies in [0, W).
inline std::pair<int, int> col_range(int kj, int stride, int pad, int W, int Wo) {
  int j0 = kj >= pad ? 0 : (pad - kj + stride - 1) / stride;
  int j1 = std::min(Wo, (W - 1 - kj + pad) / stride + 1);
  return {j0, std::max(j0, j1)};
}

template <class T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* col) {
  // col layout: [C*k*k, Ho*Wo]
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        T* dst = col + ((static_cast<std::int64_t>(c) * k + ki) * k + kj) * (static_cast<std::int64_t>(Ho) * Wo);
        auto [j0, j1] = col_range(kj, stride, pad, W, Wo);
        for (int i = 0; i < Ho; ++i) {
          int yi = i * stride + ki - pad;
          T* d = dst + static_cast<std::int64_t>(i) * Wo;
          if (yi < 0 || yi >= H) {
            std::fill(d, d + Wo, T(0));
            continue;
          }
          const T* row = x + (static_cast<std::int64_t>(c) * H + yi) * W + (kj - pad);
          std::fill(d, d + j0, T(0));
          if (stride == 1)
            std::copy(row + j0, row + j1, d + j0);
          else
            for (int j = j0; j < j1; ++j) d[j] = row[static_cast<std::int64_t>(j) * stride];
          std::fill(d + j1, d + Wo, T(0));
        }
      }
}

template <class T>
void col2im_acc(const T* col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* x) {
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const T* src = col + ((static_cast<std::int64_t>(c) * k + ki) * k + kj) * (static_cast<std::int64_t>(Ho) * Wo);
        auto [j0, j1] = col_range(kj, stride, pad, W, Wo);
        for (int i = 0; i < Ho; ++i) {
          int yi = i * stride + ki - pad;
          if (yi < 0 || yi >= H) continue;
          const T* s = src + static_cast<std::int64_t>(i) * Wo;
          T* row = x + (static_cast<std::int64_t>(c) * H + yi) * W + (kj - pad);
          if (stride == 1)
            for (int j = j0; j < j1; ++j) row[j] += s[j];
          else
            for (int j = j0; j < j1; ++j) row[static_cast<std::int64_t>(j) * stride] += s[j];
        }
      }
}

// Reusable scratch for conv im2col buffers; every element is overwritten
// before use, so the contents never need zeroing.
template <class T>
std::vector<T>& conv_scratch(int which, std::int64_t n) {
  thread_local std::vector<T> bufs[2];
  auto& b = bufs[which];
  if (static_cast<std::int64_t>(b.size()) < n) b.resize(n);
  return b;
}

}  // namespace detail

// x:[N,Ci,H,W], w:[Co,Ci,k,k], bias:[Co] (pass empty tensor for none).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride, int pad) {
  if (x.shape().size() != 4 || w.shape().size() != 4) throw std::invalid_argument("conv2d: need 4-D x and w");
  int N = x.shape()[0], Ci = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  int Co = w.shape()[0], k = w.shape()[2];
  if (w.shape()[1] != Ci || w.shape()[3] != k) throw std::invalid_argument("conv2d: kernel shape mismatch");
  if (k % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd");
  if (H + 2 * pad < k || W + 2 * pad < k)
    throw std::invalid_argument("conv2d: input smaller than kernel");
  int Ho = (H + 2 * pad - k) / stride + 1;  // floor semantics
  int Wo = (W + 2 * pad - k) / stride + 1;
  bool has_bias = bias.node() != nullptr;
  std::vector<std::shared_ptr<Node<T>>> parents = {x.node(), w.node()};
  if (has_bias) {
    if (bias.shape() != Shape{Co}) throw std::invalid_argument("conv2d: bias shape mismatch");
    parents.push_back(bias.node());
  }
  auto out = detail::make_result<T>({N, Co, Ho, Wo}, parents);

  const std::int64_t ckk = static_cast<std::int64_t>(Ci) * k * k;
  const std::int64_t hw = static_cast<std::int64_t>(Ho) * Wo;
  std::vector<T> col(ckk * hw);
  detail::CMapM<T> Wm(w.val().data(), Co, ckk);
  for (int n = 0; n < N; ++n) {
    detail::im2col(x.val().data() + static_cast<std::int64_t>(n) * Ci * H * W, Ci, H, W, k, stride, pad, Ho, Wo, col.data());
    detail::CMapM<T> Cm(col.data(), ckk, hw);
    detail::MapM<T> Om(out.val().data() + static_cast<std::int64_t>(n) * Co * hw, Co, hw);
    Om.noalias() = Wm * Cm;
    if (has_bias) {
      const auto& bv = bias.val();
      for (int co = 0; co < Co; ++co)
        Om.row(co).array() += bv[co];
    }
  }
  if (out.requires_grad()) {
    auto xn = x.node(); auto wn = w.node();
    auto bn = has_bias ? bias.node() : nullptr;
    out.node()->backprop = [xn, wn, bn, N, Ci, H, W, Co, k, stride, pad, Ho, Wo](Node<T>& self) {
      const std::int64_t ckk = static_cast<std::int64_t>(Ci) * k * k;
      const std::int64_t hw = static_cast<std::int64_t>(Ho) * Wo;
      std::vector<T> col(ckk * hw), dcol(ckk * hw);
      for (int n = 0; n < N; ++n) {
        detail::CMapM<T> G(self.grad.data() + static_cast<std::int64_t>(n) * Co * hw, Co, hw);
        if (wn->requires_grad || xn->requires_grad)
          detail::im2col(xn->val.data() + static_cast<std::int64_t>(n) * Ci * H * W, Ci, H, W, k, stride, pad, Ho, Wo, col.data());
        if (wn->requires_grad) {
          wn->ensure_grad();
          detail::CMapM<T> Cm(col.data(), ckk, hw);
          detail::MapM<T> dW(wn->grad.data(), Co, ckk);
          dW.noalias() += G * Cm.transpose();
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          detail::CMapM<T> Wm(wn->val.data(), Co, ckk);
          detail::MapM<T> dC(dcol.data(), ckk, hw);
          dC.noalias() = Wm.transpose() * G;
          detail::col2im_acc(dcol.data(), Ci, H, W, k, stride, pad, Ho, Wo,
                             xn->grad.data() + static_cast<std::int64_t>(n) * Ci * H * W);
        }
        if (bn && bn->requires_grad) {
          bn->ensure_grad();
          for (int co = 0; co < Co; ++co) bn->grad[co] += G.row(co).sum();
        }
      }
    };
  }
  check_finite(out, "conv2d");
  return out;
}

// x:[N,C,H,W]; per-(sample, group) normalization then per-channel affine.
template <class T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5) {
  if (x.shape().size() != 4) throw std::invalid_argument("group_norm: need 4-D");
  int N = x.shape()[0], C = x.shape()[1];
  std::int64_t hw = static_cast<std::int64_t>(x.shape()[2]) * x.shape()[3];
  if (C % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) throw std::invalid_argument("group_norm: affine shape mismatch");
  int cpg = C / groups;
  std::int64_t gsz = cpg * hw;
  auto out = detail::make_result<T>(x.shape(), {x.node(), gamma.node(), beta.node()});
  const auto &xv = x.val(), &gv = gamma.val(), &bv = beta.val();
  auto& ov = out.val();
  std::vector<T> xhat(xv.size());
  std::vector<T> inv_sigma(static_cast<size_t>(N) * groups);
  for (int n = 0; n < N; ++n)
    for (int g = 0; g < groups; ++g) {
      std::int64_t base = (static_cast<std::int64_t>(n) * C + static_cast<std::int64_t>(g) * cpg) * hw;
      double mean = 0;
      for (std::int64_t i = 0; i < gsz; ++i) mean += xv[base + i];
      mean /= gsz;
      double var = 0;
      for (std::int64_t i = 0; i < gsz; ++i) { double d = xv[base + i] - mean; var += d * d; }
      var /= gsz;
      T is = static_cast<T>(1.0 / std::sqrt(var + eps));
      inv_sigma[static_cast<size_t>(n) * groups + g] = is;
      for (std::int64_t i = 0; i < gsz; ++i) {
        T xh = (xv[base + i] - static_cast<T>(mean)) * is;
        xhat[base + i] = xh;
        int c = g * cpg + static_cast<int>(i / hw);
        ov[base + i] = xh * gv[c] + bv[c];
      }
    }
  if (out.requires_grad()) {
    auto xn = x.node(); auto gn = gamma.node(); auto btn = beta.node();
    out.node()->backprop = [xn, gn, btn, xhat, inv_sigma, N, C, groups, cpg, hw, gsz](Node<T>& self) {
      for (int n = 0; n < N; ++n)
        for (int g = 0; g < groups; ++g) {
          std::int64_t base = (static_cast<std::int64_t>(n) * C + static_cast<std::int64_t>(g) * cpg) * hw;
          if (gn->requires_grad) {
            gn->ensure_grad();
            for (std::int64_t i = 0; i < gsz; ++i)
              gn->grad[g * cpg + i / hw] += self.grad[base + i] * xhat[base + i];
          }
          if (btn->requires_grad) {
            btn->ensure_grad();
            for (std::int64_t i = 0; i < gsz; ++i)
              btn->grad[g * cpg + i / hw] += self.grad[base + i];
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            double sum_dxh = 0, sum_dxh_xh = 0;
            for (std::int64_t i = 0; i < gsz; ++i) {
              int c = g * cpg + static_cast<int>(i / hw);
              double dxh = static_cast<double>(self.grad[base + i]) * gn->val[c];
              sum_dxh += dxh;
              sum_dxh_xh += dxh * xhat[base + i];
            }
            double m1 = sum_dxh / gsz, m2 = sum_dxh_xh / gsz;
            T is = inv_sigma[static_cast<size_t>(n) * groups + g];
            for (std::int64_t i = 0; i < gsz; ++i) {
              int c = g * cpg + static_cast<int>(i / hw);
              double dxh = static_cast<double>(self.grad[base + i]) * gn->val[c];
              xn->grad[base + i] += static_cast<T>(is * (dxh - m1 - xhat[base + i] * m2));
            }
          }
        }
    };
  }
  check_finite(out, "group_norm");
  return out;
}

// Nearest-neighbour 2x upsampling, x:[N,C,H,W] -> [N,C,2H,2W].
template <class T>
Tensor<T> upsample_nearest2(const Tensor<T>& x) {
  if (x.shape().size() != 4) throw std::invalid_argument("upsample_nearest2: need 4-D");
  int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  auto out = detail::make_result<T>({N, C, 2 * H, 2 * W}, {x.node()});
  const auto& xv = x.val();
  auto& ov = out.val();
  for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc)
    for (int i = 0; i < 2 * H; ++i)
      for (int j = 0; j < 2 * W; ++j)
        ov[(nc * 2 * H + i) * 2 * W + j] = xv[(nc * H + i / 2) * W + j / 2];
  if (out.requires_grad()) {
    auto xn = x.node();
    out.node()->backprop = [xn, N, C, H, W](Node<T>& self) {
      xn->ensure_grad();
      for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc)
        for (int i = 0; i < 2 * H; ++i)
          for (int j = 0; j < 2 * W; ++j)
            xn->grad[(nc * H + i / 2) * W + j / 2] += self.grad[(nc * 2 * H + i) * 2 * W + j];
    };
  }
  return out;
}

// Mean over spatial dims, x:[N,C,H,W] -> [N,C].
template <class T>
Tensor<T> spatial_mean(const Tensor<T>& x) {
  if (x.shape().size() != 4) throw std::invalid_argument("spatial_mean: need 4-D");
  int N = x.shape()[0], C = x.shape()[1];
  std::int64_t hw = static_cast<std::int64_t>(x.shape()[2]) * x.shape()[3];
  auto out = detail::make_result<T>({N, C}, {x.node()});
  const auto& xv = x.val();
  auto& ov = out.val();
  for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc) {
    T acc = 0;
    for (std::int64_t i = 0; i < hw; ++i) acc += xv[nc * hw + i];
    ov[nc] = acc / static_cast<T>(hw);
  }
  if (out.requires_grad()) {
    auto xn = x.node();
    out.node()->backprop = [xn, hw](Node<T>& self) {
      xn->ensure_grad();
      for (size_t nc = 0; nc < self.grad.size(); ++nc) {
        T g = self.grad[nc] / static_cast<T>(hw);
        for (std::int64_t i = 0; i < hw; ++i) xn->grad[nc * hw + i] += g;
      }
    };
  }
  return out;
}

// ---- reductions / losses ----

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  auto out = detail::make_result<T>({1}, {x.node()});
  T acc = 0;
  for (T v : x.val()) acc += v;
  out.val()[0] = acc;
  if (out.requires_grad()) {
    auto xn = x.node();
    out.node()->backprop = [xn](Node<T>& self) {
      xn->ensure_grad();
      for (auto& g : xn->grad) g += self.grad[0];
    };
  }
  return out;
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

template <class T>
Tensor<T> mse_loss(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("mse_loss: shape mismatch");
  auto d = sub(a, b);
  return mean_all(mul(d, d));
}

// Numerically stable mean BCE between logits and targets in [0,1].
template <class T>
Tensor<T> bce_with_logits_mean(const Tensor<T>& logits, const Tensor<T>& targets) {
  if (logits.shape() != targets.shape()) throw std::invalid_argument("bce: shape mismatch");
  auto out = detail::make_result<T>({1}, {logits.node(), targets.node()});
  const auto &lv = logits.val(), &tv = targets.val();
  double acc = 0;
  for (size_t i = 0; i < lv.size(); ++i) {
    double l = lv[i], t = tv[i];
    acc += std::max(l, 0.0) - l * t + std::log1p(std::exp(-std::abs(l)));
  }
  out.val()[0] = static_cast<T>(acc / lv.size());
  if (out.requires_grad()) {
    auto ln = logits.node(); auto tn = targets.node();
    out.node()->backprop = [ln, tn](Node<T>& self) {
      size_t n = ln->val.size();
      if (ln->requires_grad) {
        ln->ensure_grad();
        for (size_t i = 0; i < n; ++i) {
          double s = 1.0 / (1.0 + std::exp(-static_cast<double>(ln->val[i])));
          ln->grad[i] += self.grad[0] * static_cast<T>((s - tn->val[i]) / n);
        }
      }
      if (tn->requires_grad) {
        tn->ensure_grad();
        for (size_t i = 0; i < n; ++i)
          tn->grad[i] += self.grad[0] * static_cast<T>(-ln->val[i] / n);
      }
    };
  }
  check_finite(out, "bce_with_logits");
  return out;
}

// ---- backward pass ----

template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
  if (!loss.requires_grad()) return;

  // Iterative reverse topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backprop) {
      node->ensure_grad();
      node->backprop(*node);
    }
  }
}

template <class T>
void zero_grad(const std::vector<Tensor<T>>& params) {
  for (const auto& p : params) {
    auto n = p.node();
    n->grad.assign(n->val.size(), T(0));
  }
}

// ---- gradient checking ----

// Central finite differences against recorded gradients. Returns the max
// relative error over every coordinate of every parameter. Use double
// tensors; float is too noisy for finite differences.
template <class T>
double grad_check(const std::function<Tensor<T>()>& f, const std::vector<Tensor<T>>& params, double eps = 1e-5) {
  zero_grad(params);
  auto loss = f();
  backward(loss);
  std::vector<std::vector<T>> ad;
  for (const auto& p : params) ad.push_back(p.node()->grad);

  double max_rel = 0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& v = params[pi].node()->val;
    for (size_t i = 0; i < v.size(); ++i) {
      T orig = v[i];
      v[i] = orig + static_cast<T>(eps);
      double fp = static_cast<double>(f().item());
      v[i] = orig - static_cast<T>(eps);
      double fm = static_cast<double>(f().item());
      v[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw std::runtime_error("grad_check: non-finite loss at param " + std::to_string(pi) + " coord " + std::to_string(i));
      double fd = (fp - fm) / (2 * eps);
      double g = static_cast<double>(ad[pi].empty() ? T(0) : ad[pi][i]);
      double rel = std::abs(g - fd) / std::max(1e-8, std::abs(g) + std::abs(fd));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

// ---- optimizer ----

// AdamW: decoupled weight decay, bias-corrected moments.
template <class T>
class AdamW {
 public:
  AdamW(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step(const std::vector<Tensor<T>>& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
      }
    }
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t pi = 0; pi < params.size(); ++pi) {
      auto n = params[pi].node();
      n->ensure_grad();
      for (size_t i = 0; i < n->val.size(); ++i) {
        double g = n->grad[i];
        m_[pi][i] = beta1_ * m_[pi][i] + (1 - beta1_) * g;
        v_[pi][i] = beta2_ * v_[pi][i] + (1 - beta2_) * g * g;
        double mhat = m_[pi][i] / bc1, vhat = v_[pi][i] / bc2;
        double upd = mhat / (std::sqrt(vhat) + eps_) + wd_ * n->val[i];
        n->val[i] -= static_cast<T>(lr_ * upd);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_, wd_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace mvdpp::nc
