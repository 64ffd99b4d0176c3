#pragma once

// Small trainable layer wrappers over the tensor ops, plus a parameter
// registry used for checkpoints and optimizers.

#include "mvdpp/nc/tensor.hpp"

#include <string>
#include <utility>
#include <vector>

namespace mvdpp::nc {

template <class T>
struct ParamList {
  std::vector<std::pair<std::string, Tensor<T>>> items;

  Tensor<T> reg(const std::string& name, Tensor<T> t) {
    t.as_param();
    items.emplace_back(name, t);
    return t;
  }
  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (const auto& [n, t] : items) out.push_back(t);
    return out;
  }
};

template <class T, class Rng>
Tensor<T> he_init(Shape s, std::int64_t fan_in, Rng& rng) {
  return Tensor<T>::randn(std::move(s), rng, static_cast<T>(std::sqrt(2.0 / fan_in)));
}

template <class T>
struct Conv2dLayer {
  Tensor<T> w, b;
  int stride = 1, pad = 1;

  template <class Rng>
  static Conv2dLayer make(ParamList<T>& params, const std::string& name, int cin, int cout, int k,
                          int stride, int pad, Rng& rng) {
    Conv2dLayer l;
    l.w = params.reg(name + ".w", he_init<T>({cout, cin, k, k}, static_cast<std::int64_t>(cin) * k * k, rng));
    l.b = params.reg(name + ".b", Tensor<T>::zeros({cout}));
    l.stride = stride;
    l.pad = pad;
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, w, b, stride, pad); }
};

template <class T>
struct GroupNormLayer {
  Tensor<T> gamma, beta;
  int groups = 8;

  static GroupNormLayer make(ParamList<T>& params, const std::string& name, int channels, int groups) {
    GroupNormLayer l;
    l.gamma = params.reg(name + ".gamma", Tensor<T>::filled({channels}, T(1)));
    l.beta = params.reg(name + ".beta", Tensor<T>::zeros({channels}));
    l.groups = groups;
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return group_norm(x, groups, gamma, beta); }
};

template <class T>
struct LinearLayer {
  Tensor<T> w, b;  // w: [out, in]

  template <class Rng>
  static LinearLayer make(ParamList<T>& params, const std::string& name, int in, int out, Rng& rng) {
    LinearLayer l;
    l.w = params.reg(name + ".w", he_init<T>({out, in}, in, rng));
    l.b = params.reg(name + ".b", Tensor<T>::zeros({out}));
    return l;
  }

  // For projections where a bias is a structural no-op (e.g. attention keys:
  // a constant added to every key cancels in the softmax).
  template <class Rng>
  static LinearLayer make_no_bias(ParamList<T>& params, const std::string& name, int in, int out, Rng& rng) {
    LinearLayer l;
    l.w = params.reg(name + ".w", he_init<T>({out, in}, in, rng));
    return l;
  }

  // x: [S, in] -> [S, out]
  Tensor<T> operator()(const Tensor<T>& x) const {
    auto y = matmul(x, transpose2d(w));
    return b.defined() ? add_row_bias(y, b) : y;
  }
};

}  // namespace mvdpp::nc
