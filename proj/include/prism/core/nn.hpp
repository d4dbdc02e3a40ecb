#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "prism/core/ops.hpp"
#include "prism/core/rng.hpp"
#include "prism/core/spatial_ops.hpp"

namespace prism::nn {

using ops::LevelShape;

template <class T>
Mat<T> xavier_uniform(Rng& rng, int rows, int cols, double gain = 1.0) {
  const double a = gain * std::sqrt(6.0 / (rows + cols));
  return rng.uniform_mat<T>(rows, cols, -a, a);
}

template <class T>
struct Linear {
  Param<T>* weight = nullptr;  // in x out
  Param<T>* bias = nullptr;    // 1 x out

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, int in, int out, Rng& rng,
         bool zero_init = false) {
    weight = store.create(name + ".weight",
                          zero_init ? Mat<T>::Zero(in, out)
                                    : xavier_uniform<T>(rng, in, out));
    bias = store.create(name + ".bias", Mat<T>::Zero(1, out));
  }

  Var operator()(Graph<T>& g, Var x) const {
    return ops::add_rowvec(g, ops::matmul(g, x, g.param(*weight)), g.param(*bias));
  }
};

template <class T>
struct Mlp {
  std::vector<Linear<T>> layers;

  Mlp() = default;
  Mlp(ParamStore<T>& store, const std::string& name, int in, int hidden, int out,
      int n_layers, Rng& rng, bool zero_init_last = false) {
    for (int i = 0; i < n_layers; ++i) {
      const int li = i == 0 ? in : hidden;
      const int lo = i == n_layers - 1 ? out : hidden;
      layers.emplace_back(store, name + ".l" + std::to_string(i), li, lo, rng,
                          zero_init_last && i == n_layers - 1);
    }
  }

  Var operator()(Graph<T>& g, Var x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](g, x);
      if (i + 1 < layers.size()) x = ops::relu(g, x);
    }
    return x;
  }
};

template <class T>
struct LayerNorm {
  Param<T>* gamma = nullptr;
  Param<T>* beta = nullptr;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, int d) {
    gamma = store.create(name + ".gamma", Mat<T>::Ones(1, d));
    beta = store.create(name + ".beta", Mat<T>::Zero(1, d));
  }

  Var operator()(Graph<T>& g, Var x) const {
    return ops::layer_norm(g, x, g.param(*gamma), g.param(*beta));
  }
};

template <class T>
struct Embedding {
  Param<T>* table = nullptr;  // V x d

  Embedding() = default;
  Embedding(ParamStore<T>& store, const std::string& name, int count, int d, Rng& rng) {
    table = store.create(name + ".table", rng.normal_mat<T>(count, d, 0.0, 0.02));
  }

  Var operator()(Graph<T>& g, const std::vector<int>& ids) const {
    return ops::gather_rows(g, g.param(*table), ids);
  }

  Var all(Graph<T>& g) const { return g.param(*table); }
};

// Scaled dot-product multi-head attention. Positional terms are the caller's
// responsibility (add them to q/k before the call).
template <class T>
struct MultiheadAttention {
  Linear<T> wq, wk, wv, wo;
  int heads = 1;

  MultiheadAttention() = default;
  MultiheadAttention(ParamStore<T>& store, const std::string& name, int d, int n_heads,
                     Rng& rng)
      : wq(store, name + ".q", d, d, rng),
        wk(store, name + ".k", d, d, rng),
        wv(store, name + ".v", d, d, rng),
        wo(store, name + ".o", d, d, rng),
        heads(n_heads) {}

  Var operator()(Graph<T>& g, Var q, Var k, Var v) const {
    const int d = static_cast<int>(g.val(q).cols());
    const int dh = d / heads;
    Var Q = wq(g, q);
    Var K = wk(g, k);
    Var V = wv(g, v);
    std::vector<Var> outs;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    for (int h = 0; h < heads; ++h) {
      Var Qh = ops::slice_cols(g, Q, h * dh, dh);
      Var Kh = ops::slice_cols(g, K, h * dh, dh);
      Var Vh = ops::slice_cols(g, V, h * dh, dh);
      Var logits = ops::scale(g, ops::matmul(g, Qh, Kh, false, true), inv_sqrt);
      Var att = ops::softmax_rows(g, logits);
      outs.push_back(ops::matmul(g, att, Vh));
    }
    return wo(g, ops::concat_cols(g, outs));
  }
};

// A feature map travelling through the graph together with its raster shape.
template <class T>
struct FeatureMap {
  Var tokens;  // (H*W) x C
  int H = 0;
  int W = 0;
};

template <class T>
struct Conv2d {
  Param<T>* weight = nullptr;  // (Cin*k*k) x Cout
  Param<T>* bias = nullptr;
  int ksize = 3, stride = 1, pad = 1;

  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, int cin, int cout, int k,
         int s, int p, Rng& rng)
      : ksize(k), stride(s), pad(p) {
    weight = store.create(name + ".weight", xavier_uniform<T>(rng, cin * k * k, cout));
    bias = store.create(name + ".bias", Mat<T>::Zero(1, cout));
  }

  FeatureMap<T> operator()(Graph<T>& g, const FeatureMap<T>& x) const {
    Var cols = ops::im2col(g, x.tokens, x.H, x.W, ksize, stride, pad);
    Var y = ops::add_rowvec(g, ops::matmul(g, cols, g.param(*weight)), g.param(*bias));
    const int Ho = (x.H + 2 * pad - ksize) / stride + 1;
    const int Wo = (x.W + 2 * pad - ksize) / stride + 1;
    return {y, Ho, Wo};
  }
};

}  // namespace prism::nn
