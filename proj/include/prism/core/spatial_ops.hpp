#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "prism/core/ops.hpp"

namespace prism::ops {

// Feature maps are stored as (H*W) x C matrices, pixel index = y*W + x.

// Patch extraction for k x k convolution with zero padding. Column layout of
// the output is (c * k + ky) * k + kx.
template <class T>
Var im2col(Graph<T>& g, Var x, int H, int W, int k, int stride, int pad) {
  const Mat<T>& X = g.val(x);
  const int C = static_cast<int>(X.cols());
  if (X.rows() != static_cast<Eigen::Index>(H) * W)
    throw std::invalid_argument("im2col: rows != H*W");
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  Mat<T> y = Mat<T>::Zero(static_cast<Eigen::Index>(Ho) * Wo, C * k * k);
  for (int oy = 0; oy < Ho; ++oy)
    for (int ox = 0; ox < Wo; ++ox) {
      const Eigen::Index orow = static_cast<Eigen::Index>(oy) * Wo + ox;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= H) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= W) continue;
          const Eigen::Index irow = static_cast<Eigen::Index>(iy) * W + ix;
          for (int c = 0; c < C; ++c)
            y(orow, (c * k + ky) * k + kx) = X(irow, c);
        }
      }
    }
  return make_op<T>(g, std::move(y), g.needs_grad(x),
                    [x, H, W, k, stride, pad](Graph<T>& gg, Var o) {
                      const Mat<T>& G = gg.grad(o);
                      const int C = static_cast<int>(gg.val(x).cols());
                      const int Ho = (H + 2 * pad - k) / stride + 1;
                      const int Wo = (W + 2 * pad - k) / stride + 1;
                      Mat<T> dx = Mat<T>::Zero(gg.val(x).rows(), C);
                      for (int oy = 0; oy < Ho; ++oy)
                        for (int ox = 0; ox < Wo; ++ox) {
                          const Eigen::Index orow = static_cast<Eigen::Index>(oy) * Wo + ox;
                          for (int ky = 0; ky < k; ++ky) {
                            const int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= H) continue;
                            for (int kx = 0; kx < k; ++kx) {
                              const int ix = ox * stride + kx - pad;
                              if (ix < 0 || ix >= W) continue;
                              const Eigen::Index irow = static_cast<Eigen::Index>(iy) * W + ix;
                              for (int c = 0; c < C; ++c)
                                dx(irow, c) += G(orow, (c * k + ky) * k + kx);
                            }
                          }
                        }
                      gg.accumulate(x, dx);
                    });
}

namespace detail {

struct ResizeTap {
  int src;
  double w;
};

// align_corners=false sampling; constants are preserved exactly because the
// four taps always sum to 1.
inline std::vector<std::array<ResizeTap, 4>> resize_plan(int H, int W, int Ho, int Wo) {
  std::vector<std::array<ResizeTap, 4>> plan(static_cast<std::size_t>(Ho) * Wo);
  const double sy = static_cast<double>(H) / Ho;
  const double sx = static_cast<double>(W) / Wo;
  for (int oy = 0; oy < Ho; ++oy)
    for (int ox = 0; ox < Wo; ++ox) {
      double py = (oy + 0.5) * sy - 0.5;
      double px = (ox + 0.5) * sx - 0.5;
      const int y0 = static_cast<int>(std::floor(py));
      const int x0 = static_cast<int>(std::floor(px));
      const double fy = py - y0;
      const double fx = px - x0;
      auto cl = [](int v, int hi) { return std::min(std::max(v, 0), hi); };
      const int y0c = cl(y0, H - 1), y1c = cl(y0 + 1, H - 1);
      const int x0c = cl(x0, W - 1), x1c = cl(x0 + 1, W - 1);
      auto& taps = plan[static_cast<std::size_t>(oy) * Wo + ox];
      taps[0] = {y0c * W + x0c, (1 - fy) * (1 - fx)};
      taps[1] = {y0c * W + x1c, (1 - fy) * fx};
      taps[2] = {y1c * W + x0c, fy * (1 - fx)};
      taps[3] = {y1c * W + x1c, fy * fx};
    }
  return plan;
}

}  // namespace detail

template <class T>
Var bilinear_resize(Graph<T>& g, Var x, int H, int W, int Ho, int Wo) {
  const Mat<T>& X = g.val(x);
  if (X.rows() != static_cast<Eigen::Index>(H) * W)
    throw std::invalid_argument("bilinear_resize: rows != H*W");
  auto plan = std::make_shared<std::vector<std::array<detail::ResizeTap, 4>>>(
      detail::resize_plan(H, W, Ho, Wo));
  Mat<T> y = Mat<T>::Zero(static_cast<Eigen::Index>(Ho) * Wo, X.cols());
  for (std::size_t i = 0; i < plan->size(); ++i)
    for (const auto& t : (*plan)[i])
      y.row(i) += static_cast<T>(t.w) * X.row(t.src);
  return make_op<T>(g, std::move(y), g.needs_grad(x),
                    [x, plan](Graph<T>& gg, Var o) {
                      const Mat<T>& G = gg.grad(o);
                      Mat<T> dx = Mat<T>::Zero(gg.val(x).rows(), gg.val(x).cols());
                      for (std::size_t i = 0; i < plan->size(); ++i)
                        for (const auto& t : (*plan)[i])
                          dx.row(t.src) += static_cast<T>(t.w) * G.row(i);
                      gg.accumulate(x, dx);
                    });
}

struct LevelShape {
  int H = 0;
  int W = 0;
  int row_offset = 0;  // first row of this level inside the flattened stack
};

// Multi-scale deformable attention sampling.
//   value: M x d flattened pyramid (all levels stacked), d = heads * dh
//   locs:  n x (heads*L*K*2) normalized (x,y) in [0,1]
//   attw:  n x (heads*L*K) weights, already normalized per head
// Output n x d: out[i, h] = sum_{l,k} attw * bilinear(value_l^h, loc).
// Samples are clamped to the border; the location gradient vanishes there.
template <class T>
Var ms_deform_sample(Graph<T>& g, Var value, std::vector<LevelShape> shapes,
                     Var locs, Var attw, int heads) {
  const Mat<T>& V = g.val(value);
  const Mat<T>& P = g.val(locs);
  const Mat<T>& A = g.val(attw);
  const int d = static_cast<int>(V.cols());
  const int dh = d / heads;
  const int L = static_cast<int>(shapes.size());
  const int n = static_cast<int>(P.rows());
  const int K = static_cast<int>(A.cols()) / (heads * L);
  if (d % heads != 0) throw std::invalid_argument("ms_deform_sample: d % heads");
  if (P.cols() != 2 * A.cols())
    throw std::invalid_argument("ms_deform_sample: locs/attw mismatch");

  auto sh = std::make_shared<std::vector<LevelShape>>(std::move(shapes));
  auto corner = [](const LevelShape& s, int yy, int xx) {
    return s.row_offset + yy * s.W + xx;
  };
  auto sample_setup = [&](const LevelShape& s, T x, T y, int& x0c, int& x1c,
                          int& y0c, int& y1c, T& fx, T& fy) {
    const T px = x * static_cast<T>(s.W) - T(0.5);
    const T py = y * static_cast<T>(s.H) - T(0.5);
    const int x0 = static_cast<int>(std::floor(px));
    const int y0 = static_cast<int>(std::floor(py));
    fx = px - static_cast<T>(x0);
    fy = py - static_cast<T>(y0);
    auto cl = [](int v, int hi) { return std::min(std::max(v, 0), hi); };
    x0c = cl(x0, s.W - 1);
    x1c = cl(x0 + 1, s.W - 1);
    y0c = cl(y0, s.H - 1);
    y1c = cl(y0 + 1, s.H - 1);
  };

  Mat<T> out = Mat<T>::Zero(n, d);
  for (int i = 0; i < n; ++i) {
    for (int h = 0; h < heads; ++h) {
      for (int l = 0; l < L; ++l) {
        const LevelShape& s = (*sh)[l];
        for (int k = 0; k < K; ++k) {
          const int p = (h * L + l) * K + k;
          const T w = A(i, p);
          int x0c, x1c, y0c, y1c;
          T fx, fy;
          sample_setup(s, P(i, 2 * p), P(i, 2 * p + 1), x0c, x1c, y0c, y1c, fx, fy);
          const int r00 = corner(s, y0c, x0c), r01 = corner(s, y0c, x1c);
          const int r10 = corner(s, y1c, x0c), r11 = corner(s, y1c, x1c);
          for (int c = 0; c < dh; ++c) {
            const int col = h * dh + c;
            const T v = (T(1) - fy) * ((T(1) - fx) * V(r00, col) + fx * V(r01, col)) +
                        fy * ((T(1) - fx) * V(r10, col) + fx * V(r11, col));
            out(i, col) += w * v;
          }
        }
      }
    }
  }

  const bool ng = g.needs_grad(value) || g.needs_grad(locs) || g.needs_grad(attw);
  return make_op<T>(g, std::move(out), ng, [value, locs, attw, sh, heads, dh, L, K,
                                            corner, sample_setup](Graph<T>& gg, Var o) {
    const Mat<T>& V = gg.val(value);
    const Mat<T>& P = gg.val(locs);
    const Mat<T>& A = gg.val(attw);
    const Mat<T>& G = gg.grad(o);
    const int n = static_cast<int>(P.rows());
    const bool need_v = gg.needs_grad(value);
    const bool need_p = gg.needs_grad(locs);
    const bool need_a = gg.needs_grad(attw);
    Mat<T> dV, dP, dA;
    if (need_v) dV = Mat<T>::Zero(V.rows(), V.cols());
    if (need_p) dP = Mat<T>::Zero(P.rows(), P.cols());
    if (need_a) dA = Mat<T>::Zero(A.rows(), A.cols());
    for (int i = 0; i < n; ++i)
      for (int h = 0; h < heads; ++h)
        for (int l = 0; l < L; ++l) {
          const LevelShape& s = (*sh)[l];
          for (int k = 0; k < K; ++k) {
            const int p = (h * L + l) * K + k;
            const T w = A(i, p);
            int x0c, x1c, y0c, y1c;
            T fx, fy;
            sample_setup(s, P(i, 2 * p), P(i, 2 * p + 1), x0c, x1c, y0c, y1c, fx, fy);
            const int r00 = corner(s, y0c, x0c), r01 = corner(s, y0c, x1c);
            const int r10 = corner(s, y1c, x0c), r11 = corner(s, y1c, x1c);
            T dw = T(0), dfx = T(0), dfy = T(0);
            for (int c = 0; c < dh; ++c) {
              const int col = h * dh + c;
              const T go = G(i, col);
              if (go == T(0)) continue;
              const T v00 = V(r00, col), v01 = V(r01, col);
              const T v10 = V(r10, col), v11 = V(r11, col);
              const T v = (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) +
                          fy * ((T(1) - fx) * v10 + fx * v11);
              dw += go * v;
              const T gwv = go * w;
              if (need_p) {
                dfx += gwv * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
                dfy += gwv * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
              }
              if (need_v) {
                dV(r00, col) += gwv * (T(1) - fy) * (T(1) - fx);
                dV(r01, col) += gwv * (T(1) - fy) * fx;
                dV(r10, col) += gwv * fy * (T(1) - fx);
                dV(r11, col) += gwv * fy * fx;
              }
            }
            if (need_a) dA(i, p) += dw;
            if (need_p) {
              // clamped corners collapse => zero derivative automatically
              dP(i, 2 * p) += dfx * static_cast<T>(s.W);
              dP(i, 2 * p + 1) += dfy * static_cast<T>(s.H);
            }
          }
        }
    if (need_v) gg.accumulate(value, dV);
    if (need_p) gg.accumulate(locs, dP);
    if (need_a) gg.accumulate(attw, dA);
  });
}

}  // namespace prism::ops
