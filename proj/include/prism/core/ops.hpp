#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "prism/core/graph.hpp"

namespace prism::ops {

template <class T>
Var make_op(Graph<T>& g, Mat<T> value, bool needs_grad,
            std::function<void(Graph<T>&, Var)> back) {
  if (!needs_grad) return g.constant(std::move(value));
  Var out{static_cast<int>(g.size())};
  return g.make(std::move(value), true,
                [back = std::move(back), out](Graph<T>& gg) { back(gg, out); });
}

template <class T>
void check_same_shape(const Graph<T>& g, Var a, Var b, const char* what) {
  if (g.val(a).rows() != g.val(b).rows() || g.val(a).cols() != g.val(b).cols())
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

// ---- arithmetic ----

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  check_same_shape(g, a, b, "add");
  const bool ng = g.needs_grad(a) || g.needs_grad(b);
  return make_op<T>(g, g.val(a) + g.val(b), ng, [a, b](Graph<T>& gg, Var out) {
    gg.accumulate(a, gg.grad(out));
    gg.accumulate(b, gg.grad(out));
  });
}

template <class T>
Var sub(Graph<T>& g, Var a, Var b) {
  check_same_shape(g, a, b, "sub");
  const bool ng = g.needs_grad(a) || g.needs_grad(b);
  return make_op<T>(g, g.val(a) - g.val(b), ng, [a, b](Graph<T>& gg, Var out) {
    gg.accumulate(a, gg.grad(out));
    gg.accumulate(b, Mat<T>(-gg.grad(out)));
  });
}

template <class T>
Var mul(Graph<T>& g, Var a, Var b) {
  check_same_shape(g, a, b, "mul");
  const bool ng = g.needs_grad(a) || g.needs_grad(b);
  return make_op<T>(g, g.val(a).cwiseProduct(g.val(b)), ng,
                    [a, b](Graph<T>& gg, Var out) {
                      gg.accumulate(a, gg.grad(out).cwiseProduct(gg.val(b)));
                      gg.accumulate(b, gg.grad(out).cwiseProduct(gg.val(a)));
                    });
}

template <class T>
Var neg(Graph<T>& g, Var a) {
  return make_op<T>(g, Mat<T>(-g.val(a)), g.needs_grad(a),
                    [a](Graph<T>& gg, Var out) {
                      gg.accumulate(a, Mat<T>(-gg.grad(out)));
                    });
}

template <class T>
Var scale(Graph<T>& g, Var a, T s) {
  return make_op<T>(g, Mat<T>(g.val(a) * s), g.needs_grad(a),
                    [a, s](Graph<T>& gg, Var out) {
                      gg.accumulate(a, Mat<T>(gg.grad(out) * s));
                    });
}

template <class T>
Var add_scalar(Graph<T>& g, Var a, T s) {
  return make_op<T>(g, Mat<T>(g.val(a).array() + s), g.needs_grad(a),
                    [a](Graph<T>& gg, Var out) {
                      gg.accumulate(a, gg.grad(out));
                    });
}

template <class T>
Var matmul(Graph<T>& g, Var a, Var b, bool ta = false, bool tb = false) {
  const Mat<T>& A = g.val(a);
  const Mat<T>& B = g.val(b);
  Mat<T> out;
  if (!ta && !tb) out = A * B;
  else if (ta && !tb) out = A.transpose() * B;
  else if (!ta && tb) out = A * B.transpose();
  else out = A.transpose() * B.transpose();
  const bool ng = g.needs_grad(a) || g.needs_grad(b);
  return make_op<T>(g, std::move(out), ng, [a, b, ta, tb](Graph<T>& gg, Var o) {
    const Mat<T>& G = gg.grad(o);
    const Mat<T>& A = gg.val(a);
    const Mat<T>& B = gg.val(b);
    if (gg.needs_grad(a)) {
      if (!ta && !tb) gg.accumulate(a, Mat<T>(G * B.transpose()));
      else if (ta && !tb) gg.accumulate(a, Mat<T>(B * G.transpose()));
      else if (!ta && tb) gg.accumulate(a, Mat<T>(G * B));
      else gg.accumulate(a, Mat<T>(B.transpose() * G.transpose()));
    }
    if (gg.needs_grad(b)) {
      if (!ta && !tb) gg.accumulate(b, Mat<T>(A.transpose() * G));
      else if (ta && !tb) gg.accumulate(b, Mat<T>(A * G));
      else if (!ta && tb) gg.accumulate(b, Mat<T>(G.transpose() * A));
      else gg.accumulate(b, Mat<T>(G.transpose() * A.transpose()));
    }
  });
}

template <class T>
Var add_rowvec(Graph<T>& g, Var x, Var b) {
  const Mat<T>& X = g.val(x);
  const Mat<T>& B = g.val(b);
  if (B.rows() != 1 || B.cols() != X.cols())
    throw std::invalid_argument("add_rowvec: need 1 x cols vector");
  Mat<T> out = X.rowwise() + B.row(0);
  const bool ng = g.needs_grad(x) || g.needs_grad(b);
  return make_op<T>(g, std::move(out), ng, [x, b](Graph<T>& gg, Var o) {
    gg.accumulate(x, gg.grad(o));
    gg.accumulate(b, Mat<T>(gg.grad(o).colwise().sum()));
  });
}

template <class T>
Var mul_rowvec(Graph<T>& g, Var x, Var s) {
  const Mat<T>& X = g.val(x);
  const Mat<T>& S = g.val(s);
  if (S.rows() != 1 || S.cols() != X.cols())
    throw std::invalid_argument("mul_rowvec: need 1 x cols vector");
  Mat<T> out = X.array().rowwise() * S.row(0).array();
  const bool ng = g.needs_grad(x) || g.needs_grad(s);
  return make_op<T>(g, std::move(out), ng, [x, s](Graph<T>& gg, Var o) {
    const Mat<T>& G = gg.grad(o);
    if (gg.needs_grad(x))
      gg.accumulate(x, Mat<T>(G.array().rowwise() * gg.val(s).row(0).array()));
    if (gg.needs_grad(s))
      gg.accumulate(s, Mat<T>(G.cwiseProduct(gg.val(x)).colwise().sum()));
  });
}

// ---- reductions ----

template <class T>
Var sum(Graph<T>& g, Var x) {
  return make_op<T>(g, scalar_mat<T>(g.val(x).sum()), g.needs_grad(x),
                    [x](Graph<T>& gg, Var o) {
                      const T go = gg.grad(o)(0, 0);
                      gg.accumulate(x, Mat<T>(Mat<T>::Constant(
                                          gg.val(x).rows(), gg.val(x).cols(), go)));
                    });
}

template <class T>
Var mean(Graph<T>& g, Var x) {
  const T inv = T(1) / static_cast<T>(g.val(x).size());
  return scale(g, sum(g, x), inv);
}

template <class T>
Var rowsum(Graph<T>& g, Var x) {
  Mat<T> out = g.val(x).rowwise().sum();
  return make_op<T>(g, std::move(out), g.needs_grad(x),
                    [x](Graph<T>& gg, Var o) {
                      const Mat<T>& G = gg.grad(o);
                      gg.accumulate(x, Mat<T>(G * Mat<T>::Ones(1, gg.val(x).cols())));
                    });
}

template <class T>
Var colsum(Graph<T>& g, Var x) {
  Mat<T> out = g.val(x).colwise().sum();
  return make_op<T>(g, std::move(out), g.needs_grad(x),
                    [x](Graph<T>& gg, Var o) {
                      const Mat<T>& G = gg.grad(o);
                      gg.accumulate(x, Mat<T>(Mat<T>::Ones(gg.val(x).rows(), 1) * G));
                    });
}

template <class T>
Var colmean(Graph<T>& g, Var x) {
  return scale(g, colsum(g, x), T(1) / static_cast<T>(g.val(x).rows()));
}

template <class T>
Var rowmax(Graph<T>& g, Var x) {
  const Mat<T>& X = g.val(x);
  Mat<T> out(X.rows(), 1);
  auto arg = std::make_shared<std::vector<int>>(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    Eigen::Index j;
    out(i, 0) = X.row(i).maxCoeff(&j);
    (*arg)[i] = static_cast<int>(j);
  }
  return make_op<T>(g, std::move(out), g.needs_grad(x),
                    [x, arg](Graph<T>& gg, Var o) {
                      const Mat<T>& G = gg.grad(o);
                      Mat<T> dx = Mat<T>::Zero(gg.val(x).rows(), gg.val(x).cols());
                      for (Eigen::Index i = 0; i < dx.rows(); ++i)
                        dx(i, (*arg)[i]) += G(i, 0);
                      gg.accumulate(x, dx);
                    });
}

template <class T>
Var colmax(Graph<T>& g, Var x) {
  const Mat<T>& X = g.val(x);
  Mat<T> out(1, X.cols());
  auto arg = std::make_shared<std::vector<int>>(X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    Eigen::Index i;
    out(0, j) = X.col(j).maxCoeff(&i);
    (*arg)[j] = static_cast<int>(i);
  }
  return make_op<T>(g, std::move(out), g.needs_grad(x),
                    [x, arg](Graph<T>& gg, Var o) {
                      const Mat<T>& G = gg.grad(o);
                      Mat<T> dx = Mat<T>::Zero(gg.val(x).rows(), gg.val(x).cols());
                      for (Eigen::Index j = 0; j < dx.cols(); ++j)
                        dx((*arg)[j], j) += G(0, j);
                      gg.accumulate(x, dx);
                    });
}

// ---- elementwise nonlinearities ----

template <class T>
Var sigmoid(Graph<T>& g, Var x) {
  Mat<T> y = (T(1) / (T(1) + (-g.val(x).array()).exp())).matrix();
  return make_op<T>(g, std::move(y), g.needs_grad(x),
                    [x](Graph<T>& gg, Var o) {
                      const Mat<T>& Y = gg.val(o);
                      Mat<T> dx = gg.grad(o).array() * Y.array() * (T(1) - Y.array());
                      gg.accumulate(x, dx);
                    });
}

template <class T>
Var relu(Graph<T>& g, Var x) {
  Mat<T> y = g.val(x).cwiseMax(T(0));
  return make_op<T>(g, std::move(y), g.needs_grad(x),
                    [x](Graph<T>& gg, Var o) {
                      Mat<T> dx = (gg.val(x).array() > T(0))
                                      .select(gg.grad(o), Mat<T>::Zero(gg.val(x).rows(),
                                                                       gg.val(x).cols()));
                      gg.accumulate(x, dx);
                    });
}

template <class T>
Var exp_(Graph<T>& g, Var x) {
  Mat<T> y = g.val(x).array().exp();
  return make_op<T>(g, std::move(y), g.needs_grad(x),
                    [x](Graph<T>& gg, Var o) {
                      gg.accumulate(x, Mat<T>(gg.grad(o).cwiseProduct(gg.val(o))));
                    });
}

template <class T>
Var log_(Graph<T>& g, Var x) {
  Mat<T> y = g.val(x).array().log();
  return make_op<T>(g, std::move(y), g.needs_grad(x),
                    [x](Graph<T>& gg, Var o) {
                      gg.accumulate(x, Mat<T>(gg.grad(o).cwiseQuotient(gg.val(x))));
                    });
}

template <class T>
Var abs_(Graph<T>& g, Var x) {
  Mat<T> y = g.val(x).cwiseAbs();
  return make_op<T>(g, std::move(y), g.needs_grad(x),
                    [x](Graph<T>& gg, Var o) {
                      Mat<T> sign = gg.val(x).array().sign();
                      gg.accumulate(x, Mat<T>(gg.grad(o).cwiseProduct(sign)));
                    });
}

template <class T>
Var sqrt_(Graph<T>& g, Var x) {
  Mat<T> y = g.val(x).cwiseSqrt();
  return make_op<T>(g, std::move(y), g.needs_grad(x),
                    [x](Graph<T>& gg, Var o) {
                      Mat<T> dx = gg.grad(o).array() * T(0.5) / gg.val(o).array();
                      gg.accumulate(x, dx);
                    });
}

// x must stay positive; exponent may be fractional.
template <class T>
Var pow_const(Graph<T>& g, Var x, T p) {
  Mat<T> y = g.val(x).array().pow(p);
  return make_op<T>(g, std::move(y), g.needs_grad(x),
                    [x, p](Graph<T>& gg, Var o) {
                      Mat<T> dx = gg.grad(o).array() * p *
                                  gg.val(x).array().pow(p - T(1));
                      gg.accumulate(x, dx);
                    });
}

// Gradient passes only where lo < x < hi.
template <class T>
Var clamp(Graph<T>& g, Var x, T lo, T hi) {
  Mat<T> y = g.val(x).cwiseMax(lo).cwiseMin(hi);
  return make_op<T>(g, std::move(y), g.needs_grad(x),
                    [x, lo, hi](Graph<T>& gg, Var o) {
                      const Mat<T>& X = gg.val(x);
                      Mat<T> dx = gg.grad(o);
                      for (Eigen::Index i = 0; i < X.size(); ++i)
                        if (X(i) <= lo || X(i) >= hi) dx(i) = T(0);
                      gg.accumulate(x, dx);
                    });
}

// Elementwise max; ties route the gradient to a.
template <class T>
Var emax(Graph<T>& g, Var a, Var b) {
  check_same_shape(g, a, b, "emax");
  Mat<T> y = g.val(a).cwiseMax(g.val(b));
  const bool ng = g.needs_grad(a) || g.needs_grad(b);
  return make_op<T>(g, std::move(y), ng, [a, b](Graph<T>& gg, Var o) {
    const Mat<T>& A = gg.val(a);
    const Mat<T>& B = gg.val(b);
    const Mat<T>& G = gg.grad(o);
    Mat<T> da = Mat<T>::Zero(A.rows(), A.cols());
    Mat<T> db = da;
    for (Eigen::Index i = 0; i < A.size(); ++i) {
      if (A(i) >= B(i)) da(i) = G(i);
      else db(i) = G(i);
    }
    gg.accumulate(a, da);
    gg.accumulate(b, db);
  });
}

template <class T>
Var emin(Graph<T>& g, Var a, Var b) {
  check_same_shape(g, a, b, "emin");
  Mat<T> y = g.val(a).cwiseMin(g.val(b));
  const bool ng = g.needs_grad(a) || g.needs_grad(b);
  return make_op<T>(g, std::move(y), ng, [a, b](Graph<T>& gg, Var o) {
    const Mat<T>& A = gg.val(a);
    const Mat<T>& B = gg.val(b);
    const Mat<T>& G = gg.grad(o);
    Mat<T> da = Mat<T>::Zero(A.rows(), A.cols());
    Mat<T> db = da;
    for (Eigen::Index i = 0; i < A.size(); ++i) {
      if (A(i) <= B(i)) da(i) = G(i);
      else db(i) = G(i);
    }
    gg.accumulate(a, da);
    gg.accumulate(b, db);
  });
}

// log(p / (1-p)) with p clamped away from {0,1}.
template <class T>
Var inverse_sigmoid(Graph<T>& g, Var p, T eps = T(1e-5)) {
  const Mat<T>& P = g.val(p);
  Mat<T> y(P.rows(), P.cols());
  for (Eigen::Index i = 0; i < P.size(); ++i) {
    const T c = std::min(std::max(P(i), eps), T(1) - eps);
    y(i) = std::log(c / (T(1) - c));
  }
  return make_op<T>(g, std::move(y), g.needs_grad(p),
                    [p, eps](Graph<T>& gg, Var o) {
                      const Mat<T>& P = gg.val(p);
                      Mat<T> dx = gg.grad(o);
                      for (Eigen::Index i = 0; i < P.size(); ++i) {
                        if (P(i) <= eps || P(i) >= T(1) - eps) dx(i) = T(0);
                        else dx(i) /= P(i) * (T(1) - P(i));
                      }
                      gg.accumulate(p, dx);
                    });
}

// ---- softmax ----

template <class T>
Var softmax_rows(Graph<T>& g, Var x) {
  const Mat<T>& X = g.val(x);
  Mat<T> y(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    auto row = X.row(i).array() - X.row(i).maxCoeff();
    auto e = row.exp();
    y.row(i) = e / e.sum();
  }
  return make_op<T>(g, std::move(y), g.needs_grad(x),
                    [x](Graph<T>& gg, Var o) {
                      const Mat<T>& Y = gg.val(o);
                      const Mat<T>& G = gg.grad(o);
                      Mat<T> dx(Y.rows(), Y.cols());
                      for (Eigen::Index i = 0; i < Y.rows(); ++i) {
                        const T dot = G.row(i).cwiseProduct(Y.row(i)).sum();
                        dx.row(i) = (G.row(i).array() - dot) * Y.row(i).array();
                      }
                      gg.accumulate(x, dx);
                    });
}

// Softmax within each consecutive block of `group` columns, per row.
template <class T>
Var softmax_rows_grouped(Graph<T>& g, Var x, int group) {
  const Mat<T>& X = g.val(x);
  if (X.cols() % group != 0)
    throw std::invalid_argument("softmax_rows_grouped: cols not divisible");
  Mat<T> y(X.rows(), X.cols());
  const int blocks = static_cast<int>(X.cols()) / group;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (int b = 0; b < blocks; ++b) {
      auto seg = X.row(i).segment(b * group, group).array();
      auto e = (seg - seg.maxCoeff()).exp();
      y.row(i).segment(b * group, group) = e / e.sum();
    }
  return make_op<T>(g, std::move(y), g.needs_grad(x),
                    [x, group](Graph<T>& gg, Var o) {
                      const Mat<T>& Y = gg.val(o);
                      const Mat<T>& G = gg.grad(o);
                      Mat<T> dx(Y.rows(), Y.cols());
                      const int blocks = static_cast<int>(Y.cols()) / group;
                      for (Eigen::Index i = 0; i < Y.rows(); ++i)
                        for (int b = 0; b < blocks; ++b) {
                          auto ys = Y.row(i).segment(b * group, group).array();
                          auto gs = G.row(i).segment(b * group, group).array();
                          const T dot = (ys * gs).sum();
                          dx.row(i).segment(b * group, group) = (gs - dot) * ys;
                        }
                      gg.accumulate(x, dx);
                    });
}

// ---- shape surgery ----

template <class T>
Var transpose(Graph<T>& g, Var x) {
  return make_op<T>(g, Mat<T>(g.val(x).transpose()), g.needs_grad(x),
                    [x](Graph<T>& gg, Var o) {
                      gg.accumulate(x, Mat<T>(gg.grad(o).transpose()));
                    });
}

template <class T>
Var slice_rows(Graph<T>& g, Var x, int r0, int n) {
  Mat<T> y = g.val(x).middleRows(r0, n);
  return make_op<T>(g, std::move(y), g.needs_grad(x),
                    [x, r0, n](Graph<T>& gg, Var o) {
                      Mat<T> dx = Mat<T>::Zero(gg.val(x).rows(), gg.val(x).cols());
                      dx.middleRows(r0, n) = gg.grad(o);
                      gg.accumulate(x, dx);
                    });
}

template <class T>
Var slice_cols(Graph<T>& g, Var x, int c0, int n) {
  Mat<T> y = g.val(x).middleCols(c0, n);
  return make_op<T>(g, std::move(y), g.needs_grad(x),
                    [x, c0, n](Graph<T>& gg, Var o) {
                      Mat<T> dx = Mat<T>::Zero(gg.val(x).rows(), gg.val(x).cols());
                      dx.middleCols(c0, n) = gg.grad(o);
                      gg.accumulate(x, dx);
                    });
}

template <class T>
Var concat_rows(Graph<T>& g, const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Eigen::Index rows = 0;
  const Eigen::Index cols = g.val(parts[0]).cols();
  bool ng = false;
  for (Var p : parts) {
    rows += g.val(p).rows();
    ng = ng || g.needs_grad(p);
  }
  Mat<T> y(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    y.middleRows(r, g.val(p).rows()) = g.val(p);
    r += g.val(p).rows();
  }
  return make_op<T>(g, std::move(y), ng, [parts](Graph<T>& gg, Var o) {
    Eigen::Index r = 0;
    for (Var p : parts) {
      const Eigen::Index n = gg.val(p).rows();
      gg.accumulate(p, Mat<T>(gg.grad(o).middleRows(r, n)));
      r += n;
    }
  });
}

template <class T>
Var concat_cols(Graph<T>& g, const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Eigen::Index cols = 0;
  const Eigen::Index rows = g.val(parts[0]).rows();
  bool ng = false;
  for (Var p : parts) {
    cols += g.val(p).cols();
    ng = ng || g.needs_grad(p);
  }
  Mat<T> y(rows, cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    y.middleCols(c, g.val(p).cols()) = g.val(p);
    c += g.val(p).cols();
  }
  return make_op<T>(g, std::move(y), ng, [parts](Graph<T>& gg, Var o) {
    Eigen::Index c = 0;
    for (Var p : parts) {
      const Eigen::Index n = gg.val(p).cols();
      gg.accumulate(p, Mat<T>(gg.grad(o).middleCols(c, n)));
      c += n;
    }
  });
}

template <class T>
Var gather_rows(Graph<T>& g, Var x, std::vector<int> idx) {
  const Mat<T>& X = g.val(x);
  Mat<T> y(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) y.row(i) = X.row(idx[i]);
  auto ids = std::make_shared<std::vector<int>>(std::move(idx));
  return make_op<T>(g, std::move(y), g.needs_grad(x),
                    [x, ids](Graph<T>& gg, Var o) {
                      Mat<T> dx = Mat<T>::Zero(gg.val(x).rows(), gg.val(x).cols());
                      const Mat<T>& G = gg.grad(o);
                      for (std::size_t i = 0; i < ids->size(); ++i)
                        dx.row((*ids)[i]) += G.row(i);
                      gg.accumulate(x, dx);
                    });
}

template <class T>
Var repeat_rows(Graph<T>& g, Var x, int n) {
  const Mat<T>& X = g.val(x);
  if (X.rows() != 1) throw std::invalid_argument("repeat_rows: need 1 x d");
  Mat<T> y = X.replicate(n, 1);
  return make_op<T>(g, std::move(y), g.needs_grad(x),
                    [x](Graph<T>& gg, Var o) {
                      gg.accumulate(x, Mat<T>(gg.grad(o).colwise().sum()));
                    });
}

template <class T>
Var detach(Graph<T>& g, Var x) {
  return g.constant(g.val(x));
}

// ---- normalization ----

template <class T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, T eps = T(1e-5)) {
  const Mat<T>& X = g.val(x);
  const Eigen::Index d = X.cols();
  Mat<T> xhat(X.rows(), d);
  auto istd = std::make_shared<Vec<T>>(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const T mu = X.row(i).mean();
    const T var = (X.row(i).array() - mu).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    (*istd)(i) = is;
    xhat.row(i) = (X.row(i).array() - mu) * is;
  }
  Mat<T> y = (xhat.array().rowwise() * g.val(gamma).row(0).array()).rowwise() +
             g.val(beta).row(0).array();
  auto xh = std::make_shared<Mat<T>>(std::move(xhat));
  const bool ng = g.needs_grad(x) || g.needs_grad(gamma) || g.needs_grad(beta);
  return make_op<T>(g, std::move(y), ng, [x, gamma, beta, xh, istd](Graph<T>& gg, Var o) {
    const Mat<T>& G = gg.grad(o);
    const Eigen::Index d = G.cols();
    if (gg.needs_grad(gamma))
      gg.accumulate(gamma, Mat<T>(G.cwiseProduct(*xh).colwise().sum()));
    if (gg.needs_grad(beta)) gg.accumulate(beta, Mat<T>(G.colwise().sum()));
    if (gg.needs_grad(x)) {
      Mat<T> dx(G.rows(), d);
      const auto& gam = gg.val(gamma).row(0);
      for (Eigen::Index i = 0; i < G.rows(); ++i) {
        Eigen::Array<T, 1, Eigen::Dynamic> dxhat = G.row(i).array() * gam.array();
        const T m1 = dxhat.mean();
        const T m2 = (dxhat * xh->row(i).array()).mean();
        dx.row(i) = ((dxhat - m1) - xh->row(i).array() * m2) * (*istd)(i);
      }
      gg.accumulate(x, dx);
    }
  });
}

}  // namespace prism::ops
