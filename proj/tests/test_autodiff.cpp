#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "prism/core/nn.hpp"
#include "prism/core/ops.hpp"
#include "prism/core/optim.hpp"
#include "prism/core/rng.hpp"
#include "prism/core/spatial_ops.hpp"

using namespace prism;
using testing_oracles::grad_check;

namespace {

Rng make_rng(std::uint64_t seed = 42) { return Rng(seed); }

using Builder = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

double check(const Builder& b, std::vector<Mat<double>> inputs, double h = 1e-5) {
  auto res = grad_check<double>(b, inputs, h);
  return res.max_rel_err;
}

}  // namespace

TEST_CASE("arithmetic and reduction gradients", "[autodiff]") {
  Rng rng = make_rng();
  Mat<double> a = rng.normal_mat<double>(3, 4, 0.0, 1.0);
  Mat<double> b = rng.normal_mat<double>(3, 4, 0.0, 1.0);

  REQUIRE(check([](Graph<double>& g, const std::vector<Var>& v) {
            return ops::sum(g, ops::mul(g, ops::add(g, v[0], v[1]), v[0]));
          }, {a, b}) < 1e-6);

  REQUIRE(check([](Graph<double>& g, const std::vector<Var>& v) {
            Var m = ops::matmul(g, v[0], v[1], false, true);  // 3x4 * 4x3
            return ops::mean(g, ops::mul(g, m, m));
          }, {a, b}) < 1e-6);

  REQUIRE(check([](Graph<double>& g, const std::vector<Var>& v) {
            Var r = ops::rowsum(g, v[0]);
            Var c = ops::colsum(g, v[1]);
            return ops::add(g, ops::sum(g, ops::mul(g, r, r)),
                            ops::sum(g, ops::mul(g, c, c)));
          }, {a, b}) < 1e-6);
}

TEST_CASE("matmul transpose variants", "[autodiff]") {
  Rng rng = make_rng(7);
  Mat<double> a = rng.normal_mat<double>(3, 5, 0.0, 1.0);
  Mat<double> b = rng.normal_mat<double>(3, 5, 0.0, 1.0);
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      Mat<double> x = ta ? Mat<double>(a.transpose()) : a;  // make shapes conform
      Mat<double> y = tb ? Mat<double>(b.transpose()) : b;
      // want op(x) (3x5) * op(y) (5x3)
      Mat<double> yy = tb ? b : Mat<double>(b.transpose());
      REQUIRE(check([ta, tb](Graph<double>& g, const std::vector<Var>& v) {
                Var m = ops::matmul(g, v[0], v[1], ta, tb);
                return ops::sum(g, ops::mul(g, m, m));
              }, {x, yy}) < 1e-6);
    }
}

TEST_CASE("nonlinearity gradients", "[autodiff]") {
  Rng rng = make_rng(3);
  Mat<double> x = rng.uniform_mat<double>(4, 3, -2.0, 2.0);
  Mat<double> pos = rng.uniform_mat<double>(4, 3, 0.1, 3.0);

  REQUIRE(check([](Graph<double>& g, const std::vector<Var>& v) {
            return ops::sum(g, ops::sigmoid(g, v[0]));
          }, {x}) < 1e-6);
  REQUIRE(check([](Graph<double>& g, const std::vector<Var>& v) {
            return ops::sum(g, ops::exp_(g, v[0]));
          }, {x}) < 1e-6);
  REQUIRE(check([](Graph<double>& g, const std::vector<Var>& v) {
            return ops::sum(g, ops::log_(g, v[0]));
          }, {pos}) < 1e-6);
  REQUIRE(check([](Graph<double>& g, const std::vector<Var>& v) {
            return ops::sum(g, ops::sqrt_(g, v[0]));
          }, {pos}) < 1e-6);
  REQUIRE(check([](Graph<double>& g, const std::vector<Var>& v) {
            return ops::sum(g, ops::pow_const(g, v[0], 2.7));
          }, {pos}) < 1e-6);
  REQUIRE(check([](Graph<double>& g, const std::vector<Var>& v) {
            return ops::sum(g, ops::inverse_sigmoid(g, v[0]));
          }, {rng.uniform_mat<double>(3, 3, 0.05, 0.95)}) < 1e-6);
}

TEST_CASE("softmax gradients", "[autodiff]") {
  Rng rng = make_rng(11);
  Mat<double> x = rng.normal_mat<double>(4, 6, 0.0, 1.5);
  Mat<double> w = rng.normal_mat<double>(4, 6, 0.0, 1.0);
  REQUIRE(check([&](Graph<double>& g, const std::vector<Var>& v) {
            Var s = ops::softmax_rows(g, v[0]);
            return ops::sum(g, ops::mul(g, s, v[1]));
          }, {x, w}) < 1e-6);
  REQUIRE(check([&](Graph<double>& g, const std::vector<Var>& v) {
            Var s = ops::softmax_rows_grouped(g, v[0], 3);
            return ops::sum(g, ops::mul(g, s, v[1]));
          }, {x, w}) < 1e-6);
}

TEST_CASE("slicing and gather gradients", "[autodiff]") {
  Rng rng = make_rng(5);
  Mat<double> x = rng.normal_mat<double>(5, 4, 0.0, 1.0);
  REQUIRE(check([](Graph<double>& g, const std::vector<Var>& v) {
            Var s = ops::slice_rows(g, v[0], 1, 3);
            Var c = ops::slice_cols(g, v[0], 0, 2);
            Var cat = ops::concat_cols<double>(g, {s, ops::slice_rows(g, c, 0, 3)});
            Var gth = ops::gather_rows(g, cat, {0, 2, 2, 1});
            return ops::sum(g, ops::mul(g, gth, gth));
          }, {x}) < 1e-6);
}

TEST_CASE("layer norm gradient", "[autodiff]") {
  Rng rng = make_rng(9);
  Mat<double> x = rng.normal_mat<double>(3, 8, 0.5, 2.0);
  Mat<double> gamma = rng.uniform_mat<double>(1, 8, 0.5, 1.5);
  Mat<double> beta = rng.normal_mat<double>(1, 8, 0.0, 0.2);
  Mat<double> w = rng.normal_mat<double>(3, 8, 0.0, 1.0);
  REQUIRE(check([&](Graph<double>& g, const std::vector<Var>& v) {
            Var y = ops::layer_norm(g, v[0], v[1], v[2]);
            return ops::sum(g, ops::mul(g, y, v[3]));
          }, {x, gamma, beta, w}, 1e-6) < 1e-5);
}

TEST_CASE("im2col and bilinear resize gradients", "[autodiff]") {
  Rng rng = make_rng(13);
  Mat<double> img = rng.normal_mat<double>(6 * 5, 2, 0.0, 1.0);  // 6x5, 2ch
  Mat<double> wt = rng.normal_mat<double>(2 * 9, 3, 0.0, 0.5);
  REQUIRE(check([&](Graph<double>& g, const std::vector<Var>& v) {
            Var cols = ops::im2col(g, v[0], 6, 5, 3, 2, 1);
            Var y = ops::matmul(g, cols, v[1]);
            return ops::sum(g, ops::mul(g, y, y));
          }, {img, wt}) < 1e-6);
  REQUIRE(check([](Graph<double>& g, const std::vector<Var>& v) {
            Var y = ops::bilinear_resize(g, v[0], 6, 5, 11, 9);
            return ops::sum(g, ops::mul(g, y, y));
          }, {img}) < 1e-6);
}

TEST_CASE("bilinear resize preserves constants", "[autodiff]") {
  Graph<double> g;
  Mat<double> c = Mat<double>::Constant(4 * 4, 3, 2.5);
  Var y = ops::bilinear_resize(g, g.constant(c), 4, 4, 32, 32);
  REQUIRE((g.val(y).array() - 2.5).abs().maxCoeff() < 1e-12);
}

TEST_CASE("deformable sampling gradient", "[autodiff]") {
  Rng rng = make_rng(21);
  // two levels: 6x6 and 3x3, d=4, heads=2, K=2
  const int d = 4, heads = 2, K = 2;
  std::vector<ops::LevelShape> shapes{{6, 6, 0}, {3, 3, 36}};
  Mat<double> value = rng.normal_mat<double>(36 + 9, d, 0.0, 1.0);
  const int n = 3, P = heads * 2 * K;
  // keep sampling points interior and away from cell boundaries
  Mat<double> locs = rng.uniform_mat<double>(n, 2 * P, 0.21, 0.77);
  Mat<double> attw = rng.uniform_mat<double>(n, P, 0.1, 1.0);
  REQUIRE(check([&](Graph<double>& g, const std::vector<Var>& v) {
            Var out = ops::ms_deform_sample(g, v[0], shapes, v[1], v[2], heads);
            return ops::sum(g, ops::mul(g, out, out));
          }, {value, locs, attw}, 1e-6) < 1e-5);
}

TEST_CASE("deformable sampling of constant field", "[autodiff]") {
  Graph<double> g;
  std::vector<ops::LevelShape> shapes{{4, 4, 0}};
  Mat<double> value = Mat<double>::Constant(16, 2, 3.0);
  Mat<double> locs = Mat<double>::Constant(2, 2 * 2 * 1 * 2, 0.4);
  Mat<double> attw(2, 2 * 1 * 2);
  attw << 0.5, 0.5, 0.25, 0.75, 0.3, 0.7, 0.9, 0.1;  // normalized per head
  Var out = ops::ms_deform_sample(g, g.constant(value), shapes, g.constant(locs),
                                  g.constant(attw), 2);
  REQUIRE((g.val(out).array() - 3.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("multi-head attention module gradient", "[autodiff]") {
  Rng rng = make_rng(31);
  ParamStore<double> store;
  nn::MultiheadAttention<double> mha(store, "mha", 8, 2, rng);
  Mat<double> q = rng.normal_mat<double>(3, 8, 0.0, 1.0);
  Mat<double> kv = rng.normal_mat<double>(5, 8, 0.0, 1.0);

  Graph<double> g;
  Var vq = g.leaf(q, true);
  Var vkv = g.leaf(kv, true);
  Var y = mha(g, vq, vkv, vkv);
  Var loss = ops::sum(g, ops::mul(g, y, y));
  g.backward(loss);
  Mat<double> aq = g.grad(vq);

  auto eval = [&](const Mat<double>& qq) {
    Graph<double> g2;
    Var y2 = mha(g2, g2.leaf(qq, false), g2.leaf(kv, false), g2.leaf(kv, false));
    return g2.val(ops::sum(g2, ops::mul(g2, y2, y2)))(0, 0);
  };
  double max_rel = 0;
  for (int i = 0; i < q.size(); ++i) {
    Mat<double> p = q, m = q;
    p(i) += 1e-6;
    m(i) -= 1e-6;
    double num = (eval(p) - eval(m)) / 2e-6;
    max_rel = std::max(max_rel, std::abs(num - aq(i)) /
                                    std::max({std::abs(num), std::abs(aq(i)), 1e-4}));
  }
  REQUIRE(max_rel < 1e-5);
}

TEST_CASE("parameter binding accumulates over batch", "[autodiff]") {
  Rng rng = make_rng(17);
  ParamStore<double> store;
  auto* w = store.create("w", rng.normal_mat<double>(2, 2, 0.0, 1.0));
  Mat<double> x1 = rng.normal_mat<double>(3, 2, 0.0, 1.0);
  Mat<double> x2 = rng.normal_mat<double>(3, 2, 0.0, 1.0);

  w->zero_grad();
  for (const auto& x : {x1, x2}) {
    Graph<double> g;
    Var y = ops::matmul(g, g.leaf(x, false), g.param(*w));
    g.backward(ops::sum(g, ops::mul(g, y, y)));
  }
  Mat<double> batched = w->grad;

  w->zero_grad();
  {
    Graph<double> g;
    Mat<double> xc(6, 2);
    xc << x1, x2;
    Var y = ops::matmul(g, g.leaf(xc, false), g.param(*w));
    g.backward(ops::sum(g, ops::mul(g, y, y)));
  }
  REQUIRE((batched - w->grad).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("adamw reduces a quadratic", "[autodiff]") {
  Rng rng = make_rng(23);
  ParamStore<double> store;
  auto* w = store.create("w", rng.normal_mat<double>(4, 1, 0.0, 1.0));
  AdamW<double> opt(store, 0.05, 0.0);
  Mat<double> target = rng.normal_mat<double>(4, 1, 0.0, 1.0);
  double first = 0, last = 0;
  for (int it = 0; it < 300; ++it) {
    opt.zero_grad();
    Graph<double> g;
    Var diff = ops::sub(g, g.param(*w), g.constant(target));
    Var loss = ops::sum(g, ops::mul(g, diff, diff));
    if (it == 0) first = g.val(loss)(0, 0);
    last = g.val(loss)(0, 0);
    g.backward(loss);
    opt.step();
  }
  REQUIRE(last < 1e-3 * first);
}
