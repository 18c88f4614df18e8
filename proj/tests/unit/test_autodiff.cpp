#include "support.hpp"

#include "dtsnet/spectral.hpp"

namespace dtsnet {
namespace {

using test::check;
using test::randn;
using V = Var<double>;
using G = Graph<double>;
using Vs = std::vector<V>;

constexpr double kTol = 1e-4;

// Direct evaluation of the convolution definition, used as the forward oracle for every fast path.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b,
                          const Conv2dOptions& o) {
  const Index B = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3);
  const Index Cout = w.dim(0), KH = w.dim(1), KW = w.dim(2), cpg = w.dim(3);
  const Index opg = Cout / o.groups;
  const Index pt = o.dilation_h * (KH - 1) / 2, pl = o.dilation_w * (KW - 1) / 2;
  const Index Ho = (H - 1) / o.stride_h + 1, Wo = (W - 1) / o.stride_w + 1;
  Tensor<double> y(Shape{B, Ho, Wo, Cout});
  for (Index bb = 0; bb < B; ++bb)
    for (Index i = 0; i < Ho; ++i)
      for (Index j = 0; j < Wo; ++j)
        for (Index co = 0; co < Cout; ++co) {
          double acc = b ? (*b)[co] : 0.0;
          const Index grp = co / opg;
          for (Index kh = 0; kh < KH; ++kh)
            for (Index kw = 0; kw < KW; ++kw) {
              const Index h = i * o.stride_h + kh * o.dilation_h - pt;
              const Index ww = j * o.stride_w + kw * o.dilation_w - pl;
              if (h < 0 || h >= H || ww < 0 || ww >= W) continue;
              for (Index ci = 0; ci < cpg; ++ci) {
                acc += w.at({co, kh, kw, ci}) * x.at({bb, h, ww, grp * cpg + ci});
              }
            }
          y.at({bb, i, j, co}) = acc;
        }
  return y;
  (void)Cin;
}

TEST(Graph, ParamGradAccumulatesAndFrozenDoesNot) {
  Parameter<double> p{"p", Tensor<double>::from(Shape{2}, {1.0, 2.0}),
                      Tensor<double>::zeros(Shape{2})};
  for (int round = 0; round < 2; ++round) {
    G g;
    g.backward(sum(square(g.param(p))));
  }
  EXPECT_DOUBLE_EQ(p.grad[0], 4.0);
  EXPECT_DOUBLE_EQ(p.grad[1], 8.0);

  Parameter<double> q{"q", Tensor<double>::from(Shape{2}, {1.0, 2.0}),
                      Tensor<double>::zeros(Shape{2})};
  G g;
  auto x = g.input(Tensor<double>::from(Shape{2}, {3.0, 4.0}));
  g.backward(sum(mul(g.frozen(q), x)));
  EXPECT_EQ(q.grad[0], 0.0);
  EXPECT_DOUBLE_EQ(g.grad(x)[1], 2.0);
}

TEST(Graph, DisabledGraphRecordsNothing) {
  G g;
  g.set_enabled(false);
  auto x = g.input(randn(Shape{3, 4}, 1));
  auto y = sigmoid(mul(x, x));
  EXPECT_FALSE(y.tracked());
  EXPECT_EQ(g.num_nodes(), 0u);
}

TEST(Graph, BackwardRejectsNonScalar) {
  G g;
  auto x = g.input(randn(Shape{3}, 1));
  EXPECT_THROW(g.backward(square(x)), ShapeError);
}

TEST(GradCheck, Elementwise) {
  const auto a = randn(Shape{3, 5}, 1), b = randn(Shape{3, 5}, 2);
  EXPECT_LT(check([](G&, const Vs& v) { return add(v[0], v[1]); }, {a, b}), kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return sub(v[0], v[1]); }, {a, b}), kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return mul(v[0], v[1]); }, {a, b}), kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return scale(v[0], -1.7); }, {a}), kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return add_scalar(v[0], 0.3); }, {a}), kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return square(v[0]); }, {a}), kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return power(v[0], 0.3); },
                  {test::uniform(Shape{3, 5}, 3, 0.2, 2.0)}),
            kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return sum(v[0]); }, {a}), kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return mean(v[0]); }, {a}), kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return mse(v[0], v[1]); }, {a, b}), kTol);
}

TEST(GradCheck, Activations) {
  const auto a = randn(Shape{4, 6}, 4, 2.0);
  EXPECT_LT(check([](G&, const Vs& v) { return sigmoid(v[0]); }, {a}), kTol);
  // keep clear of the hardswish kinks at +-3
  auto h = test::uniform(Shape{4, 6}, 5, -2.9, 2.9);
  h[0] = -4.0;
  h[1] = 4.5;
  EXPECT_LT(check([](G&, const Vs& v) { return hardswish(v[0]); }, {h}), kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return simple_gate(v[0]); }, {a}), kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return learnable_sigmoid(v[0], v[1], 2.0); },
                  {a, randn(Shape{6}, 6)}),
            kTol);
}

TEST(GradCheck, Structural) {
  const auto a = randn(Shape{2, 3, 4}, 7);
  EXPECT_LT(check([](G&, const Vs& v) { return reshape(v[0], Shape{6, 4}); }, {a}), kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return permute(v[0], {2, 0, 1}); }, {a}), kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return swap_axes(v[0], 0, 1); }, {a}), kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return concat<double>({v[0], v[1]}); },
                  {a, randn(Shape{2, 3, 2}, 8)}),
            kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return split(v[0], {1, 3})[1]; }, {a}), kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return mean_axis(v[0], 1); }, {a}), kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return expand(v[0], 1, 5); },
                  {randn(Shape{2, 1, 4}, 9)}),
            kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return instance_norm(v[0], v[1], v[2], 1e-5); },
                  {randn(Shape{2, 7, 3}, 10), randn(Shape{3}, 11), randn(Shape{3}, 12)}),
            kTol);
}

struct ConvCase {
  const char* name;
  Shape x, w;
  Conv2dOptions o;
};

void PrintTo(const ConvCase& c, std::ostream* os) { *os << c.name; }

class ConvPaths : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvPaths, ForwardMatchesDefinitionAndGradChecks) {
  const auto& c = GetParam();
  const auto x = randn(c.x, 21), w = randn(c.w, 22), b = randn(Shape{c.w[0]}, 23);
  G g;
  auto y = conv2d(g.constant(x), g.constant(w), g.constant(b), c.o);
  const auto ref = naive_conv(x, w, &b, c.o);
  ASSERT_EQ(y.shape(), ref.shape());
  EXPECT_LT((y.value().vec() - ref.vec()).cwiseAbs().maxCoeff(), 1e-12);
  const auto o = c.o;
  EXPECT_LT(check([o](G&, const Vs& v) { return conv2d(v[0], v[1], v[2], o); }, {x, w, b}), kTol);
}

Conv2dOptions opts(Index sh, Index sw, Index dh, Index dw, Index groups) {
  Conv2dOptions o;
  o.stride_h = sh;
  o.stride_w = sw;
  o.dilation_h = dh;
  o.dilation_w = dw;
  o.groups = groups;
  return o;
}

INSTANTIATE_TEST_SUITE_P(
    Conv2d, ConvPaths,
    ::testing::Values(ConvCase{"pointwise", Shape{2, 3, 4, 3}, Shape{5, 1, 1, 3}, opts(1, 1, 1, 1, 1)},
                      ConvCase{"dense3x3", Shape{1, 5, 6, 2}, Shape{3, 3, 3, 2}, opts(1, 1, 1, 1, 1)},
                      ConvCase{"dilated", Shape{1, 9, 5, 2}, Shape{2, 3, 3, 2}, opts(1, 1, 4, 1, 1)},
                      ConvCase{"strided", Shape{2, 7, 6, 2}, Shape{3, 3, 3, 2}, opts(2, 2, 1, 1, 1)},
                      ConvCase{"grouped", Shape{1, 4, 5, 4}, Shape{6, 3, 3, 2}, opts(1, 1, 1, 1, 2)},
                      ConvCase{"depthwise3x3", Shape{2, 4, 5, 3}, Shape{3, 3, 3, 1}, opts(1, 1, 1, 1, 3)},
                      ConvCase{"row_depthwise", Shape{2, 3, 11, 4}, Shape{4, 1, 7, 1}, opts(1, 1, 1, 1, 4)},
                      ConvCase{"row_depthwise_wide", Shape{1, 2, 5, 2}, Shape{2, 1, 9, 1}, opts(1, 1, 1, 1, 2)},
                      ConvCase{"depthwise_even", Shape{1, 3, 6, 2}, Shape{2, 2, 4, 1}, opts(1, 1, 1, 1, 2)}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(GradCheck, Conv1dAndPointwise) {
  Conv1dOptions o;
  o.groups = 3;
  EXPECT_LT(check([o](G&, const Vs& v) { return conv1d(v[0], v[1], v[2], o); },
                  {randn(Shape{2, 9, 3}, 30), randn(Shape{3, 5, 1}, 31), randn(Shape{3}, 32)}),
            kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return pointwise(v[0], v[1], v[2]); },
                  {randn(Shape{2, 3, 4}, 33), randn(Shape{5, 4}, 34), randn(Shape{5}, 35)}),
            kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return pointwise<double>(v[0], v[1], nullptr); },
                  {randn(Shape{6, 4}, 36), randn(Shape{2, 4}, 37)}),
            kTol);
}

TEST(GradCheck, SpectralOps) {
  auto cfg = std::make_shared<const StftConfig<double>>(16, 16, 4);
  const Index L = 40;
  EXPECT_LT(check([cfg](G&, const Vs& v) { return stft(v[0], cfg); }, {randn(Shape{2, L}, 40)}),
            kTol);
  const Index T = cfg->frames(L);
  EXPECT_LT(check([cfg, L](G&, const Vs& v) { return istft(v[0], cfg, L); },
                  {randn(Shape{1, T, 9, 2}, 41)}),
            kTol);
  const auto phase = test::uniform(Shape{1, T, 9}, 42, -3.0, 3.0);
  const auto mag = test::uniform(Shape{1, T, 9}, 43, 0.1, 1.0);
  EXPECT_LT(check([phase](G&, const Vs& v) { return polar(v[0], phase); }, {mag}), kTol);
  EXPECT_LT(check([](G&, const Vs& v) { return complex_abs(v[0]); },
                  {randn(Shape{3, 4, 2}, 44)}),
            kTol);
  EXPECT_LT(check([phase, cfg, L](G&, const Vs& v) {
                    return consistency_project(v[0], phase, cfg, L);
                  },
                  {mag}),
            kTol);
}

TEST(Ops, ShapeErrorsNameTheDimension) {
  G g;
  auto x = g.input(randn(Shape{1, 4, 4, 3}, 1));
  auto w = g.input(randn(Shape{2, 3, 3, 2}, 2));
  try {
    conv2d(x, w);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("dim 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(add(g.input(randn(Shape{2}, 1)), g.input(randn(Shape{3}, 1))), ShapeError);
}

TEST(Ops, TapRangeMatchesBruteForce) {
  for (Index start = -12; start <= 12; ++start)
    for (Index dil = 1; dil <= 3; ++dil)
      for (Index taps = 1; taps <= 6; ++taps)
        for (Index extent = 1; extent <= 7; ++extent) {
          Index k0 = taps, k1 = 0;
          for (Index k = 0; k < taps; ++k) {
            const Index p = start + k * dil;
            if (p >= 0 && p < extent) {
              k0 = std::min(k0, k);
              k1 = std::max(k1, k + 1);
            }
          }
          const auto [a, b] = detail::tap_range(start, dil, taps, extent);
          if (k1 == 0) {
            EXPECT_EQ(a, b);
          } else {
            EXPECT_EQ(a, k0);
            EXPECT_EQ(b, k1);
          }
        }
}

}  // namespace
}  // namespace dtsnet
