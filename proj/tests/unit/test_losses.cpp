#include "support.hpp"

#include <fstream>

#include "dtsnet/losses.hpp"

namespace dtsnet {
namespace {

TEST(LossWeights, Validation) {
  EXPECT_THROW(LossWeights(-1.0, 0.0), ConfigError);
  EXPECT_THROW(LossWeights(1.0, -0.5), ConfigError);
  EXPECT_THROW(LossWeights(0.0, 0.0), ConfigError);
  EXPECT_NO_THROW(LossWeights(0.0, 1.0));
  EXPECT_THROW(LossWeights(0.0, 1.0).ratio(), ConfigError);
  const auto w = LossWeights::from_ratio(200.0);
  EXPECT_EQ(w.lambda1(), 1.0);
  EXPECT_EQ(w.lambda2(), 200.0);
  EXPECT_EQ(w.ratio(), 200.0);
  EXPECT_TRUE(w.uses_metric());
  EXPECT_FALSE(LossWeights::from_ratio(0.0).uses_metric());
}

TEST(GeneratorLoss, MetricTermDisconnectedWhenLambda2IsZero) {
  RealGraph g;
  auto a = g.input(RealTensor::full(Shape{1}, 0.25));
  auto m = g.input(RealTensor::full(Shape{1}, 9.0));
  auto loss = generator_loss(LossWeights(2.0, 0.0), a, &m);
  EXPECT_EQ(loss.value()[0], 0.5);
  g.backward(loss);
  EXPECT_EQ(g.grad(m)[0], 0.0);
  EXPECT_EQ(generator_loss(LossWeights(2.0, 0.0), a, nullptr).value()[0], 0.5);
  EXPECT_THROW(generator_loss(LossWeights(1.0, 1.0), a, nullptr), ConfigError);
  EXPECT_DOUBLE_EQ(generator_loss(LossWeights(1.0, 3.0), a, &m).value()[0], 27.25);
}

TEST(MagLoss, PlainMseOracle) {
  RealGraph g;
  auto a = g.constant(RealTensor::from(Shape{1, 1, 2}, {1.0, 2.0}));
  auto b = g.constant(RealTensor::from(Shape{1, 1, 2}, {0.0, 4.0}));
  EXPECT_DOUBLE_EQ(mag_loss(a, b).value()[0], 2.5);
}

TEST(MagConsistencyLoss, GradCheck) {
  auto cfg = std::make_shared<const RealStft>(32, 32, 8);
  const Index L = 96, T = cfg->frames(L);
  const auto clean = test::uniform(Shape{1, T, 17}, 1, 0.0, 1.0);
  const auto phase = test::uniform(Shape{1, T, 17}, 2, -3.0, 3.0);
  const auto r = grad_check<double>(
      [&](RealGraph& g, const std::vector<RealVar>& v) {
        return mag_consistency_loss(g.constant(clean), v[0], phase, cfg, L);
      },
      {test::uniform(Shape{1, T, 17}, 3, 0.1, 1.0)});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

DiscriminatorParams small_disc() {
  DiscriminatorConfig c;
  c.channels = {2, 3, 3, 4};
  return build_discriminator(c, 11);
}

TEST(Discriminator, OutputInUnitIntervalAndShape) {
  auto d = build_discriminator(DiscriminatorConfig{}, 1);
  RealGraph g;
  g.set_enabled(false);
  auto x = g.constant(test::uniform(Shape{2, 41, 201}, 1, 0.0, 2.0));
  auto y = g.constant(test::uniform(Shape{2, 41, 201}, 2, 0.0, 2.0));
  auto out = discriminator_forward(g, x, y, d);
  ASSERT_EQ(out.shape(), Shape{2});
  for (Index i = 0; i < 2; ++i) {
    EXPECT_GT(out.value()[i], 0.0);
    EXPECT_LT(out.value()[i], 1.0);
  }
}

TEST(Discriminator, RejectsInputTooSmall) {
  auto d = build_discriminator(DiscriminatorConfig{}, 1);
  RealGraph g;
  auto x = g.constant(test::uniform(Shape{1, 4, 4}, 1, 0.0, 1.0));
  EXPECT_THROW(discriminator_forward(g, x, x, d), ShapeError);
}

TEST(Discriminator, ParamGradCheck) {
  auto d = small_disc();
  const auto xm = test::uniform(Shape{2, 17, 17}, 3, 0.0, 1.0);
  const auto xh = test::uniform(Shape{2, 17, 17}, 4, 0.0, 1.0);
  const auto q = RealTensor::from(Shape{2}, {0.3, 0.8});
  GradCheckOptions<double> o;
  const auto r = grad_check_params<double>(
      [&](RealGraph& g) { return discriminator_loss(g, g.constant(xm), g.constant(xh), q, d); },
      d.store, o);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Discriminator, InputGradCheckThroughMetricLoss) {
  auto d = small_disc();
  const auto xm = test::uniform(Shape{1, 17, 17}, 5, 0.0, 1.0);
  const auto r = grad_check<double>(
      [&](RealGraph& g, const std::vector<RealVar>& v) {
        return metric_loss(g, g.constant(xm), v[0], d);
      },
      {test::uniform(Shape{1, 17, 17}, 6, 0.0, 1.0)});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Discriminator, MetricLossLeavesDiscriminatorUntouched) {
  auto d = small_disc();
  d.store.zero_grad();
  RealGraph g;
  auto xm = g.constant(test::uniform(Shape{1, 17, 17}, 7, 0.0, 1.0));
  auto xh = g.input(test::uniform(Shape{1, 17, 17}, 8, 0.0, 1.0));
  g.backward(metric_loss(g, xm, xh, d));
  for (std::size_t i = 0; i < d.store.size(); ++i) {
    EXPECT_EQ(d.store[i].grad.vec().cwiseAbs().maxCoeff(), 0.0) << d.store[i].path;
  }
  EXPECT_GT(g.grad(xh).vec().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Discriminator, LossOracle) {
  auto d = small_disc();
  RealGraph g;
  g.set_enabled(false);
  auto xm = g.constant(test::uniform(Shape{2, 17, 17}, 9, 0.0, 1.0));
  auto xh = g.constant(test::uniform(Shape{2, 17, 17}, 10, 0.0, 1.0));
  const auto q = RealTensor::from(Shape{2}, {0.2, 0.6});
  const auto real = discriminator_forward(g, xm, xm, d).value();
  const auto fake = discriminator_forward(g, xm, xh, d).value();
  double expect = 0.0;
  for (Index i = 0; i < 2; ++i) {
    expect += 0.5 * (real[i] - 1.0) * (real[i] - 1.0) + 0.5 * (fake[i] - q[i]) * (fake[i] - q[i]);
  }
  EXPECT_NEAR(discriminator_loss(g, xm, xh, q, d).value()[0], expect, 1e-14);
  EXPECT_THROW(discriminator_loss(g, xm, xh, RealTensor(Shape{3}), d), ShapeError);
}

TEST(ProxyQuality, IdenticalIsOne) {
  const auto c = test::random_clip(8000, 1);
  EXPECT_EQ(proxy_quality(c, c), 1.0);
}

TEST(ProxyQuality, ZerosAgainstSignalIsNearZero) {
  const auto c = test::tone(8000, 440.0);
  AudioClip z;
  z.samples.assign(8000, 0.0);
  // every frame has noise equal to signal, so the segmental SNR is exactly 0 dB
  EXPECT_NEAR(segmental_mag_snr(c, z), 0.0, 1e-12);
  auto sig = [](double s) { return 1.0 / (1.0 + std::exp(-(s - 15.0) / 4.0)); };
  const double expect = (sig(0.0) - sig(-10.0)) / (sig(35.0) - sig(-10.0));
  EXPECT_NEAR(proxy_quality(c, z), expect, 1e-12);
  EXPECT_LT(proxy_quality(c, z), 0.03);
}

TEST(ProxyQuality, DecreasesWithNoiseLevel) {
  const auto c = test::tone(16000, 300.0);
  const auto n = test::random_clip(16000, 2, 1.0);
  double prev = 1.1;
  for (double snr : {30.0, 20.0, 10.0, 0.0, -10.0}) {
    const double g = 0.5 / std::sqrt(2.0) * std::pow(10.0, -snr / 20.0);
    AudioClip e = c;
    for (std::size_t i = 0; i < e.samples.size(); ++i) e.samples[i] += g * n.samples[i];
    const double q = proxy_quality(c, e);
    EXPECT_LT(q, prev) << snr;
    EXPECT_GE(q, 0.0);
    prev = q;
  }
}

TEST(ProxyQuality, RandomPairsStayInUnitInterval) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const double q = proxy_quality(test::random_clip(1200, s), test::random_clip(1200, s + 500));
    ASSERT_GE(q, 0.0);
    ASSERT_LE(q, 1.0);
  }
}

TEST(QualityLabels, PesqNormalization) {
  EXPECT_EQ(q_from_pesq(-0.5), 0.0);
  EXPECT_EQ(q_from_pesq(4.5), 1.0);
  EXPECT_DOUBLE_EQ(q_from_pesq(2.0), 0.5);
  EXPECT_EQ(q_from_pesq(9.0), 1.0);
}

TEST(QualityLabels, ScoresFile) {
  test::TempDir dir("scores");
  const auto path = dir.str("q.csv");
  {
    std::ofstream f(path);
    f << "# pesq labels\nid,Q\na.wav,0.25\nb.wav,1\n";
  }
  const auto s = read_quality_scores(path);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s.at("a.wav"), 0.25);
  {
    std::ofstream f(path);
    f << "a.wav,0.2\na.wav,0.3\n";
  }
  EXPECT_THROW(read_quality_scores(path), DataError);
  {
    std::ofstream f(path);
    f << "a.wav,1.5\n";
  }
  EXPECT_THROW(read_quality_scores(path), DataError);
  {
    std::ofstream f(path);
    f << "a.wav,0.5\nb.wav,abc\n";
  }
  EXPECT_THROW(read_quality_scores(path), DataError);
}

}  // namespace
}  // namespace dtsnet
