#include "support.hpp"

#include "dtsnet/model.hpp"

namespace dtsnet {
namespace {

ModelConfig tiny(Variant v = Variant::DenseTs) {
  ModelConfig c;
  c.variant = v;
  c.n_fft = 16;
  c.win_length = 16;
  c.hop = 4;
  c.dense_channel = 2;
  c.depth = 2;
  c.classic_channel = 2;
  c.classic_blocks = 1;
  return c;
}

RealTensor magnitudes(Index B, Index T, Index F, std::uint64_t seed) {
  return test::uniform(Shape{B, T, F}, seed, 0.05, 1.5);
}

// Hand count of one gaze block over c channels with large kernel K and gate kernel k:
// entry norm 2c; LKE expand (2c x c + 2c), depthwise (K c + c), norm 2c, project (c^2 + c);
// CA (c^2 + c); LSG depthwise (k c + c), pointwise (c^2 + c), slopes c; fuse (c^2 + c).
Index mvgb_count(Index c, Index K, Index k) { return 6 * c * c + (13 + K + k) * c; }

TEST(ParamCount, DefaultDenseMatchesHandCount) {
  const ModelConfig cfg;
  Index expected = 2 * 4;  // lift 1 -> 4
  for (Index i = 1; i <= 4; ++i) {
    const Index cin = 4 * i;
    expected += 2 * mvgb_count(cin, 31, 3);  // time and frequency passes
    expected += 4 * cin + 4;                 // channel adjustment back to 4
  }
  expected += 4 + 1;  // head 4 -> 1
  expected += 201;    // per-bin mask slope
  EXPECT_EQ(expected, 9910);
  EXPECT_EQ(count_params(build_model(cfg, 0)), expected);
}

TEST(ParamCount, ClassicMatchesHandCount) {
  ModelConfig cfg;
  cfg.variant = Variant::ClassicTs;
  const Index c = 6;
  Index block = 0;
  for (Index j = 0; j < 4; ++j) block += c * 9 * c * (j + 1) + c + 2 * c;
  const Index expected = 2 * c + 2 * block + 4 * 2 * mvgb_count(c, 31, 3) + c + 1 + 201;
  EXPECT_EQ(count_params(build_model(cfg, 0)), expected);
  EXPECT_EQ(expected, 10828);
}

TEST(ParamCount, DefaultInsideDeskBand) {
  const auto n = count_params(build_model(ModelConfig{}, 0));
  EXPECT_GE(n, 8000);
  EXPECT_LE(n, 20000);
}

TEST(ParamCount, AblationsRemoveExactlyTheirView) {
  const ModelConfig cfg;
  const auto full = build_model(cfg, 0);
  Index lke = 0, ca = 0, lsg = 0;
  for (Index i = 1; i <= 4; ++i) {
    const Index c = 4 * i;
    lke += 2 * (2 * c * c + 2 * c + 31 * c + c + 2 * c + c * c + c);
    ca += 2 * (c * c + c);
    lsg += 2 * (3 * c + c + c * c + c + c);
  }
  EXPECT_EQ(count_params(ablate(full, Branch::LKE)), 9910 - lke);
  EXPECT_EQ(count_params(ablate(full, Branch::CA)), 9910 - ca);
  EXPECT_EQ(count_params(ablate(full, Branch::LSG)), 9910 - lsg);
}

TEST(Macs, LayerTableSumsToTotals) {
  for (auto v : {Variant::DenseTs, Variant::ClassicTs}) {
    ModelConfig cfg;
    cfg.variant = v;
    const auto m = build_model(cfg, 0);
    const Index T = two_second_frames(cfg), F = cfg.freq_bins();
    Index p = 0, macs = 0;
    for (const auto& c : layer_costs(m, T, F)) {
      p += c.params;
      macs += c.macs;
    }
    EXPECT_EQ(p, count_params(m));
    EXPECT_EQ(macs, count_macs(m, T, F));
  }
}

TEST(Macs, LiftAndHeadCountOneTapPerPosition) {
  const ModelConfig cfg;
  const auto m = build_model(cfg, 0);
  const Index pos = 321 * 201;
  EXPECT_EQ(two_second_frames(cfg), 321);
  bool saw_lift = false;
  for (const auto& c : layer_costs(m, 321, 201)) {
    if (c.name.rfind("lift", 0) == 0) {
      EXPECT_EQ(c.macs, pos * 4);
      saw_lift = true;
    }
  }
  EXPECT_TRUE(saw_lift);
}

TEST(DenseLaw, LayerInputChannelsGrowLinearly) {
  for (Index dc : {2, 4, 8}) {
    for (Index depth = 1; depth <= 6; ++depth) {
      ModelConfig cfg = tiny();
      cfg.dense_channel = dc;
      cfg.depth = depth;
      auto m = build_model(cfg, static_cast<std::uint64_t>(dc * 10 + depth));
      RealGraph g;
      g.set_enabled(false);
      auto x = g.constant(test::randn(Shape{1, 5, 9, dc}, 7));
      DenseTrace trace;
      auto out = dense_ts_forward(g, x, bind_dense_layers(m), cfg, &trace);
      ASSERT_EQ(trace.layer_in_channels.size(), static_cast<std::size_t>(depth));
      for (Index i = 0; i < depth; ++i) {
        EXPECT_EQ(trace.layer_in_channels[i], dc * (i + 1)) << "dc=" << dc << " depth=" << depth;
      }
      // output is exactly 0.2 * (last adjusted branch) + x
      const auto& a = trace.last_adjusted.value();
      ASSERT_EQ(out.shape(), x.shape());
      for (Index j = 0; j < out.value().size(); ++j) {
        ASSERT_EQ(out.value()[j], 0.2 * a[j] + x.value()[j]);
      }
    }
  }
}

TEST(DenseLaw, DepthwiseAdjustKeepsTheLaw) {
  ModelConfig cfg = tiny();
  cfg.adjust = AdjustConv::Depthwise3x3;
  cfg.depth = 3;
  auto m = build_model(cfg, 1);
  RealGraph g;
  DenseTrace trace;
  dense_ts_forward(g, g.constant(test::randn(Shape{1, 4, 9, 2}, 2)), bind_dense_layers(m), cfg,
                   &trace);
  EXPECT_EQ(trace.layer_in_channels, (std::vector<Index>{2, 4, 6}));
}

TEST(Model, MaskStaysInsideBoundsForRandomInputs) {
  for (auto v : {Variant::DenseTs, Variant::ClassicTs}) {
    auto cfg = tiny(v);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      auto m = build_model(cfg, seed);
      RealGraph g;
      g.set_enabled(false);
      auto out = model_forward(g, g.constant(magnitudes(1, 6, 9, seed)), m);
      const auto& mask = out.mask.value().vec();
      ASSERT_GT(mask.minCoeff(), 0.0);
      ASSERT_LT(mask.maxCoeff(), cfg.mask_beta);
      ASSERT_TRUE(out.enhanced.value().vec().allFinite());
    }
  }
}

TEST(Model, ZeroParametersGiveIdentity) {
  auto m = build_model(ModelConfig{}, 3);
  zero_parameters(m);
  RealGraph g;
  g.set_enabled(false);
  const auto mag = magnitudes(1, 5, 201, 4);
  auto out = model_forward(g, g.constant(mag), m);
  EXPECT_LT((out.enhanced.value().vec() - mag.vec()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Model, SeededInitIsReproducible) {
  const auto a = build_model(ModelConfig{}, 42), b = build_model(ModelConfig{}, 42);
  const auto c = build_model(ModelConfig{}, 43);
  bool differs = false;
  for (std::size_t i = 0; i < a.store.size(); ++i) {
    ASSERT_EQ(a.store[i].value.vec(), b.store[i].value.vec());
    differs = differs || a.store[i].value.vec() != c.store[i].value.vec();
  }
  EXPECT_TRUE(differs);
}

TEST(Model, RejectsWrongBinCount) {
  auto m = build_model(tiny(), 0);
  RealGraph g;
  EXPECT_THROW(model_forward(g, g.constant(magnitudes(1, 4, 10, 0)), m), ShapeError);
}

TEST(Model, ConfigValidationNamesTheField) {
  ModelConfig c;
  c.lke_kernel = 4;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("lke_kernel"), std::string::npos);
  }
}

double model_grad_error(ModelParams m, std::uint64_t seed) {
  const auto mag = magnitudes(1, 8, m.config.freq_bins(), seed);
  GradCheckOptions<double> o;
  o.max_coords_per_tensor = 12;
  return grad_check_params<double>(
             [&](RealGraph& g) { return model_forward(g, g.constant(mag), m).enhanced; }, m.store, o)
      .max_rel_error;
}

TEST(ModelGradCheck, TinyDense) { EXPECT_LT(model_grad_error(build_model(tiny(), 5), 1), 1e-4); }

TEST(ModelGradCheck, TinyDenseWithDepthwiseAdjust) {
  auto cfg = tiny();
  cfg.adjust = AdjustConv::Depthwise3x3;
  EXPECT_LT(model_grad_error(build_model(cfg, 6), 2), 1e-4);
}

TEST(ModelGradCheck, TinyClassic) {
  EXPECT_LT(model_grad_error(build_model(tiny(Variant::ClassicTs), 7), 3), 1e-4);
}

TEST(ModelGradCheck, Ablations) {
  const auto full = build_model(tiny(), 8);
  for (auto b : {Branch::LKE, Branch::CA, Branch::LSG}) {
    EXPECT_LT(model_grad_error(ablate(full, b), 4), 1e-4) << to_string(b);
  }
}

TEST(ModelGradCheck, InputGradient) {
  auto m = build_model(tiny(), 9);
  GradCheckOptions<double> o;
  const auto r = grad_check<double>(
      [&](RealGraph& g, const std::vector<RealVar>& v) { return model_forward(g, v[0], m).enhanced; },
      {magnitudes(1, 8, 9, 10)}, o);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

}  // namespace
}  // namespace dtsnet
