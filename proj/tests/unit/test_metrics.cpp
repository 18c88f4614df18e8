#include "support.hpp"

#include <fstream>
#include <numbers>
#include <sstream>

#include "dtsnet/metrics.hpp"
#include "dtsnet/wav.hpp"

namespace dtsnet {
namespace {

// Frames at 0, 256, 512, ... each 512 long (the last one may be cut short), stopping once a
// frame reaches the end of the clip.
double ssnr_oracle(const std::vector<double>& c, const std::vector<double>& e) {
  const std::size_t L = c.size();
  std::vector<std::pair<double, double>> frames;
  for (std::size_t s = 0;; s += 256) {
    double sig = 0.0, noi = 0.0;
    for (std::size_t i = s; i < std::min(L, s + 512); ++i) {
      sig += c[i] * c[i];
      noi += (c[i] - e[i]) * (c[i] - e[i]);
    }
    frames.emplace_back(sig, noi);
    if (s + 512 >= L) break;
  }
  double peak = 0.0;
  for (auto& f : frames) peak = std::max(peak, f.first);
  double acc = 0.0;
  int n = 0;
  for (auto& [sig, noi] : frames) {
    if (sig < 1e-6 * peak) continue;
    double snr = noi == 0.0 ? 35.0 : 10.0 * std::log10(sig / noi);
    acc += std::min(35.0, std::max(-10.0, snr));
    ++n;
  }
  return acc / n;
}

AudioClip scaled(const AudioClip& c, double g) {
  AudioClip o = c;
  for (auto& s : o.samples) s *= g;
  return o;
}

TEST(Ssnr, ConstantRatioIsExact) {
  const auto c = test::random_clip(5000, 1);
  EXPECT_NEAR(ssnr(c, scaled(c, 0.5)), 10.0 * std::log10(4.0), 1e-12);
}

TEST(Ssnr, ClampBounds) {
  const auto c = test::random_clip(3000, 2);
  EXPECT_EQ(ssnr(c, c), 35.0);
  EXPECT_EQ(ssnr(c, scaled(c, 101.0)), -10.0);
}

TEST(Ssnr, MatchesOracleIncludingPartialFrame) {
  for (Index L : {300, 512, 513, 768, 1000, 4097}) {
    const auto c = test::random_clip(L, static_cast<std::uint64_t>(L));
    const auto n = test::random_clip(L, static_cast<std::uint64_t>(L) + 1, 0.2);
    AudioClip e = c;
    for (Index i = 0; i < L; ++i) e.samples[i] += n.samples[i] * (1.0 + std::sin(0.01 * i));
    EXPECT_NEAR(ssnr(c, e), ssnr_oracle(c.samples, e.samples), 1e-12) << L;
  }
}

TEST(Ssnr, SilentFramesAreSkipped) {
  auto c = test::random_clip(4096, 3);
  std::fill(c.samples.begin(), c.samples.begin() + 2048, 0.0);
  auto e = scaled(c, 0.5);
  const double before = ssnr(c, e);
  for (int i = 0; i < 1000; ++i) e.samples[i] = 0.1;  // only touches frames with silent reference
  EXPECT_NEAR(ssnr(c, e), ssnr_oracle(c.samples, e.samples), 1e-12);
  EXPECT_NEAR(before, 10.0 * std::log10(4.0), 1e-12);
}

TEST(Ssnr, ErrorsOnBadInput) {
  AudioClip z;
  z.samples.assign(1000, 0.0);
  EXPECT_THROW(ssnr(z, z), DataError);
  EXPECT_THROW(ssnr(test::random_clip(100, 1), test::random_clip(101, 1)), DataError);
}

TEST(Ssnr, ScaleInvarianceProperty) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> gain(0.01, 50.0);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto c = test::random_clip(1500, s);
    const auto n = test::random_clip(1500, s + 1000, 0.3);
    AudioClip e = c;
    for (std::size_t i = 0; i < e.samples.size(); ++i) e.samples[i] += n.samples[i];
    const double g = gain(rng) * (s % 2 ? -1.0 : 1.0);
    ASSERT_NEAR(ssnr(scaled(c, g), scaled(e, g)), ssnr(c, e), 1e-9);
  }
}

TEST(SpectralErrors, IdenticalIsZero) {
  const RealStft cfg;
  const auto c = test::random_clip(4000, 5);
  const auto r = spectral_errors(c, c, cfg);
  EXPECT_EQ(r.mag, 0.0);
  EXPECT_EQ(r.phase, 0.0);
  EXPECT_EQ(r.complex, 0.0);
}

TEST(SpectralErrors, NegatedAndScaledOracles) {
  const RealStft cfg;
  const auto c = test::random_clip(4000, 6);
  const auto neg = spectral_errors(c, scaled(c, -1.0), cfg);
  EXPECT_NEAR(neg.mag, 0.0, 1e-20);
  EXPECT_NEAR(neg.phase, std::numbers::pi, 1e-9);
  EXPECT_NEAR(neg.complex, 4.0, 1e-12);

  const auto dbl = spectral_errors(c, scaled(c, 2.0), cfg);
  EXPECT_NEAR(dbl.phase, 0.0, 1e-12);
  EXPECT_NEAR(dbl.complex, 1.0, 1e-12);
  // mean (|C| - 2|C|)^2 = mean |C|^2
  const auto spec = analyze(cfg, stack_clips({c}));
  EXPECT_NEAR(dbl.mag, spec.mag.vec().squaredNorm() / static_cast<double>(spec.mag.size()),
              1e-12);
}

TEST(SpectralErrors, PropertiesOverRandomPairs) {
  const RealStft cfg;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto c = test::random_clip(800, s);
    const auto e = test::random_clip(800, s + 7000);
    const auto r = spectral_errors(c, e, cfg);
    ASSERT_GE(r.phase, 0.0);
    ASSERT_LE(r.phase, std::numbers::pi);
    ASSERT_GT(r.mag, 0.0);
    ASSERT_GT(r.complex, 0.0);
  }
}

void write_clip(const std::string& path, const AudioClip& c) { wav_write(path, c); }

TEST(EvaluateDir, PairsByNameAndReportsExclusions) {
  test::TempDir dir("eval");
  std::filesystem::create_directories(dir.path() / "clean");
  std::filesystem::create_directories(dir.path() / "enh");
  const auto a = test::random_clip(2000, 1), b = test::random_clip(2000, 2);
  write_clip(dir.str("clean/a.wav"), a);
  write_clip(dir.str("enh/a.wav"), scaled(a, 0.5));
  write_clip(dir.str("clean/b.wav"), b);
  write_clip(dir.str("enh/c.wav"), b);
  const RealStft cfg;
  auto report = evaluate_dir(dir.str("clean"), dir.str("enh"), proxy_quality, cfg);
  ASSERT_EQ(report.rows.size(), 1u);
  EXPECT_EQ(report.rows[0].id, "a.wav");
  EXPECT_EQ(report.excluded.size(), 2u);
  EXPECT_FALSE(report.any_failed);
  EXPECT_NEAR(report.mean.ssnr,
              ssnr_oracle(wav_read(dir.str("clean/a.wav")).samples,
                          wav_read(dir.str("enh/a.wav")).samples),
              1e-12);

  std::ostringstream csv;
  write_report_csv(csv, report, "proxy");
  const auto text = csv.str();
  EXPECT_NE(text.find("id,ssnr_db,error_mag,error_pha,error_com,quality\n"), std::string::npos);
  EXPECT_NE(text.find("\na.wav,"), std::string::npos);
  EXPECT_NE(text.find("\nMEAN,"), std::string::npos);
  EXPECT_NE(text.find("# excluded: 2"), std::string::npos);

  write_clip(dir.str("clean/c.wav"), test::random_clip(1500, 3));
  report = evaluate_dir(dir.str("clean"), dir.str("enh"), proxy_quality, cfg);
  EXPECT_TRUE(report.any_failed);
}

TEST(EvaluateDir, ExternalQualityReplacesProxy) {
  EvalReport r;
  r.rows.resize(2);
  r.rows[0].id = "a.wav";
  r.rows[1].id = "b.wav";
  apply_external_quality(r, {{"a.wav", 0.75}});
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].quality, 0.75);
  EXPECT_EQ(r.mean.quality, 0.75);
  ASSERT_EQ(r.excluded.size(), 1u);
  EXPECT_EQ(r.excluded[0].first, "b.wav");
}

}  // namespace
}  // namespace dtsnet
