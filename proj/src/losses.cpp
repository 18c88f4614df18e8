#include "dtsnet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dtsnet {

LossWeights::LossWeights(double lambda1, double lambda2) : lambda1_(lambda1), lambda2_(lambda2) {
  validate();
}

LossWeights LossWeights::unchecked(double lambda1, double lambda2) {
  LossWeights w;
  w.lambda1_ = lambda1;
  w.lambda2_ = lambda2;
  return w;
}

void LossWeights::validate() const {
  if (!(lambda1_ >= 0.0) || !std::isfinite(lambda1_)) {
    throw ConfigError("lambda1: must be finite and >= 0");
  }
  if (!(lambda2_ >= 0.0) || !std::isfinite(lambda2_)) {
    throw ConfigError("lambda2: must be finite and >= 0");
  }
  if (lambda1_ == 0.0 && lambda2_ == 0.0) throw ConfigError("lambda1, lambda2: both are zero");
}

double LossWeights::ratio() const {
  if (lambda1_ == 0.0) throw ConfigError("lambda1: ratio undefined when lambda1 is zero");
  return lambda2_ / lambda1_;
}

LossWeights LossWeights::from_ratio(double p) { return LossWeights(1.0, p); }

RealVar mag_consistency_loss(const RealVar& clean_mag, const RealVar& est_mag,
                             const RealTensor& noisy_phase, const StftPtr& stft,
                             Index signal_length) {
  if (clean_mag.shape() != est_mag.shape()) {
    throw ShapeError("mag_consistency_loss: clean " + clean_mag.shape().str() + " vs estimate " +
                     est_mag.shape().str());
  }
  if (noisy_phase.shape() != est_mag.shape()) {
    throw ShapeError("mag_consistency_loss: phase " + noisy_phase.shape().str() +
                     " vs estimate " + est_mag.shape().str());
  }
  return mse(clean_mag, consistency_project(est_mag, noisy_phase, stft, signal_length));
}

RealVar mag_loss(const RealVar& clean_mag, const RealVar& est_mag) {
  if (clean_mag.shape() != est_mag.shape()) {
    throw ShapeError("mag_loss: clean " + clean_mag.shape().str() + " vs estimate " +
                     est_mag.shape().str());
  }
  return mse(clean_mag, est_mag);
}

// ---------------------------------------------------------------------------------------------

DiscriminatorParams build_discriminator(const DiscriminatorConfig& config, std::uint64_t seed) {
  if (config.channels.empty()) throw ConfigError("discriminator.channels: empty");
  DiscriminatorParams d;
  d.config = config;
  std::mt19937_64 rng(seed);
  Index cin = 2;
  for (std::size_t j = 0; j < config.channels.size(); ++j) {
    const Index c = config.channels[j];
    if (c < 1) throw ConfigError("discriminator.channels: must be positive");
    const std::string p = "disc." + std::to_string(j) + ".";
    const double bound = 1.0 / std::sqrt(static_cast<double>(9 * cin));
    d.store.add(p + "conv.weight", uniform_tensor(Shape{c, 3, 3, cin}, bound, rng));
    d.store.add(p + "conv.bias", uniform_tensor(Shape{c}, bound, rng));
    d.store.add(p + "norm.gamma", RealTensor::full(Shape{c}, 1.0));
    d.store.add(p + "norm.beta", RealTensor::zeros(Shape{c}));
    cin = c;
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin));
  d.store.add("disc.out.weight", uniform_tensor(Shape{1, cin}, bound, rng));
  d.store.add("disc.out.bias", uniform_tensor(Shape{1}, bound, rng));
  return d;
}

RealVar discriminator_forward(RealGraph& g, const RealVar& x_m, const RealVar& x_hat,
                              DiscriminatorParams& d, bool trainable) {
  if (x_m.rank() != 3 || x_m.shape() != x_hat.shape()) {
    throw ShapeError("discriminator: inputs must be equal [B,T,F], got " + x_m.shape().str() +
                     " and " + x_hat.shape().str());
  }
  auto bind = [&](const std::string& path) {
    auto& p = d.store.at(path);
    return trainable ? g.param(p) : g.frozen(p);
  };
  const Shape s = x_m.shape();
  const Index B = s[0];
  const Shape s4{s[0], s[1], s[2], 1};
  RealVar h = concat<Real>({reshape(x_m, s4), reshape(x_hat, s4)});
  Conv2dOptions o;
  o.stride_h = 2;
  o.stride_w = 2;
  for (std::size_t j = 0; j < d.config.channels.size(); ++j) {
    const std::string p = "disc." + std::to_string(j) + ".";
    h = conv2d(h, bind(p + "conv.weight"), bind(p + "conv.bias"), o);
    const Shape hs = h.shape();
    if (hs[1] * hs[2] < 2) {
      throw ShapeError("discriminator: input " + s.str() + " too small for " +
                       std::to_string(d.config.channels.size()) + " stride-2 stages");
    }
    auto flat = reshape(h, Shape{hs[0], hs[1] * hs[2], hs[3]});
    flat = instance_norm(flat, bind(p + "norm.gamma"), bind(p + "norm.beta"), d.config.norm_eps);
    h = reshape(hardswish(flat), hs);
  }
  const Shape hs = h.shape();
  auto pooled = mean_axis(reshape(h, Shape{hs[0], hs[1] * hs[2], hs[3]}), 1);
  auto logit = pointwise(pooled, bind("disc.out.weight"), bind("disc.out.bias"));
  return reshape(sigmoid(logit), Shape{B});
}

RealVar discriminator_loss(RealGraph& g, const RealVar& x_m, const RealVar& x_consis,
                           const RealTensor& q, DiscriminatorParams& d) {
  const Index B = x_m.dim(0);
  if (q.shape() != Shape{B}) {
    throw ShapeError("discriminator_loss: q must be [" + std::to_string(B) + "], got " +
                     q.shape().str());
  }
  auto real = discriminator_forward(g, x_m, x_m, d);
  auto fake = discriminator_forward(g, x_m, x_consis, d);
  auto ones = g.constant(RealTensor::full(Shape{B}, 1.0));
  return add(mse(real, ones), mse(fake, g.constant(q)));
}

RealVar metric_loss(RealGraph& g, const RealVar& x_m, const RealVar& x_consis,
                    DiscriminatorParams& d) {
  auto fake = discriminator_forward(g, x_m, x_consis, d, false);
  return mse(fake, g.constant(RealTensor::full(fake.shape(), 1.0)));
}

RealVar generator_loss(const LossWeights& w, const RealVar& l_mag, const RealVar* l_metric) {
  if (l_mag.value().size() != 1) throw ShapeError("generator_loss: l_mag must be scalar");
  auto out = scale(l_mag, w.lambda1());
  if (!w.uses_metric()) return out;
  if (!l_metric) throw ConfigError("lambda2: metric loss required when lambda2 > 0");
  return add(out, scale(*l_metric, w.lambda2()));
}

// ---------------------------------------------------------------------------------------------

namespace {

constexpr double kSnrFloor = -10.0;
constexpr double kSnrCeil = 35.0;
constexpr double kQualityMid = 15.0;
constexpr double kQualitySlope = 4.0;
constexpr double kSilence = 1e-6;

const RealStft& quality_stft() {
  static const RealStft cfg;
  return cfg;
}

RealTensor padded_row(const AudioClip& c, Index length) {
  RealTensor t(Shape{1, length});
  std::copy(c.samples.begin(), c.samples.end(), t.data());
  return t;
}

double logistic(double s) { return 1.0 / (1.0 + std::exp(-(s - kQualityMid) / kQualitySlope)); }

}  // namespace

double segmental_mag_snr(const AudioClip& clean, const AudioClip& est) {
  if (clean.size() != est.size()) {
    throw DataError("segmental_mag_snr: length mismatch (" + std::to_string(clean.size()) +
                    " vs " + std::to_string(est.size()) + ")");
  }
  const auto& cfg = quality_stft();
  const Index len = std::max(clean.size(), cfg.n_fft());
  const auto c = analyze(cfg, padded_row(clean, len));
  const auto e = analyze(cfg, padded_row(est, len));
  const Index T = c.mag.dim(1), F = c.mag.dim(2);
  std::vector<double> signal(static_cast<std::size_t>(T)), noise(static_cast<std::size_t>(T));
  double peak = 0.0;
  for (Index t = 0; t < T; ++t) {
    double s = 0.0, n = 0.0;
    for (Index f = 0; f < F; ++f) {
      const double cm = c.mag[t * F + f], em = e.mag[t * F + f];
      s += cm * cm;
      n += (cm - em) * (cm - em);
    }
    signal[t] = s;
    noise[t] = n;
    peak = std::max(peak, s);
  }
  if (peak == 0.0) {
    // Silent reference: only a silent estimate is a perfect match.
    for (double n : noise)
      if (n > 0.0) return kSnrFloor;
    return kSnrCeil;
  }
  double total = 0.0;
  Index count = 0;
  for (Index t = 0; t < T; ++t) {
    if (signal[t] < kSilence * peak) continue;
    const double snr = noise[t] == 0.0 ? kSnrCeil : 10.0 * std::log10(signal[t] / noise[t]);
    total += std::clamp(snr, kSnrFloor, kSnrCeil);
    ++count;
  }
  return total / static_cast<double>(count);
}

double proxy_quality(const AudioClip& clean, const AudioClip& est) {
  const double s = segmental_mag_snr(clean, est);
  const double lo = logistic(kSnrFloor), hi = logistic(kSnrCeil);
  return std::clamp((logistic(s) - lo) / (hi - lo), 0.0, 1.0);
}

double q_from_pesq(double pesq) { return std::clamp((pesq + 0.5) / 5.0, 0.0, 1.0); }

std::map<std::string, double> read_quality_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("quality scores: cannot open " + path);
  std::map<std::string, double> scores;
  std::string line;
  int lineno = 0;
  bool first_row = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const bool header_allowed = first_row;
    first_row = false;
    const auto comma = line.find(',');
    const std::string where = path + ":" + std::to_string(lineno);
    if (comma == std::string::npos) throw DataError("quality scores: missing comma at " + where);
    const std::string id = line.substr(0, comma);
    const std::string value = line.substr(comma + 1);
    double q = 0.0;
    std::size_t used = 0;
    try {
      q = std::stod(value, &used);
    } catch (const std::exception&) {
      if (header_allowed) continue;  // header
      throw DataError("quality scores: non-numeric Q at " + where);
    }
    if (used != value.size()) throw DataError("quality scores: trailing text at " + where);
    if (!(q >= 0.0 && q <= 1.0)) throw DataError("quality scores: Q outside [0,1] at " + where);
    if (id.empty()) throw DataError("quality scores: empty id at " + where);
    if (!scores.emplace(id, q).second) {
      throw DataError("quality scores: duplicate id '" + id + "' at " + where);
    }
  }
  return scores;
}

}  // namespace dtsnet
