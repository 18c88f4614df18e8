#include "dtsnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "dtsnet/wav.hpp"

namespace dtsnet {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------------------------
// Optimizer

AdamState AdamState::for_store(const RealParams& store) {
  AdamState s;
  for (std::size_t i = 0; i < store.size(); ++i) {
    s.m.push_back(RealTensor::zeros(store[i].value.shape()));
    s.v.push_back(RealTensor::zeros(store[i].value.shape()));
  }
  return s;
}

void adamw_step(RealParams& store, AdamState& state, const AdamWConfig& cfg) {
  if (state.m.size() != store.size() || state.v.size() != store.size()) {
    throw ShapeError("adamw: optimizer state does not match the parameter store");
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const double step_size = cfg.lr / bc1;
  const double bc2_sqrt = std::sqrt(bc2);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto p = store[i].value.vec().array();
    const auto g = store[i].grad.vec().array();
    auto m = state.m[i].vec().array();
    auto v = state.v[i].vec().array();
    p *= 1.0 - cfg.lr * cfg.weight_decay;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    p -= step_size * m / (v.sqrt() / bc2_sqrt + cfg.eps);
  }
}

// ---------------------------------------------------------------------------------------------
// Data

PairedDataset::PairedDataset(std::vector<PairedClip> pairs) : pairs_(std::move(pairs)) {
  for (const auto& p : pairs_) {
    check_clip(p.clean, ("clean " + p.id).c_str());
    check_clip(p.noisy, ("noisy " + p.id).c_str());
    if (p.clean.size() != p.noisy.size()) {
      throw DataError(p.id + ": clean has " + std::to_string(p.clean.size()) +
                      " samples, noisy has " + std::to_string(p.noisy.size()));
    }
    if (p.clean.size() == 0) throw DataError(p.id + ": empty clip");
  }
}

PairedDataset PairedDataset::load(const std::string& root) {
  const fs::path clean_dir = fs::path(root) / "clean";
  const fs::path noisy_dir = fs::path(root) / "noisy";
  for (const auto& d : {clean_dir, noisy_dir}) {
    if (!fs::is_directory(d)) throw DataError(d.string() + ": missing directory");
  }
  auto names = [](const fs::path& dir) {
    std::set<std::string> s;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".wav") {
        s.insert(e.path().filename().string());
      }
    }
    return s;
  };
  const auto clean = names(clean_dir);
  const auto noisy = names(noisy_dir);
  for (const auto& n : noisy) {
    if (!clean.count(n)) throw DataError(n + ": noisy file has no clean counterpart");
  }
  for (const auto& n : clean) {
    if (!noisy.count(n)) throw DataError(n + ": clean file has no noisy counterpart");
  }
  if (clean.empty()) throw DataError(root + ": no .wav pairs found");
  std::vector<PairedClip> pairs;
  for (const auto& n : clean) {
    pairs.push_back({n, wav_read((clean_dir / n).string()), wav_read((noisy_dir / n).string())});
  }
  return PairedDataset(std::move(pairs));
}

std::pair<PairedDataset, PairedDataset> PairedDataset::split(double valid_fraction,
                                                             std::uint64_t seed) const {
  if (!(valid_fraction >= 0.0 && valid_fraction < 1.0)) {
    throw ConfigError("valid_fraction: must be in [0, 1)");
  }
  std::vector<std::size_t> order(pairs_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_valid = 0;
  if (valid_fraction > 0.0 && pairs_.size() > 1) {
    n_valid = static_cast<std::size_t>(std::llround(valid_fraction * pairs_.size()));
    n_valid = std::clamp<std::size_t>(n_valid, 1, pairs_.size() - 1);
  }
  std::vector<PairedClip> train, valid;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k + n_valid < order.size() ? train : valid).push_back(pairs_[order[k]]);
  }
  return {PairedDataset(std::move(train)), PairedDataset(std::move(valid))};
}

Batch make_batch(const PairedDataset& data, Index batch_size, Index segment,
                 std::mt19937_64& rng, const RealStft& stft) {
  if (data.empty()) throw DataError("make_batch: empty dataset");
  if (segment < stft.n_fft()) {
    throw ConfigError("segment_samples: must be at least n_fft (" + std::to_string(stft.n_fft()) +
                      ")");
  }
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::vector<AudioClip> clean, noisy;
  Batch b;
  for (Index i = 0; i < batch_size; ++i) {
    const auto& p = data[pick(rng)];
    const Index off = draw_crop_offset(p.clean.size(), segment, rng);
    clean.push_back(crop(p.clean, off, segment));
    noisy.push_back(crop(p.noisy, off, segment));
    b.ids.push_back(p.id);
    b.offsets.push_back(off);
  }
  b.clean_wave = stack_clips(clean);
  b.noisy_wave = stack_clips(noisy);
  auto n = analyze(stft, b.noisy_wave);
  b.noisy_mag = std::move(n.mag);
  b.noisy_phase = std::move(n.phase);
  b.clean_mag = analyze(stft, b.clean_wave).mag;
  return b;
}

// ---------------------------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size: must be >= 1");
  if (max_steps < 0) throw ConfigError("max_steps: must be >= 0");
  if (!(adam.lr > 0.0)) throw ConfigError("lr: must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("beta1: must be in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("beta2: must be in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("eps: must be > 0");
  if (!(adam.weight_decay >= 0.0)) throw ConfigError("weight_decay: must be >= 0");
  if (eval_every < 0) throw ConfigError("eval_every: must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every: must be >= 0");
  if (segment_samples < 1) throw ConfigError("segment_samples: must be positive");
  if (!(valid_fraction >= 0.0 && valid_fraction < 1.0)) {
    throw ConfigError("valid_fraction: must be in [0, 1)");
  }
  if (eval_items < 0) throw ConfigError("eval_items: must be >= 0");
  weights.validate();
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

RealTensor polar_values(const RealTensor& mag, const RealTensor& phase) {
  auto dims = mag.shape().dims();
  dims.push_back(2);
  auto z = RealTensor::uninitialized(Shape(dims));
  for (Index i = 0; i < mag.size(); ++i) {
    z[2 * i] = mag[i] * std::cos(phase[i]);
    z[2 * i + 1] = mag[i] * std::sin(phase[i]);
  }
  return z;
}

std::vector<NamedTensor> export_moments(const RealParams& store, const std::vector<RealTensor>& m) {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < store.size(); ++i) out.push_back({store[i].path, m[i]});
  return out;
}

void import_moments(const RealParams& store, std::vector<RealTensor>& m,
                    const std::vector<NamedTensor>& saved, const std::string& what) {
  if (saved.size() != store.size()) throw DataError(what + ": tensor count mismatch");
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (saved[i].path != store[i].path || saved[i].value.shape() != store[i].value.shape()) {
      throw DataError(what + ": entry " + std::to_string(i) + " does not match '" +
                      store[i].path + "'");
    }
    m[i] = saved[i].value;
  }
}

double mean_sq_mag_error(const RealStft& stft, const AudioClip& clean, const AudioClip& est) {
  const Index len = std::max(clean.size(), stft.n_fft());
  RealTensor sig(Shape{2, len});
  std::copy(clean.samples.begin(), clean.samples.end(), sig.data());
  std::copy(est.samples.begin(), est.samples.end(), sig.data() + len);
  const auto s = analyze(stft, sig);
  const Index half = s.mag.size() / 2;
  return (s.mag.vec().head(half) - s.mag.vec().tail(half)).squaredNorm() /
         static_cast<double>(half);
}

}  // namespace

void CurveLog::header(const std::string& quality_label, bool consistency) {
  out_ << "# l_mag_consis: magnitude MSE "
       << (consistency ? "after consistency projection" : "without consistency projection")
       << "\n# val_mag_error: mean squared STFT magnitude error on validation clips\n"
       << "# val_quality: " << quality_label << "\n"
       << "step,l_mag_consis,l_metric,l_disc,val_mag_error,val_quality\n";
  out_.flush();
}

void CurveLog::write(const StepLosses& s, const std::optional<EvalPoint>& e) {
  out_ << s.step << ',' << fmt(s.l_mag) << ',' << opt(s.l_metric) << ',' << opt(s.l_disc) << ','
       << (e ? fmt(e->mag_error) : "") << ',' << (e ? fmt(e->quality) : "") << '\n';
  out_.flush();
}

void CurveLog::write(const EvalPoint& e) {
  out_ << e.step << ",,,," << fmt(e.mag_error) << ',' << fmt(e.quality) << '\n';
  out_.flush();
}

AudioClip enhance_clip(ModelParams& model, const RealStft& stft, const AudioClip& noisy) {
  if (model.config.freq_bins() != stft.bins()) {
    throw ConfigError("n_fft: model expects " + std::to_string(model.config.freq_bins()) +
                      " bins, STFT gives " + std::to_string(stft.bins()));
  }
  AudioClip out;
  out.sample_rate = noisy.sample_rate;
  if (noisy.size() == 0) return out;
  const Index len = std::max(noisy.size(), stft.n_fft());
  RealTensor sig(Shape{1, len});
  std::copy(noisy.samples.begin(), noisy.samples.end(), sig.data());
  const auto spec = analyze(stft, sig);
  RealGraph g;
  g.set_enabled(false);
  const auto res = model_forward(g, g.constant(spec.mag), model);
  const auto wave = istft_forward(stft, polar_values(res.enhanced.value(), spec.phase), len);
  out.samples.assign(wave.data(), wave.data() + noisy.size());
  return out;
}

Trainer::Trainer(ModelParams model, TrainConfig config, PairedDataset train, PairedDataset valid,
                 QualityOracle oracle, std::string oracle_label)
    : model_(std::move(model)),
      config_(config),
      train_(std::move(train)),
      valid_(std::move(valid)),
      oracle_(std::move(oracle)),
      oracle_label_(std::move(oracle_label)),
      rng_(config.seed) {
  config_.validate();
  model_.config.validate();
  if (train_.empty()) throw DataError("trainer: empty training set");
  if (oracle_label_.empty()) {
    oracle_label_ = "proxy quality from segmental magnitude SNR (logistic map), not PESQ";
  }
  stft_ = std::make_shared<const RealStft>(model_.config.n_fft, model_.config.win_length,
                                           model_.config.hop);
  if (config_.segment_samples < stft_->n_fft()) {
    throw ConfigError("segment_samples: must be at least n_fft (" + std::to_string(stft_->n_fft()) +
                      ")");
  }
  adam_ = AdamState::for_store(model_.store);
  if (config_.weights.uses_metric()) {
    disc_ = build_discriminator(DiscriminatorConfig{}, config_.seed ^ 0x5eed0d15c0ULL);
    disc_adam_ = AdamState::for_store(disc_->store);
  }
  touched_.assign(model_.store.size(), false);
}

StepLosses Trainer::step() {
  const Index seg = config_.segment_samples;
  const Batch batch = make_batch(train_, config_.batch_size, seg, rng_, *stft_);
  StepLosses out;

  RealGraph g;
  auto clean = g.constant(batch.clean_mag);
  auto res = model_forward(g, g.constant(batch.noisy_mag), model_);
  RealVar est = config_.consistency
                    ? consistency_project(res.enhanced, batch.noisy_phase, stft_, seg)
                    : res.enhanced;
  auto l_mag = mse(clean, est);
  std::optional<RealVar> l_metric;
  if (disc_) l_metric = metric_loss(g, clean, est, *disc_);
  auto total = generator_loss(config_.weights, l_mag, l_metric ? &*l_metric : nullptr);
  out.l_mag = l_mag.value()[0];
  if (l_metric) out.l_metric = l_metric->value()[0];
  out.total = total.value()[0];
  if (!std::isfinite(out.total)) abort_numerical(batch, "generator loss", out.total);

  model_.store.zero_grad();
  g.backward(total);
  for (std::size_t i = 0; i < model_.store.size(); ++i) {
    const auto& grad = model_.store[i].grad;
    if (!grad.all_finite()) abort_numerical(batch, "gradient of " + model_.store[i].path, out.total);
    if (!touched_[i] && (grad.vec().array() != 0.0).any()) touched_[i] = true;
  }
  adamw_step(model_.store, adam_, config_.adam);

  if (disc_) {
    const Index B = config_.batch_size;
    const auto waves = istft_forward(*stft_, polar_values(res.enhanced.value(), batch.noisy_phase),
                                     seg);
    RealTensor q(Shape{B});
    for (Index b = 0; b < B; ++b) {
      q[b] = std::clamp(oracle_(clip_from_row(batch.clean_wave, b), clip_from_row(waves, b)), 0.0,
                        1.0);
    }
    RealGraph gd;
    auto l_disc = discriminator_loss(gd, gd.constant(batch.clean_mag), gd.constant(est.value()),
                                     q, *disc_);
    out.l_disc = l_disc.value()[0];
    if (!std::isfinite(*out.l_disc)) abort_numerical(batch, "discriminator loss", *out.l_disc);
    disc_->store.zero_grad();
    gd.backward(l_disc);
    for (std::size_t i = 0; i < disc_->store.size(); ++i) {
      if (!disc_->store[i].grad.all_finite()) {
        abort_numerical(batch, "gradient of " + disc_->store[i].path, *out.l_disc);
      }
    }
    adamw_step(disc_->store, disc_adam_, config_.adam);
  }
  for (std::size_t i = 0; i < model_.store.size(); ++i) {
    if (!model_.store[i].value.all_finite()) {
      abort_numerical(batch, "parameter " + model_.store[i].path + " after update", out.total);
    }
  }
  out.step = ++step_;
  return out;
}

void Trainer::abort_numerical(const Batch& batch, const std::string& what, double loss) {
  std::string ids;
  for (std::size_t i = 0; i < batch.ids.size(); ++i) {
    ids += (i ? " " : "") + batch.ids[i] + "@" + std::to_string(batch.offsets[i]);
  }
  const auto path = (fs::path(diag_dir_) / "nan_dump.txt").string();
  std::ofstream dump(path);
  if (dump) {
    dump << "step=" << step_ << "\nwhat=" << what << "\nloss=" << fmt(loss) << "\nbatch=" << ids
         << "\nnoisy_mag_finite=" << batch.noisy_mag.all_finite()
         << "\nclean_mag_finite=" << batch.clean_mag.all_finite() << "\n";
    for (std::size_t i = 0; i < model_.store.size(); ++i) {
      const auto& p = model_.store[i];
      dump << p.path << " value_finite=" << p.value.all_finite()
           << " grad_finite=" << p.grad.all_finite() << " |value|max=" << fmt(p.value.vec().cwiseAbs().maxCoeff())
           << "\n";
    }
  }
  throw NumericalError("non-finite " + what + " at step " + std::to_string(step_) + " (batch " +
                       ids + "); diagnostic dump: " + (dump ? path : "unwritable"));
}

void Trainer::run(CurveLog* log, const std::string& checkpoint_dir) {
  auto save = [&](const std::string& name) {
    if (checkpoint_dir.empty()) return;
    fs::create_directories(checkpoint_dir);
    save_checkpoint((fs::path(checkpoint_dir) / name).string(), checkpoint(config_text_));
  };
  if (step_ == 0 && config_.eval_every > 0 && log) log->write(evaluate());
  while (step_ < config_.max_steps) {
    const auto s = step();
    std::optional<EvalPoint> e;
    if (config_.eval_every > 0 && step_ % config_.eval_every == 0) e = evaluate();
    if (log) log->write(s, e);
    if (config_.checkpoint_every > 0 && step_ % config_.checkpoint_every == 0) {
      save("step_" + std::to_string(step_) + ".ckpt");
    }
  }
  save("latest.ckpt");
}

EvalPoint Trainer::evaluate() {
  const auto& set = valid_.empty() ? train_ : valid_;
  std::size_t n = set.size();
  if (config_.eval_items > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(config_.eval_items));
  EvalPoint e;
  e.step = step_;
  for (std::size_t i = 0; i < n; ++i) {
    const auto est = enhance_clip(model_, *stft_, set[i].noisy);
    e.mag_error += mean_sq_mag_error(*stft_, set[i].clean, est);
    e.quality += std::clamp(oracle_(set[i].clean, est), 0.0, 1.0);
  }
  e.mag_error /= static_cast<double>(n);
  e.quality /= static_cast<double>(n);
  return e;
}

Checkpoint Trainer::checkpoint(const std::string& config_text) const {
  Checkpoint c;
  c.config_text = config_text;
  c.sections["model"] = export_params(model_.store);
  c.sections["model.adam.m"] = export_moments(model_.store, adam_.m);
  c.sections["model.adam.v"] = export_moments(model_.store, adam_.v);
  c.meta["step"] = std::to_string(step_);
  c.meta["rng"] = rng_to_string(rng_);
  c.meta["model.adam.t"] = std::to_string(adam_.t);
  c.meta["variant"] = to_string(model_.config.variant);
  if (disc_) {
    c.sections["disc"] = export_params(disc_->store);
    c.sections["disc.adam.m"] = export_moments(disc_->store, disc_adam_.m);
    c.sections["disc.adam.v"] = export_moments(disc_->store, disc_adam_.v);
    c.meta["disc.adam.t"] = std::to_string(disc_adam_.t);
  }
  return c;
}

void Trainer::restore(const Checkpoint& c) {
  import_params(model_.store, c.section("model"), "checkpoint model");
  import_moments(model_.store, adam_.m, c.section("model.adam.m"), "checkpoint model.adam.m");
  import_moments(model_.store, adam_.v, c.section("model.adam.v"), "checkpoint model.adam.v");
  adam_.t = std::stoll(c.meta_value("model.adam.t"));
  step_ = std::stoll(c.meta_value("step"));
  rng_ = rng_from_string(c.meta_value("rng"));
  if (disc_) {
    import_params(disc_->store, c.section("disc"), "checkpoint disc");
    import_moments(disc_->store, disc_adam_.m, c.section("disc.adam.m"), "checkpoint disc.adam.m");
    import_moments(disc_->store, disc_adam_.v, c.section("disc.adam.v"), "checkpoint disc.adam.v");
    disc_adam_.t = std::stoll(c.meta_value("disc.adam.t"));
  } else if (c.sections.count("disc")) {
    throw ConfigError("lambda2: checkpoint holds a discriminator but lambda2 is 0");
  }
}

std::vector<std::string> Trainer::untouched_parameters() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < model_.store.size(); ++i) {
    if (!touched_[i]) out.push_back(model_.store[i].path);
  }
  return out;
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
  std::istringstream is(s);
  std::mt19937_64 rng;
  is >> rng;
  if (is.fail()) throw DataError("checkpoint: malformed rng state");
  return rng;
}

// ---------------------------------------------------------------------------------------------
// Synthetic data

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double on_grid(double x) { return static_cast<double>(quantize_sample(x)) / 32768.0; }

std::vector<double> synth_clean(Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(static_cast<std::size_t>(n), 0.0);
  const int voices = 1 + static_cast<int>(u(rng) * 2.0);
  for (int v = 0; v < voices; ++v) {
    const double f0 = 100.0 + 200.0 * u(rng);
    const double vib_rate = 3.0 + 3.0 * u(rng), vib_depth = 0.02 * u(rng);
    const int harmonics = std::max(1, static_cast<int>(4000.0 / f0));
    std::vector<double> phase0(static_cast<std::size_t>(harmonics));
    for (auto& p : phase0) p = kTwoPi * u(rng);
    // Syllable-like bursts: raised-cosine envelopes of 80-300 ms separated by short gaps.
    std::vector<double> env(static_cast<std::size_t>(n), 0.0);
    Index pos = static_cast<Index>(u(rng) * 0.05 * kSampleRate);
    while (pos < n) {
      const Index len = static_cast<Index>((0.08 + 0.22 * u(rng)) * kSampleRate);
      const double amp = 0.4 + 0.6 * u(rng);
      for (Index i = 0; i < len && pos + i < n; ++i) {
        env[pos + i] = amp * 0.5 * (1.0 - std::cos(kTwoPi * static_cast<double>(i) / len));
      }
      pos += len + static_cast<Index>((0.02 + 0.1 * u(rng)) * kSampleRate);
    }
    double phase = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / kSampleRate;
      const double f = f0 * (1.0 + vib_depth * std::sin(kTwoPi * vib_rate * t));
      phase += kTwoPi * f / kSampleRate;
      double s = 0.0;
      for (int h = 1; h <= harmonics; ++h) s += std::sin(h * phase + phase0[h - 1]) / h;
      x[i] += env[i] * s;
    }
  }
  double peak = 0.0;
  for (double s : x) peak = std::max(peak, std::abs(s));
  const double gain = peak > 0.0 ? (0.2 + 0.15 * u(rng)) / peak : 0.0;
  for (auto& s : x) s = on_grid(s * gain);
  return x;
}

/// White Gaussian noise through a random one-pole low-pass and a random one-pole high-pass,
/// with a slow amplitude modulation.
std::vector<double> synth_noise(Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double lp = 0.1 + 0.85 * u(rng);
  const double hp = 0.5 + 0.49 * u(rng);
  const double mod_rate = 0.5 + 2.0 * u(rng), mod_depth = 0.5 * u(rng);
  std::vector<double> y(static_cast<std::size_t>(n));
  double low = 0.0, prev_in = 0.0, high = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double w = gauss(rng);
    low += lp * (w - low);
    high = hp * (high + low - prev_in);
    prev_in = low;
    const double t = static_cast<double>(i) / kSampleRate;
    y[i] = high * (1.0 + mod_depth * std::sin(kTwoPi * mod_rate * t));
  }
  return y;
}

double energy(const std::vector<double>& x) {
  double e = 0.0;
  for (double s : x) e += s * s;
  return e;
}

}  // namespace

std::vector<PairedClip> synth_pairs(const SynthConfig& cfg, std::uint64_t seed,
                                    std::vector<double>* snrs) {
  if (cfg.pairs < 1) throw ConfigError("pairs: must be >= 1");
  if (cfg.samples < 1) throw ConfigError("samples: must be >= 1");
  if (!(cfg.snr_min_db <= cfg.snr_max_db)) throw ConfigError("snr range: min exceeds max");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> snr_dist(cfg.snr_min_db, cfg.snr_max_db);
  std::vector<PairedClip> pairs;
  if (snrs) snrs->clear();
  for (Index k = 0; k < cfg.pairs; ++k) {
    PairedClip p;
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04lld.wav", static_cast<long long>(k));
    p.id = id;
    p.clean.samples = synth_clean(cfg.samples, rng);
    auto noise = synth_noise(cfg.samples, rng);
    const double snr = snr_dist(rng);
    const double es = energy(p.clean.samples), en = energy(noise);
    const double g = en > 0.0 && es > 0.0 ? std::sqrt(es / (en * std::pow(10.0, snr / 10.0))) : 0.0;
    p.noisy.samples.resize(p.clean.samples.size());
    for (std::size_t i = 0; i < noise.size(); ++i) {
      p.noisy.samples[i] = on_grid(p.clean.samples[i] + g * noise[i]);
    }
    if (snrs) snrs->push_back(snr);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void synth_dataset(const SynthConfig& cfg, std::uint64_t seed, const std::string& out_dir) {
  const auto pairs = synth_pairs(cfg, seed);
  const fs::path clean = fs::path(out_dir) / "clean";
  const fs::path noisy = fs::path(out_dir) / "noisy";
  fs::create_directories(clean);
  fs::create_directories(noisy);
  for (const auto& p : pairs) {
    wav_write((clean / p.id).string(), p.clean);
    wav_write((noisy / p.id).string(), p.noisy);
  }
}

}  // namespace dtsnet
