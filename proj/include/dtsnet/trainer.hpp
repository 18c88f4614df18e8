#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "dtsnet/checkpoint.hpp"
#include "dtsnet/losses.hpp"

namespace dtsnet {

// ---------------------------------------------------------------------------------------------
// Optimizer

struct AdamWConfig {
  double lr = 5e-4;
  double beta1 = 0.8;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// First and second moments aligned with a ParamStore's order.
struct AdamState {
  std::vector<RealTensor> m;
  std::vector<RealTensor> v;
  std::int64_t t = 0;

  static AdamState for_store(const RealParams& store);
};

/// One decoupled-weight-decay Adam update using each parameter's accumulated grad:
/// p <- p (1 - lr wd); m, v updated; p <- p - (lr / bc1) m / (sqrt(v) / sqrt(bc2) + eps).
void adamw_step(RealParams& store, AdamState& state, const AdamWConfig& cfg);

// ---------------------------------------------------------------------------------------------
// Data

struct PairedClip {
  std::string id;
  AudioClip clean;
  AudioClip noisy;
};

/// Clean/noisy pairs held in memory.
class PairedDataset {
 public:
  PairedDataset() = default;
  /// Throws DataError when a pair differs in length or rate.
  explicit PairedDataset(std::vector<PairedClip> pairs);

  /// Reads root/clean/*.wav and root/noisy/*.wav matched by file name, sorted by name.
  static PairedDataset load(const std::string& root);

  /// Seeded shuffle, then the last round(valid_fraction * n) pairs (at least one when n > 1
  /// and the fraction is positive) form the validation set.
  std::pair<PairedDataset, PairedDataset> split(double valid_fraction, std::uint64_t seed) const;

  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }
  const PairedClip& operator[](std::size_t i) const { return pairs_[i]; }
  const std::vector<PairedClip>& pairs() const { return pairs_; }

 private:
  std::vector<PairedClip> pairs_;
};

struct Batch {
  RealTensor noisy_mag;    // [B, T, F]
  RealTensor noisy_phase;  // [B, T, F]
  RealTensor clean_mag;    // [B, T, F]
  RealTensor clean_wave;   // [B, L]
  RealTensor noisy_wave;   // [B, L]
  std::vector<std::string> ids;
  std::vector<Index> offsets;
};

/// batch_size pairs drawn uniformly with replacement, each cropped at one random offset shared
/// by its clean and noisy clip (right zero-padded when shorter than `segment`).
Batch make_batch(const PairedDataset& data, Index batch_size, Index segment,
                 std::mt19937_64& rng, const RealStft& stft);

// ---------------------------------------------------------------------------------------------
// Training

struct TrainConfig {
  Index batch_size = 2;
  std::int64_t max_steps = 20000;
  AdamWConfig adam;
  std::int64_t eval_every = 500;
  std::int64_t checkpoint_every = 5000;
  LossWeights weights;
  bool consistency = true;
  std::uint64_t seed = 0;
  Index segment_samples = kSegmentSamples;
  double valid_fraction = 0.1;
  /// Validation utterances scored per evaluation; 0 means all.
  Index eval_items = 0;

  void validate() const;
};

struct StepLosses {
  std::int64_t step = 0;  // updates completed after this step
  double l_mag = 0.0;
  std::optional<double> l_metric;
  std::optional<double> l_disc;
  double total = 0.0;
};

struct EvalPoint {
  std::int64_t step = 0;
  double mag_error = 0.0;
  double quality = 0.0;
};

/// Writes the curve CSV: step, l_mag_consis, l_metric, l_disc, val_mag_error, val_quality.
/// Absent values are empty fields.
class CurveLog {
 public:
  explicit CurveLog(std::ostream& out) : out_(out) {}
  void header(const std::string& quality_label, bool consistency);
  void write(const StepLosses& s, const std::optional<EvalPoint>& e);
  void write(const EvalPoint& e);

 private:
  std::ostream& out_;
};

/// Enhances one clip: STFT, mask, noisy phase, ISTFT. Output length equals input length.
AudioClip enhance_clip(ModelParams& model, const RealStft& stft, const AudioClip& noisy);

class Trainer {
 public:
  Trainer(ModelParams model, TrainConfig config, PairedDataset train, PairedDataset valid,
          QualityOracle oracle = proxy_quality, std::string oracle_label = "");

  /// One generator update (and one discriminator update when lambda2 > 0).
  /// Throws NumericalError after writing a diagnostic dump on a non-finite loss or gradient.
  StepLosses step();

  /// Steps until config.max_steps, logging every step and evaluating every eval_every steps.
  /// Checkpoints go to `checkpoint_dir` (skipped when empty) every checkpoint_every steps and at
  /// the end.
  void run(CurveLog* log, const std::string& checkpoint_dir);

  /// Validation mean magnitude error and mean oracle quality.
  EvalPoint evaluate();

  Checkpoint checkpoint(const std::string& config_text) const;
  /// Restores parameters, optimizer moments, step and RNG state.
  void restore(const Checkpoint& ckpt);

  std::int64_t step_count() const { return step_; }
  ModelParams& model() { return model_; }
  const TrainConfig& config() const { return config_; }
  const StftPtr& stft() const { return stft_; }
  std::optional<DiscriminatorParams>& discriminator() { return disc_; }
  /// Paths of parameters that have not yet received a nonzero gradient.
  std::vector<std::string> untouched_parameters() const;

  /// Directory for NaN dumps; defaults to the working directory.
  void set_diagnostic_dir(std::string dir) { diag_dir_ = std::move(dir); }
  /// Text used as config echo in checkpoints written by run().
  void set_config_text(std::string text) { config_text_ = std::move(text); }
  const std::string& oracle_label() const { return oracle_label_; }

 private:
  [[noreturn]] void abort_numerical(const Batch& batch, const std::string& what, double loss);

  ModelParams model_;
  TrainConfig config_;
  PairedDataset train_;
  PairedDataset valid_;
  QualityOracle oracle_;
  std::string oracle_label_;
  StftPtr stft_;
  AdamState adam_;
  std::optional<DiscriminatorParams> disc_;
  AdamState disc_adam_;
  std::mt19937_64 rng_;
  std::int64_t step_ = 0;
  std::vector<bool> touched_;
  std::string diag_dir_ = ".";
  std::string config_text_;
};

/// Serialized mt19937_64 state.
std::string rng_to_string(const std::mt19937_64& rng);
std::mt19937_64 rng_from_string(const std::string& s);

// ---------------------------------------------------------------------------------------------
// Synthetic data

struct SynthConfig {
  Index pairs = 8;
  Index samples = kSegmentSamples;
  double snr_min_db = 0.0;
  double snr_max_db = 15.0;
};

/// Harmonic tone stacks under amplitude envelopes plus spectrally shaped noise at a random SNR.
/// Samples lie on the 16-bit grid, so noisy - clean is exactly the added noise after a WAV
/// round trip. `snrs` receives the requested per-pair SNR in dB when non-null.
std::vector<PairedClip> synth_pairs(const SynthConfig& cfg, std::uint64_t seed,
                                    std::vector<double>* snrs = nullptr);

/// Writes synth_pairs as out_dir/clean/*.wav and out_dir/noisy/*.wav.
void synth_dataset(const SynthConfig& cfg, std::uint64_t seed, const std::string& out_dir);

}  // namespace dtsnet
