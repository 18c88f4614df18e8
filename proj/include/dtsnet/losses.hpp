#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dtsnet/audio.hpp"
#include "dtsnet/model.hpp"
#include "dtsnet/spectral.hpp"

namespace dtsnet {

using RealStft = StftConfig<Real>;
using StftPtr = std::shared_ptr<const RealStft>;

/// Generator objective weights: lambda1 * L_mag + lambda2 * L_metric.
class LossWeights {
 public:
  LossWeights() = default;
  /// Throws ConfigError when either weight is negative or both are zero.
  LossWeights(double lambda1, double lambda2);
  /// Stores the weights without checking; call validate() before use.
  static LossWeights unchecked(double lambda1, double lambda2);
  void validate() const;

  double lambda1() const { return lambda1_; }
  double lambda2() const { return lambda2_; }
  bool uses_metric() const { return lambda2_ > 0.0; }
  /// lambda2 / lambda1; throws ConfigError when lambda1 is zero.
  double ratio() const;
  /// Weights for a ratio P with lambda1 = 1.
  static LossWeights from_ratio(double p);

 private:
  double lambda1_ = 1.0;
  double lambda2_ = 0.0;
};

/// MSE between clean magnitudes and |STFT(ISTFT(est * e^{i phase}))|.
/// `signal_length` 0 means (T - 1) * hop.
RealVar mag_consistency_loss(const RealVar& clean_mag, const RealVar& est_mag,
                             const RealTensor& noisy_phase, const StftPtr& stft,
                             Index signal_length = 0);

/// Plain magnitude MSE, the no-consistency ablation.
RealVar mag_loss(const RealVar& clean_mag, const RealVar& est_mag);

// ---------------------------------------------------------------------------------------------
// Metric discriminator

struct DiscriminatorConfig {
  std::vector<Index> channels{8, 16, 32, 64};
  double norm_eps = 1e-5;
};

struct DiscriminatorParams {
  DiscriminatorConfig config;
  RealParams store;
};

DiscriminatorParams build_discriminator(const DiscriminatorConfig& config, std::uint64_t seed);

/// D(x_m, x_hat) for magnitude maps [B, T, F] -> [B] in (0, 1). The two maps become input
/// channels of a stride-2 conv stack. With `trainable` false the parameters enter the graph as
/// constants, so gradients reach the inputs only.
RealVar discriminator_forward(RealGraph& g, const RealVar& x_m, const RealVar& x_hat,
                              DiscriminatorParams& d, bool trainable = true);

/// mean (D(x_m, x_m) - 1)^2 + mean (D(x_m, x_consis) - q)^2 with q: [B].
RealVar discriminator_loss(RealGraph& g, const RealVar& x_m, const RealVar& x_consis,
                           const RealTensor& q, DiscriminatorParams& d);

/// mean (D(x_m, x_consis) - 1)^2 with frozen discriminator parameters.
RealVar metric_loss(RealGraph& g, const RealVar& x_m, const RealVar& x_consis,
                    DiscriminatorParams& d);

/// lambda1 * l_mag + lambda2 * l_metric. With lambda2 = 0 the metric term is not connected and
/// `l_metric` may be null.
RealVar generator_loss(const LossWeights& w, const RealVar& l_mag, const RealVar* l_metric);

// ---------------------------------------------------------------------------------------------
// Quality labels

/// (clean, estimate) -> Q in [0, 1].
using QualityOracle = std::function<double(const AudioClip&, const AudioClip&)>;

/// Segmental magnitude-domain SNR in dB over STFT frames, each clamped to [-10, 35].
double segmental_mag_snr(const AudioClip& clean, const AudioClip& est);

/// Logistic map of segmental_mag_snr rescaled so the clamp range maps onto [0, 1] exactly.
/// Not PESQ.
double proxy_quality(const AudioClip& clean, const AudioClip& est);

/// (PESQ + 0.5) / 5, clamped to [0, 1].
double q_from_pesq(double pesq);

/// Reads "utterance-id,Q" rows. Lines starting with '#' and a header row whose Q column is not
/// numeric are skipped. Throws DataError on malformed rows, duplicates or Q outside [0, 1].
std::map<std::string, double> read_quality_scores(const std::string& path);

}  // namespace dtsnet
