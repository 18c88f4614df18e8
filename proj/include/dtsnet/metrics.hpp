#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "dtsnet/losses.hpp"

namespace dtsnet {

inline constexpr Index kSsnrFrame = 512;
inline constexpr Index kSsnrHop = 256;
inline constexpr double kSsnrMin = -10.0;
inline constexpr double kSsnrMax = 35.0;
/// Frames and bins below this fraction of the peak clean energy are skipped.
inline constexpr double kSilenceFloor = 1e-6;

/// Segmental SNR in dB: 512-sample frames at hop 256, per-frame SNR clamped to [-10, 35] and
/// averaged over frames whose clean energy clears the silence floor. A trailing partial frame
/// is included. Throws DataError on length mismatch or an all-zero reference.
double ssnr(const AudioClip& clean, const AudioClip& est);

struct SpectralErrors {
  double mag = 0.0;    // mean (|C| - |E|)^2 over all bins
  double phase = 0.0;  // |C|^2-weighted mean of |arg(C conj(E))| over non-silent bins, in [0, pi]
  double complex = 0.0;  // mean |C - E|^2 / mean |C|^2
};

/// Distances between the STFTs of a clean clip and an estimate of equal length.
SpectralErrors spectral_errors(const AudioClip& clean, const AudioClip& est, const RealStft& cfg);

struct EvalRow {
  std::string id;
  double ssnr = 0.0;
  SpectralErrors errors;
  double quality = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  EvalRow mean;
  /// (file name, reason) for every file that could not be paired or evaluated.
  std::vector<std::pair<std::string, std::string>> excluded;
  /// True when a matched pair failed to evaluate (unreadable, length mismatch, ...).
  bool any_failed = false;
};

/// Pairs clean_dir/*.wav with enhanced_dir/*.wav by file name and evaluates every pair.
EvalReport evaluate_dir(const std::string& clean_dir, const std::string& enhanced_dir,
                        const QualityOracle& oracle, const RealStft& cfg);

/// Metrics for one pair.
EvalRow evaluate_pair(const std::string& id, const AudioClip& clean, const AudioClip& est,
                      const QualityOracle& oracle, const RealStft& cfg);

/// Arithmetic means over rows (id "MEAN").
EvalRow mean_row(const std::vector<EvalRow>& rows);

/// Replaces each row's quality with an externally computed score keyed by file name. Rows with
/// no score move to the exclusions and are dropped from the mean.
void apply_external_quality(EvalReport& report, const std::map<std::string, double>& scores);

/// CSV with '#' comment lines describing the metric definitions, one row per utterance, a MEAN
/// row and an exclusions section. Values printed with 17 significant digits.
void write_report_csv(std::ostream& out, const EvalReport& report, const std::string& quality_label);

}  // namespace dtsnet
