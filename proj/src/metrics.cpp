#include "dtsnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <set>

#include "dtsnet/wav.hpp"

namespace dtsnet {

namespace fs = std::filesystem;

double ssnr(const AudioClip& clean, const AudioClip& est) {
  if (clean.size() != est.size()) {
    throw DataError("ssnr: length mismatch (" + std::to_string(clean.size()) + " vs " +
                    std::to_string(est.size()) + ")");
  }
  const Index L = clean.size();
  if (L == 0) throw DataError("ssnr: empty clip");
  std::vector<double> signal, noise;
  for (Index start = 0; start < L; start += kSsnrHop) {
    const Index end = std::min(L, start + kSsnrFrame);
    double s = 0.0, n = 0.0;
    for (Index i = start; i < end; ++i) {
      const double c = clean.samples[i], d = c - est.samples[i];
      s += c * c;
      n += d * d;
    }
    signal.push_back(s);
    noise.push_back(n);
    if (end == L) break;
  }
  const double peak = *std::max_element(signal.begin(), signal.end());
  if (peak == 0.0) throw DataError("ssnr: clean reference is silent");
  double total = 0.0;
  Index count = 0;
  for (std::size_t k = 0; k < signal.size(); ++k) {
    if (signal[k] < kSilenceFloor * peak) continue;
    const double snr = noise[k] == 0.0 ? kSsnrMax : 10.0 * std::log10(signal[k] / noise[k]);
    total += std::clamp(snr, kSsnrMin, kSsnrMax);
    ++count;
  }
  return total / static_cast<double>(count);
}

SpectralErrors spectral_errors(const AudioClip& clean, const AudioClip& est, const RealStft& cfg) {
  if (clean.size() != est.size()) {
    throw DataError("spectral_errors: length mismatch (" + std::to_string(clean.size()) + " vs " +
                    std::to_string(est.size()) + ")");
  }
  const Index len = std::max(clean.size(), cfg.n_fft());
  // One transform per clip so identical inputs give bit-identical spectra.
  auto spectrum = [&](const AudioClip& clip) {
    RealTensor sig(Shape{1, len});
    std::copy(clip.samples.begin(), clip.samples.end(), sig.data());
    return stft_forward(cfg, sig);
  };
  const auto zc = spectrum(clean), ze = spectrum(est);
  const Index bins = zc.size() / 2;
  const double* c = zc.data();
  const double* e = ze.data();

  double peak = 0.0, clean_power = 0.0;
  for (Index k = 0; k < bins; ++k) {
    const double p = c[2 * k] * c[2 * k] + c[2 * k + 1] * c[2 * k + 1];
    peak = std::max(peak, p);
    clean_power += p;
  }
  if (peak == 0.0) throw DataError("spectral_errors: clean reference is silent");

  SpectralErrors r;
  double diff_power = 0.0, wsum = 0.0, wpha = 0.0;
  for (Index k = 0; k < bins; ++k) {
    const std::complex<double> C(c[2 * k], c[2 * k + 1]), E(e[2 * k], e[2 * k + 1]);
    const double dm = std::abs(C) - std::abs(E);
    r.mag += dm * dm;
    diff_power += std::norm(C - E);
    const double w = std::norm(C);
    if (w < kSilenceFloor * peak) continue;
    wsum += w;
    wpha += w * std::abs(std::arg(C * std::conj(E)));
  }
  r.mag /= static_cast<double>(bins);
  r.phase = std::min(wpha / wsum, std::numbers::pi);
  r.complex = diff_power / clean_power;
  return r;
}

EvalRow evaluate_pair(const std::string& id, const AudioClip& clean, const AudioClip& est,
                      const QualityOracle& oracle, const RealStft& cfg) {
  EvalRow row;
  row.id = id;
  row.ssnr = ssnr(clean, est);
  row.errors = spectral_errors(clean, est, cfg);
  row.quality = std::clamp(oracle(clean, est), 0.0, 1.0);
  return row;
}

EvalRow mean_row(const std::vector<EvalRow>& rows) {
  EvalRow m;
  m.id = "MEAN";
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.ssnr += r.ssnr;
    m.errors.mag += r.errors.mag;
    m.errors.phase += r.errors.phase;
    m.errors.complex += r.errors.complex;
    m.quality += r.quality;
  }
  const double n = static_cast<double>(rows.size());
  m.ssnr /= n;
  m.errors.mag /= n;
  m.errors.phase /= n;
  m.errors.complex /= n;
  m.quality /= n;
  return m;
}

namespace {

std::set<std::string> wav_names(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError(dir + ": not a directory");
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") {
      names.insert(e.path().filename().string());
    }
  }
  return names;
}

}  // namespace

EvalReport evaluate_dir(const std::string& clean_dir, const std::string& enhanced_dir,
                        const QualityOracle& oracle, const RealStft& cfg) {
  const auto clean = wav_names(clean_dir);
  const auto enhanced = wav_names(enhanced_dir);
  EvalReport report;
  for (const auto& name : enhanced) {
    if (!clean.count(name)) report.excluded.emplace_back(name, "no clean counterpart");
  }
  for (const auto& name : clean) {
    if (!enhanced.count(name)) {
      report.excluded.emplace_back(name, "no enhanced counterpart");
      continue;
    }
    try {
      const auto c = wav_read((fs::path(clean_dir) / name).string());
      const auto e = wav_read((fs::path(enhanced_dir) / name).string());
      report.rows.push_back(evaluate_pair(name, c, e, oracle, cfg));
    } catch (const Error& err) {
      report.excluded.emplace_back(name, err.what());
      report.any_failed = true;
    }
  }
  report.mean = mean_row(report.rows);
  return report;
}

void apply_external_quality(EvalReport& report, const std::map<std::string, double>& scores) {
  std::vector<EvalRow> kept;
  for (auto& r : report.rows) {
    auto it = scores.find(r.id);
    if (it == scores.end()) {
      report.excluded.emplace_back(r.id, "no external quality score");
      continue;
    }
    r.quality = it->second;
    kept.push_back(r);
  }
  report.rows = std::move(kept);
  report.mean = mean_row(report.rows);
}

void write_report_csv(std::ostream& out, const EvalReport& report,
                      const std::string& quality_label) {
  out << "# ssnr: 512-sample frames, hop 256, per-frame SNR clamped to [-10, 35] dB, frames below "
         "1e-6 of peak clean energy skipped\n"
      << "# error_mag: mean over STFT bins of (|C| - |E|)^2\n"
      << "# error_pha: |C|^2-weighted mean of the wrapped phase difference |arg(C conj(E))| in "
         "radians, bins below 1e-6 of peak clean power skipped\n"
      << "# error_com: mean |C - E|^2 / mean |C|^2\n"
      << "# quality: " << quality_label << "\n"
      << "id,ssnr_db,error_mag,error_pha,error_com,quality\n";
  auto line = [&](const EvalRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g", r.ssnr, r.errors.mag,
                  r.errors.phase, r.errors.complex, r.quality);
    out << r.id << ',' << buf << '\n';
  };
  for (const auto& r : report.rows) line(r);
  line(report.mean);
  out << "# excluded: " << report.excluded.size() << "\n";
  for (const auto& [name, why] : report.excluded) out << "# excluded," << name << ',' << why << '\n';
}

}  // namespace dtsnet
