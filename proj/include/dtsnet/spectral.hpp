#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "dtsnet/ops.hpp"

// Centered STFT/ISTFT as dense DFT matrix products over batched signals [B, L].
// Spectra are [B, T, F, 2] with (re, im) on the last axis.

namespace dtsnet {

/// Periodic Hann window of length n.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> hann_window(Index n) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> w(n);
  for (Index i = 0; i < n; ++i) {
    w[i] = Scalar(0.5) - Scalar(0.5) * std::cos(Scalar(2) * std::numbers::pi_v<Scalar> *
                                                static_cast<Scalar>(i) / static_cast<Scalar>(n));
  }
  return w;
}

/// STFT geometry, window and DFT bases. Immutable after construction; the constructor checks
/// the constant-overlap-add condition of the window at the configured hop.
template <typename Scalar>
class StftConfig {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  static constexpr double kColaTolerance = 1e-10;

  StftConfig(Index n_fft = 400, Index win_length = 400, Index hop = 100,
             int sample_rate = 16000)
      : StftConfig(n_fft, hop, sample_rate, centered_window(hann_window<Scalar>(win_length), n_fft,
                                                            win_length)) {}

  /// Custom analysis/synthesis window of length n_fft.
  StftConfig(Index n_fft, Index hop, int sample_rate, Vector window)
      : n_fft_(n_fft), hop_(hop), sample_rate_(sample_rate), window_(std::move(window)) {
    if (n_fft < 2 || n_fft % 2 != 0) throw ShapeError("stft: n_fft must be even and >= 2");
    if (hop < 1 || hop > n_fft) throw ShapeError("stft: hop must be in [1, n_fft]");
    if (window_.size() != n_fft) throw ShapeError("stft: window length must equal n_fft");
    cola_deviation_ = overlap_deviation(window_);
    if (cola_deviation_ > kColaTolerance) {
      throw ShapeError("stft: window is not constant-overlap-add at hop " + std::to_string(hop) +
                       " (deviation " + std::to_string(static_cast<double>(cola_deviation_)) +
                       ")");
    }
    build_bases();
  }

  Index n_fft() const { return n_fft_; }
  Index hop() const { return hop_; }
  Index bins() const { return n_fft_ / 2 + 1; }
  Index pad() const { return n_fft_ / 2; }
  int sample_rate() const { return sample_rate_; }
  const Vector& window() const { return window_; }
  /// Max relative deviation of the window overlap sum from its mean over one hop period.
  Scalar cola_deviation() const { return cola_deviation_; }

  /// Frames produced for a signal of `length` samples.
  Index frames(Index length) const { return 1 + length / hop_; }

  /// analysis: re = frames * cos_, im = -frames * sin_  (n_fft x bins)
  const RowMatrix& cos_basis() const { return cos_; }
  const RowMatrix& sin_basis() const { return sin_; }
  /// synthesis: frame = re * inv_cos_ + im * inv_sin_  (bins x n_fft)
  const RowMatrix& inv_cos_basis() const { return inv_cos_; }
  const RowMatrix& inv_sin_basis() const { return inv_sin_; }

 private:
  static Vector centered_window(const Vector& w, Index n_fft, Index win_length) {
    if (win_length > n_fft || win_length < 1) {
      throw ShapeError("stft: win_length must be in [1, n_fft]");
    }
    Vector out = Vector::Zero(n_fft);
    out.segment((n_fft - win_length) / 2, win_length) = w;
    return out;
  }

  Scalar overlap_deviation(const Vector& w) const {
    Vector acc = Vector::Zero(hop_);
    for (Index i = 0; i < n_fft_; ++i) acc[i % hop_] += w[i];
    const Scalar m = acc.mean();
    if (m <= Scalar(0)) return std::numeric_limits<Scalar>::infinity();
    return (acc.array() - m).abs().maxCoeff() / m;
  }

  void build_bases() {
    const Index N = n_fft_;
    const Index F = bins();
    Vector c(N), s(N);
    for (Index m = 0; m < N; ++m) {
      const Scalar ang = Scalar(2) * std::numbers::pi_v<Scalar> * static_cast<Scalar>(m) /
                         static_cast<Scalar>(N);
      c[m] = std::cos(ang);
      s[m] = std::sin(ang);
    }
    // Exact zeros/ones at the quarter points keep DC and Nyquist rows exact.
    c[0] = 1;
    s[0] = 0;
    s[N / 2] = 0;
    c[N / 2] = -1;
    if (N % 4 == 0) {
      c[N / 4] = 0;
      s[N / 4] = 1;
      c[3 * N / 4] = 0;
      s[3 * N / 4] = -1;
    }
    cos_.resize(N, F);
    sin_.resize(N, F);
    inv_cos_.resize(F, N);
    inv_sin_.resize(F, N);
    for (Index n = 0; n < N; ++n) {
      for (Index k = 0; k < F; ++k) {
        const Index m = (k * n) % N;
        cos_(n, k) = c[m];
        sin_(n, k) = s[m];
        const Scalar weight = (k == 0 || k == N / 2) ? Scalar(1) : Scalar(2);
        inv_cos_(k, n) = weight * c[m] / static_cast<Scalar>(N);
        inv_sin_(k, n) = -weight * s[m] / static_cast<Scalar>(N);
      }
    }
  }

  Index n_fft_;
  Index hop_;
  int sample_rate_;
  Vector window_;
  Scalar cola_deviation_ = 0;
  RowMatrix cos_, sin_, inv_cos_, inv_sin_;
};

namespace spectral_detail {

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Reflect index into [0, L) (no edge repeat).
inline Index reflect(Index j, Index L) {
  if (j < 0) return -j;
  if (j >= L) return 2 * (L - 1) - j;
  return j;
}

template <typename Scalar>
void deinterleave(const Tensor<Scalar>& z, RowMat<Scalar>& re, RowMat<Scalar>& im, Index rows,
                  Index F) {
  re.resize(rows, F);
  im.resize(rows, F);
  const Scalar* p = z.data();
  for (Index r = 0; r < rows; ++r)
    for (Index k = 0; k < F; ++k) {
      re(r, k) = p[(r * F + k) * 2];
      im(r, k) = p[(r * F + k) * 2 + 1];
    }
}

template <typename Scalar>
void interleave_add(const RowMat<Scalar>& re, const RowMat<Scalar>& im, Tensor<Scalar>& z) {
  Scalar* p = z.data();
  for (Index r = 0; r < re.rows(); ++r)
    for (Index k = 0; k < re.cols(); ++k) {
      p[(r * re.cols() + k) * 2] += re(r, k);
      p[(r * re.cols() + k) * 2 + 1] += im(r, k);
    }
}

/// Window-squared overlap envelope over the padded OLA buffer.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> ola_envelope(const StftConfig<Scalar>& cfg, Index T) {
  const Index N = cfg.n_fft();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> env =
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero((T - 1) * cfg.hop() + N);
  for (Index t = 0; t < T; ++t) env.segment(t * cfg.hop(), N) += cfg.window().cwiseAbs2();
  return env;
}

}  // namespace spectral_detail

/// Linear STFT of signals [B, L] -> [B, T, F, 2]; centered with reflect padding of n_fft/2.
template <typename Scalar>
Tensor<Scalar> stft_forward(const StftConfig<Scalar>& cfg, const Tensor<Scalar>& signals) {
  using namespace spectral_detail;
  if (signals.rank() != 2) throw ShapeError("stft: signals must be [B, L]");
  const Index B = signals.dim(0), L = signals.dim(1), N = cfg.n_fft(), F = cfg.bins();
  if (L < N) {
    throw ShapeError("stft: signal length " + std::to_string(L) +
                     " is shorter than one window (" + std::to_string(N) + ")");
  }
  const Index T = cfg.frames(L), p = cfg.pad();
  RowMat<Scalar> frames(B * T, N);
  for (Index b = 0; b < B; ++b) {
    const Scalar* x = signals.data() + b * L;
    for (Index t = 0; t < T; ++t)
      for (Index n = 0; n < N; ++n) {
        frames(b * T + t, n) = cfg.window()[n] * x[reflect(t * cfg.hop() + n - p, L)];
      }
  }
  RowMat<Scalar> re = frames * cfg.cos_basis();
  RowMat<Scalar> im = -(frames * cfg.sin_basis());
  Tensor<Scalar> z(Shape{B, T, F, 2});
  interleave_add(re, im, z);
  return z;
}

/// Adjoint of stft_forward: spectra [B, T, F, 2] -> signals [B, length].
template <typename Scalar>
Tensor<Scalar> stft_adjoint(const StftConfig<Scalar>& cfg, const Tensor<Scalar>& spec,
                            Index length) {
  using namespace spectral_detail;
  const Index B = spec.dim(0), T = spec.dim(1), F = spec.dim(2), N = cfg.n_fft();
  if (F != cfg.bins() || T != cfg.frames(length)) {
    throw ShapeError("stft_adjoint: spectrum " + spec.shape().str() + " does not match length " +
                     std::to_string(length));
  }
  RowMat<Scalar> re, im;
  deinterleave(spec, re, im, B * T, F);
  RowMat<Scalar> frames = re * cfg.cos_basis().transpose() - im * cfg.sin_basis().transpose();
  Tensor<Scalar> out(Shape{B, length});
  const Index p = cfg.pad();
  for (Index b = 0; b < B; ++b) {
    Scalar* x = out.data() + b * length;
    for (Index t = 0; t < T; ++t)
      for (Index n = 0; n < N; ++n) {
        x[reflect(t * cfg.hop() + n - p, length)] += cfg.window()[n] * frames(b * T + t, n);
      }
  }
  return out;
}

/// Weighted overlap-add inverse of stft_forward: [B, T, F, 2] -> [B, out_len]. Imaginary parts
/// of the DC and Nyquist bins are ignored.
template <typename Scalar>
Tensor<Scalar> istft_forward(const StftConfig<Scalar>& cfg, const Tensor<Scalar>& spec,
                             Index out_len) {
  using namespace spectral_detail;
  if (spec.rank() != 4 || spec.dim(3) != 2) throw ShapeError("istft: spectrum must be [B,T,F,2]");
  const Index B = spec.dim(0), T = spec.dim(1), F = spec.dim(2), N = cfg.n_fft();
  if (F != cfg.bins()) {
    throw ShapeError("istft: dim 2 (bins) = " + std::to_string(F) + ", expected " +
                     std::to_string(cfg.bins()));
  }
  const Index p = cfg.pad();
  auto env = ola_envelope(cfg, T);
  if (p + out_len > env.size()) {
    throw ShapeError("istft: out_len " + std::to_string(out_len) + " exceeds " +
                     std::to_string(T) + " frames of coverage");
  }
  RowMat<Scalar> re, im;
  deinterleave(spec, re, im, B * T, F);
  RowMat<Scalar> frames = re * cfg.inv_cos_basis() + im * cfg.inv_sin_basis();
  Tensor<Scalar> out(Shape{B, out_len});
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> buf(env.size());
  for (Index b = 0; b < B; ++b) {
    buf.setZero();
    for (Index t = 0; t < T; ++t) {
      buf.segment(t * cfg.hop(), N) +=
          frames.row(b * T + t).transpose().cwiseProduct(cfg.window());
    }
    for (Index j = 0; j < out_len; ++j) {
      const Scalar e = env[p + j];
      out[b * out_len + j] = e > Scalar(1e-11) ? buf[p + j] / e : Scalar(0);
    }
  }
  return out;
}

/// Adjoint of istft_forward: signals [B, out_len] -> [B, T, F, 2].
template <typename Scalar>
Tensor<Scalar> istft_adjoint(const StftConfig<Scalar>& cfg, const Tensor<Scalar>& grad,
                             Index frames_count) {
  using namespace spectral_detail;
  const Index B = grad.dim(0), out_len = grad.dim(1), T = frames_count, N = cfg.n_fft();
  const Index F = cfg.bins(), p = cfg.pad();
  auto env = ola_envelope(cfg, T);
  RowMat<Scalar> frames(B * T, N);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> buf(env.size());
  for (Index b = 0; b < B; ++b) {
    buf.setZero();
    for (Index j = 0; j < out_len; ++j) {
      const Scalar e = env[p + j];
      buf[p + j] = e > Scalar(1e-11) ? grad[b * out_len + j] / e : Scalar(0);
    }
    for (Index t = 0; t < T; ++t) {
      frames.row(b * T + t) = buf.segment(t * cfg.hop(), N).cwiseProduct(cfg.window()).transpose();
    }
  }
  RowMat<Scalar> re = frames * cfg.inv_cos_basis().transpose();
  RowMat<Scalar> im = frames * cfg.inv_sin_basis().transpose();
  Tensor<Scalar> z(Shape{B, T, F, 2});
  interleave_add(re, im, z);
  return z;
}

// ---------------------------------------------------------------------------------------------
// Differentiable wrappers

template <typename Scalar>
Var<Scalar> stft(const Var<Scalar>& signals, std::shared_ptr<const StftConfig<Scalar>> cfg) {
  const Index L = signals.dim(1);
  auto out = stft_forward(*cfg, signals.value());
  return signals.graph().record(
      std::move(out), {signals},
      [cfg, L](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        if (gs[0]) gs[0]->vec() += stft_adjoint(*cfg, g, L).vec();
      },
      "stft");
}

template <typename Scalar>
Var<Scalar> istft(const Var<Scalar>& spec, std::shared_ptr<const StftConfig<Scalar>> cfg,
                  Index out_len) {
  const Index T = spec.dim(1);
  auto out = istft_forward(*cfg, spec.value(), out_len);
  return spec.graph().record(
      std::move(out), {spec},
      [cfg, T](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        if (gs[0]) gs[0]->vec() += istft_adjoint(*cfg, g, T).vec();
      },
      "istft");
}

/// mag * e^{i phase} with a constant phase: [...] -> [..., 2].
template <typename Scalar>
Var<Scalar> polar(const Var<Scalar>& mag, const Tensor<Scalar>& phase) {
  if (mag.shape() != phase.shape()) {
    throw ShapeError("polar: magnitude " + mag.shape().str() + " vs phase " +
                     phase.shape().str());
  }
  auto dims = mag.shape().dims();
  dims.push_back(2);
  auto cs = std::make_shared<Tensor<Scalar>>(Shape(dims));
  for (Index i = 0; i < phase.size(); ++i) {
    (*cs)[2 * i] = std::cos(phase[i]);
    (*cs)[2 * i + 1] = std::sin(phase[i]);
  }
  auto out = Tensor<Scalar>::uninitialized(Shape(dims));
  for (Index i = 0; i < phase.size(); ++i) {
    out[2 * i] = mag.value()[i] * (*cs)[2 * i];
    out[2 * i + 1] = mag.value()[i] * (*cs)[2 * i + 1];
  }
  return mag.graph().record(
      std::move(out), {mag},
      [cs](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        if (!gs[0]) return;
        for (Index i = 0; i < gs[0]->size(); ++i) {
          (*gs[0])[i] += g[2 * i] * (*cs)[2 * i] + g[2 * i + 1] * (*cs)[2 * i + 1];
        }
      },
      "polar");
}

/// |z| over a trailing (re, im) axis. The derivative at z = 0 is taken as 0.
template <typename Scalar>
Var<Scalar> complex_abs(const Var<Scalar>& z) {
  if (z.shape().back() != 2) throw ShapeError("complex_abs: last dim must be 2");
  auto dims = z.shape().dims();
  dims.pop_back();
  Tensor<Scalar> out{Shape(dims)};
  for (Index i = 0; i < out.size(); ++i) out[i] = std::hypot(z.value()[2 * i], z.value()[2 * i + 1]);
  auto saved = std::make_shared<Tensor<Scalar>>(out);
  return z.graph().record(
      std::move(out), {z},
      [z, saved](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        if (!gs[0]) return;
        for (Index i = 0; i < saved->size(); ++i) {
          const Scalar m = (*saved)[i];
          if (m == Scalar(0)) continue;
          (*gs[0])[2 * i] += g[i] * z.value()[2 * i] / m;
          (*gs[0])[2 * i + 1] += g[i] * z.value()[2 * i + 1] / m;
        }
      },
      "complex_abs");
}

/// Magnitude and phase (wrapped to (-pi, pi]) of a [.., 2] spectrum.
template <typename Scalar>
struct ComplexSpec {
  Tensor<Scalar> mag;
  Tensor<Scalar> phase;
};

template <typename Scalar>
ComplexSpec<Scalar> to_polar(const Tensor<Scalar>& z) {
  auto dims = z.shape().dims();
  dims.pop_back();
  ComplexSpec<Scalar> s{Tensor<Scalar>{Shape(dims)}, Tensor<Scalar>{Shape(dims)}};
  for (Index i = 0; i < s.mag.size(); ++i) {
    const Scalar re = z[2 * i], im = z[2 * i + 1];
    s.mag[i] = std::hypot(re, im);
    Scalar ph = std::atan2(im, re);
    if (ph <= -std::numbers::pi_v<Scalar>) ph = std::numbers::pi_v<Scalar>;
    s.phase[i] = ph;
  }
  return s;
}

template <typename Scalar>
ComplexSpec<Scalar> analyze(const StftConfig<Scalar>& cfg, const Tensor<Scalar>& signals) {
  return to_polar(stft_forward(cfg, signals));
}

/// STFT(ISTFT(mag * e^{i phase})) as a complex spectrum; differentiable w.r.t. mag.
template <typename Scalar>
Var<Scalar> consistency_project_complex(const Var<Scalar>& mag, const Tensor<Scalar>& phase,
                                        std::shared_ptr<const StftConfig<Scalar>> cfg,
                                        Index signal_length = 0) {
  if (mag.rank() != 3) throw ShapeError("consistency_project: magnitude must be [B,T,F]");
  if ((mag.value().vec().array() < Scalar(0)).any()) {
    throw ShapeError("consistency_project: negative magnitudes");
  }
  const Index T = mag.dim(1);
  const Index len = signal_length > 0 ? signal_length : (T - 1) * cfg->hop();
  if (cfg->frames(len) != T) {
    throw ShapeError("consistency_project: signal length " + std::to_string(len) +
                     " does not produce " + std::to_string(T) + " frames");
  }
  return stft(istft(polar(mag, phase), cfg, len), cfg);
}

/// |STFT(ISTFT(mag * e^{i phase}))|.
template <typename Scalar>
Var<Scalar> consistency_project(const Var<Scalar>& mag, const Tensor<Scalar>& phase,
                                std::shared_ptr<const StftConfig<Scalar>> cfg,
                                Index signal_length = 0) {
  return complex_abs(consistency_project_complex(mag, phase, std::move(cfg), signal_length));
}

}  // namespace dtsnet
