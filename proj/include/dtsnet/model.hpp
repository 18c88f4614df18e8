#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dtsnet/ops.hpp"

namespace dtsnet {

using Real = double;
using RealTensor = Tensor<Real>;
using RealVar = Var<Real>;
using RealGraph = Graph<Real>;
using RealParams = ParamStore<Real>;
using RealParameter = Parameter<Real>;

enum class Variant { DenseTs, ClassicTs };
enum class AdjustConv { Pointwise, Depthwise3x3 };
enum class Branch { LKE, CA, LSG };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
std::string to_string(Branch b);
Branch parse_branch(const std::string& s);

/// Which MVGB views are present. A dropped LKE passes its input through; a dropped CA or LSG
/// contributes a multiplicative 1.
struct BranchToggles {
  bool lke = true;
  bool ca = true;
  bool lsg = true;
};

struct ModelConfig {
  Variant variant = Variant::DenseTs;
  Index dense_channel = 4;
  Index depth = 4;
  Index classic_channel = 6;
  Index classic_blocks = 4;
  Index lke_kernel = 31;
  Index lsg_kernel = 3;
  double mask_beta = 2.0;
  double gate_beta = 1.0;
  double norm_eps = 1e-5;
  double residual_scale = 0.2;
  /// Power-law compression of the network input magnitude; 1 disables it.
  double mag_compression = 1.0;
  AdjustConv adjust = AdjustConv::Pointwise;
  BranchToggles branches;
  Index n_fft = 400;
  Index win_length = 400;
  Index hop = 100;

  Index freq_bins() const { return n_fft / 2 + 1; }
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

struct ConvParams {
  RealParameter* weight = nullptr;
  RealParameter* bias = nullptr;
  explicit operator bool() const { return weight != nullptr; }
};

struct NormParams {
  RealParameter* gamma = nullptr;
  RealParameter* beta = nullptr;
};

/// Parameters of one Multi-View Gaze Block over C channels. Dropped views have null members.
struct MvgbParams {
  Index channels = 0;
  NormParams norm;
  ConvParams lke_expand;   // pointwise C -> 2C, halved by the simple gate
  ConvParams lke_dw;       // depthwise, lke_kernel taps
  NormParams lke_norm;
  ConvParams lke_project;  // pointwise C -> C
  ConvParams ca;           // pointwise C -> C on the pooled sequence
  ConvParams lsg_dw;       // depthwise, lsg_kernel taps
  ConvParams lsg_pw;       // pointwise C -> C
  RealParameter* lsg_alpha = nullptr;
  ConvParams fuse;         // pointwise C -> C, residual projection
};

struct TsMvgbParams {
  MvgbParams time;
  MvgbParams freq;
};

struct MvgbOptions {
  Index lke_kernel = 31;
  Index lsg_kernel = 3;
  double norm_eps = 1e-5;
  double gate_beta = 1.0;
};

struct ModelParams {
  ModelConfig config;
  RealParams store;
};

/// Tensor with entries drawn uniformly from [-bound, bound] in storage order.
RealTensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng);

/// Registers every parameter of the configured network with seeded fan-in uniform init
/// (norm affines at (1, 0), learnable-sigmoid slopes at 1).
ModelParams build_model(const ModelConfig& config, std::uint64_t seed);

/// Copy of `model` with one MVGB view removed; all remaining parameters are kept.
ModelParams ablate(const ModelParams& model, Branch drop);

/// Sets every parameter to zero (the residual-identity state used by warm-start tests).
void zero_parameters(ModelParams& model);

MvgbParams bind_mvgb(RealParams& store, const std::string& prefix, Index channels);
MvgbOptions mvgb_options(const ModelConfig& config);

/// x: [N, L, C]. Returns x + Fuse(g * CA(g) * LSG(g)) with g = LKE(Norm(x)).
RealVar mvgb_forward(RealGraph& g, const RealVar& x, const MvgbParams& p, const MvgbOptions& o);

/// D: [B, T, F, C]. Time-axis MVGB over [B*F, T, C], then frequency-axis MVGB over [B*T, F, C].
RealVar ts_mvgb_forward(RealGraph& g, const RealVar& d, const TsMvgbParams& p,
                        const MvgbOptions& o);

struct DenseLayerParams {
  Index in_channels = 0;
  TsMvgbParams ts;
  ConvParams adjust_dw;  // only for AdjustConv::Depthwise3x3
  ConvParams adjust;
};

std::vector<DenseLayerParams> bind_dense_layers(ModelParams& model);

/// Shape probes recorded by dense_ts_forward.
struct DenseTrace {
  std::vector<Index> layer_in_channels;
  RealVar last_adjusted;
};

/// x: [B, T, F, dense_channel]. skip_0 = x; a_i = Adjust_i(TS-MVGB_i(skip_{i-1})) maps
/// dense_channel*i channels to dense_channel; skip_i = concat(a_i, skip_{i-1});
/// returns residual_scale * a_depth + x.
RealVar dense_ts_forward(RealGraph& g, const RealVar& x, const std::vector<DenseLayerParams>& layers,
                         const ModelConfig& config, DenseTrace* trace = nullptr);

struct MaskOutput {
  RealVar mask;
  RealVar enhanced;
};

/// noisy_mag: [B, T, F], F = config.freq_bins(). Mask in (0, mask_beta).
MaskOutput dense_tsnet_forward(RealGraph& g, const RealVar& noisy_mag, ModelParams& model);
MaskOutput classic_ts_forward(RealGraph& g, const RealVar& noisy_mag, ModelParams& model);
/// Dispatches on config.variant.
MaskOutput model_forward(RealGraph& g, const RealVar& noisy_mag, ModelParams& model);

/// Exact number of scalar parameters.
Index count_params(const ModelParams& model);

/// Per-group parameter and multiply-accumulate counts. MACs count every convolution tap,
/// norm affine and learnable-sigmoid slope; elementwise gate products are not counted.
struct LayerCost {
  std::string name;
  Index params = 0;
  Index macs = 0;
};

std::vector<LayerCost> layer_costs(const ModelParams& model, Index frames, Index bins);

/// Total MACs for one item of `frames` x `bins`.
Index count_macs(const ModelParams& model, Index frames, Index bins);

/// Frames of a centered STFT over a 2-second clip.
Index two_second_frames(const ModelConfig& config);

}  // namespace dtsnet
