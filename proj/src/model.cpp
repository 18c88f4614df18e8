#include "dtsnet/model.hpp"

#include <cmath>
#include <random>

#include "dtsnet/audio.hpp"

namespace dtsnet {

std::string to_string(Variant v) { return v == Variant::DenseTs ? "dense_ts" : "classic_ts"; }

Variant parse_variant(const std::string& s) {
  if (s == "dense_ts") return Variant::DenseTs;
  if (s == "classic_ts") return Variant::ClassicTs;
  throw ConfigError("variant: expected dense_ts or classic_ts, got '" + s + "'");
}

std::string to_string(Branch b) {
  switch (b) {
    case Branch::LKE: return "LKE";
    case Branch::CA: return "CA";
    case Branch::LSG: return "LSG";
  }
  return "?";
}

Branch parse_branch(const std::string& s) {
  std::string u;
  for (char c : s) u += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (u == "LKE") return Branch::LKE;
  if (u == "CA") return Branch::CA;
  if (u == "LSG") return Branch::LSG;
  throw ConfigError("drop: expected one of LKE, CA, LSG, got '" + s + "'");
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* key, const std::string& why) {
    if (!ok) throw ConfigError(std::string(key) + ": " + why);
  };
  require(dense_channel >= 1, "dense_channel", "must be >= 1");
  require(depth >= 1, "depth", "must be >= 1");
  require(classic_channel >= 1, "classic_channel", "must be >= 1");
  require(classic_blocks >= 1, "classic_blocks", "must be >= 1");
  require(lke_kernel >= 1 && lke_kernel % 2 == 1, "lke_kernel", "must be odd");
  require(lsg_kernel >= 1 && lsg_kernel % 2 == 1, "lsg_kernel", "must be odd");
  require(mask_beta > 0, "mask_beta", "must be positive");
  require(gate_beta > 0, "gate_beta", "must be positive");
  require(norm_eps > 0, "norm_eps", "must be positive");
  require(mag_compression > 0, "mag_compression", "must be positive");
  require(n_fft >= 2 && n_fft % 2 == 0, "n_fft", "must be even and >= 2");
  require(win_length >= 1 && win_length <= n_fft, "win_length", "must be in [1, n_fft]");
  require(hop >= 1 && hop <= n_fft, "hop", "must be in [1, n_fft]");
}

RealTensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  RealTensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

namespace {

class Initializer {
 public:
  Initializer(RealParams& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  /// Weight and bias uniform in +-1/sqrt(fan_in).
  ConvParams conv(const std::string& path, Shape weight_shape, Index fan_in, bool bias = true) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    const Index cout = weight_shape[0];
    ConvParams p;
    p.weight = &store_.add(path + ".weight", uniform(std::move(weight_shape), bound));
    if (bias) p.bias = &store_.add(path + ".bias", uniform(Shape{cout}, bound));
    return p;
  }

  NormParams norm(const std::string& path, Index channels) {
    NormParams p;
    p.gamma = &store_.add(path + ".gamma", RealTensor::full(Shape{channels}, 1.0));
    p.beta = &store_.add(path + ".beta", RealTensor::zeros(Shape{channels}));
    return p;
  }

  RealParameter& ones(const std::string& path, Index n) {
    return store_.add(path, RealTensor::full(Shape{n}, 1.0));
  }

 private:
  RealTensor uniform(Shape shape, double bound) { return uniform_tensor(std::move(shape), bound, rng_); }

  RealParams& store_;
  std::mt19937_64 rng_;
};

void register_mvgb(Initializer& init, const std::string& prefix, Index c, const ModelConfig& cfg) {
  init.norm(prefix + "norm", c);
  if (cfg.branches.lke) {
    init.conv(prefix + "lke.expand", Shape{2 * c, c}, c);
    init.conv(prefix + "lke.dw", Shape{c, cfg.lke_kernel, 1}, cfg.lke_kernel);
    init.norm(prefix + "lke.norm", c);
    init.conv(prefix + "lke.project", Shape{c, c}, c);
  }
  if (cfg.branches.ca) init.conv(prefix + "ca", Shape{c, c}, c);
  if (cfg.branches.lsg) {
    init.conv(prefix + "lsg.dw", Shape{c, cfg.lsg_kernel, 1}, cfg.lsg_kernel);
    init.conv(prefix + "lsg.pw", Shape{c, c}, c);
    init.ones(prefix + "lsg.alpha", c);
  }
  init.conv(prefix + "fuse", Shape{c, c}, c);
}

void register_ts(Initializer& init, const std::string& prefix, Index c, const ModelConfig& cfg) {
  register_mvgb(init, prefix + "time.", c, cfg);
  register_mvgb(init, prefix + "freq.", c, cfg);
}

void register_dilated_block(Initializer& init, const std::string& prefix, Index c) {
  for (Index j = 0; j < 4; ++j) {
    const std::string p = prefix + "." + std::to_string(j) + ".";
    const Index cin = c * (j + 1);
    init.conv(p + "conv", Shape{c, 3, 3, cin}, 9 * cin);
    init.norm(p + "norm", c);
  }
}

ConvParams bind_conv(RealParams& store, const std::string& path) {
  ConvParams p;
  p.weight = store.find(path + ".weight");
  p.bias = store.find(path + ".bias");
  return p;
}

NormParams bind_norm(RealParams& store, const std::string& path) {
  return NormParams{store.find(path + ".gamma"), store.find(path + ".beta")};
}

RealVar pw(RealGraph& g, const RealVar& x, const ConvParams& p) {
  auto w = g.param(*p.weight);
  if (p.bias) return pointwise(x, w, g.param(*p.bias));
  return pointwise<Real>(x, w, nullptr);
}

RealVar depthwise1d(RealGraph& g, const RealVar& x, const ConvParams& p) {
  Conv1dOptions o;
  o.groups = x.dim(2);
  return conv1d(x, g.param(*p.weight), g.param(*p.bias), o);
}

RealVar norm(RealGraph& g, const RealVar& x, const NormParams& p, double eps) {
  return instance_norm(x, g.param(*p.gamma), g.param(*p.beta), eps);
}

/// Instance norm over (T, F) per channel of [B, T, F, C].
RealVar norm_tf(RealGraph& g, const RealVar& x, const NormParams& p, double eps) {
  const Shape s = x.shape();
  auto flat = reshape(x, Shape{s[0], s[1] * s[2], s[3]});
  return reshape(norm(g, flat, p, eps), s);
}

void check_magnitude(const RealVar& mag, const ModelConfig& cfg) {
  if (mag.rank() != 3) throw ShapeError("model: noisy magnitude must be [B,T,F]");
  if (mag.dim(2) != cfg.freq_bins()) {
    throw ShapeError("model: dim 2 (bins) = " + std::to_string(mag.dim(2)) + ", expected " +
                     std::to_string(cfg.freq_bins()));
  }
  if ((mag.value().vec().array() < 0.0).any()) {
    throw ShapeError("model: negative input magnitudes");
  }
}

RealVar compress(const RealVar& x, double c) { return c == 1.0 ? x : power(x, c); }

/// Lifts [B,T,F] to [B,T,F,C] with a 1x1 conv.
RealVar lift(RealGraph& g, ModelParams& m, const RealVar& x) {
  const Shape s = x.shape();
  return pw(g, reshape(x, Shape{s[0], s[1], s[2], 1}), bind_conv(m.store, "lift"));
}

MaskOutput decode_mask(RealGraph& g, ModelParams& m, const RealVar& features, const RealVar& x) {
  const auto& cfg = m.config;
  auto logits = pw(g, features, bind_conv(m.store, "head"));
  const Shape s = x.shape();
  auto mask = learnable_sigmoid(reshape(logits, s), g.param(m.store.at("head.alpha")),
                                cfg.mask_beta);
  auto enhanced = mul(mask, x);
  if (cfg.mag_compression != 1.0) enhanced = power(enhanced, 1.0 / cfg.mag_compression);
  return {mask, enhanced};
}

RealVar dilated_block(RealGraph& g, ModelParams& m, const std::string& prefix, const RealVar& x) {
  const auto& cfg = m.config;
  RealVar skip = x;
  RealVar out;
  for (Index j = 0; j < 4; ++j) {
    const std::string p = prefix + "." + std::to_string(j) + ".";
    auto conv = bind_conv(m.store, p + "conv");
    Conv2dOptions o;
    o.dilation_h = Index{1} << j;
    out = conv2d(skip, g.param(*conv.weight), g.param(*conv.bias), o);
    out = hardswish(norm_tf(g, out, bind_norm(m.store, p + "norm"), cfg.norm_eps));
    if (j < 3) skip = concat<Real>({out, skip});
  }
  return out;
}

Index mvgb_macs(const ModelConfig& cfg, Index sequences, Index length, Index c) {
  const Index pos = sequences * length;
  Index macs = pos * c;  // entry norm affine
  if (cfg.branches.lke) {
    macs += pos * c * 2 * c + pos * c * cfg.lke_kernel + pos * c + pos * c * c;
  }
  if (cfg.branches.ca) macs += sequences * c * c;
  if (cfg.branches.lsg) macs += pos * c * cfg.lsg_kernel + pos * c * c + pos * c;
  macs += pos * c * c;
  return macs;
}

}  // namespace

ModelParams build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams m;
  m.config = config;
  Initializer init(m.store, seed);
  const Index F = config.freq_bins();
  if (config.variant == Variant::DenseTs) {
    const Index dc = config.dense_channel;
    init.conv("lift", Shape{dc, 1}, 1);
    for (Index i = 1; i <= config.depth; ++i) {
      const std::string p = "dense." + std::to_string(i) + ".";
      const Index cin = dc * i;
      register_ts(init, p, cin, config);
      if (config.adjust == AdjustConv::Depthwise3x3) {
        init.conv(p + "adjust_dw", Shape{cin, 3, 3, 1}, 9);
      }
      init.conv(p + "adjust", Shape{dc, cin}, cin);
    }
    init.conv("head", Shape{1, dc}, dc);
  } else {
    const Index cc = config.classic_channel;
    init.conv("lift", Shape{cc, 1}, 1);
    register_dilated_block(init, "encoder", cc);
    for (Index k = 1; k <= config.classic_blocks; ++k) {
      register_ts(init, "ts." + std::to_string(k) + ".", cc, config);
    }
    register_dilated_block(init, "decoder", cc);
    init.conv("head", Shape{1, cc}, cc);
  }
  init.ones("head.alpha", F);
  return m;
}

ModelParams ablate(const ModelParams& model, Branch drop) {
  ModelConfig cfg = model.config;
  switch (drop) {
    case Branch::LKE: cfg.branches.lke = false; break;
    case Branch::CA: cfg.branches.ca = false; break;
    case Branch::LSG: cfg.branches.lsg = false; break;
  }
  ModelParams out = build_model(cfg, 0);
  for (std::size_t i = 0; i < out.store.size(); ++i) {
    auto& p = out.store[i];
    p.value = model.store.at(p.path).value;
  }
  return out;
}

void zero_parameters(ModelParams& model) {
  for (std::size_t i = 0; i < model.store.size(); ++i) model.store[i].value.vec().setZero();
}

MvgbParams bind_mvgb(RealParams& store, const std::string& prefix, Index channels) {
  MvgbParams p;
  p.channels = channels;
  p.norm = bind_norm(store, prefix + "norm");
  if (!p.norm.gamma) throw ShapeError("bind_mvgb: no parameters under '" + prefix + "'");
  p.lke_expand = bind_conv(store, prefix + "lke.expand");
  p.lke_dw = bind_conv(store, prefix + "lke.dw");
  p.lke_norm = bind_norm(store, prefix + "lke.norm");
  p.lke_project = bind_conv(store, prefix + "lke.project");
  p.ca = bind_conv(store, prefix + "ca");
  p.lsg_dw = bind_conv(store, prefix + "lsg.dw");
  p.lsg_pw = bind_conv(store, prefix + "lsg.pw");
  p.lsg_alpha = store.find(prefix + "lsg.alpha");
  p.fuse = bind_conv(store, prefix + "fuse");
  if (p.norm.gamma->value.size() != channels) {
    throw ShapeError("bind_mvgb: '" + prefix + "' holds " +
                     std::to_string(p.norm.gamma->value.size()) + " channels, expected " +
                     std::to_string(channels));
  }
  return p;
}

MvgbOptions mvgb_options(const ModelConfig& config) {
  return MvgbOptions{config.lke_kernel, config.lsg_kernel, config.norm_eps, config.gate_beta};
}

RealVar mvgb_forward(RealGraph& g, const RealVar& x, const MvgbParams& p, const MvgbOptions& o) {
  if (x.rank() != 3) throw ShapeError("mvgb: input must be [N,L,C], got " + x.shape().str());
  if (x.dim(2) != p.channels) {
    throw ShapeError("mvgb: dim 2 (channels) = " + std::to_string(x.dim(2)) + ", block expects " +
                     std::to_string(p.channels));
  }
  const Index L = x.dim(1);
  RealVar feat = norm(g, x, p.norm, o.norm_eps);
  if (p.lke_expand) {
    feat = simple_gate(pw(g, feat, p.lke_expand));
    feat = depthwise1d(g, feat, p.lke_dw);
    feat = hardswish(norm(g, feat, p.lke_norm, o.norm_eps));
    feat = pw(g, feat, p.lke_project);
  }
  RealVar gazed = feat;
  if (p.ca) {
    auto weights = pw(g, mean_axis(feat, 1), p.ca);
    gazed = mul(gazed, expand(weights, 1, L));
  }
  if (p.lsg_dw) {
    auto local = pw(g, depthwise1d(g, feat, p.lsg_dw), p.lsg_pw);
    gazed = mul(gazed, learnable_sigmoid(local, g.param(*p.lsg_alpha), o.gate_beta));
  }
  return add(x, pw(g, gazed, p.fuse));
}

RealVar ts_mvgb_forward(RealGraph& g, const RealVar& d, const TsMvgbParams& p,
                        const MvgbOptions& o) {
  if (d.rank() != 4) throw ShapeError("ts_mvgb: input must be [B,T,F,C], got " + d.shape().str());
  const Index B = d.dim(0), T = d.dim(1), F = d.dim(2), C = d.dim(3);
  auto along_time = reshape(permute(d, {0, 2, 1, 3}), Shape{B * F, T, C});
  auto t_out = mvgb_forward(g, along_time, p.time, o);
  auto back = permute(reshape(t_out, Shape{B, F, T, C}), {0, 2, 1, 3});
  auto f_out = mvgb_forward(g, reshape(back, Shape{B * T, F, C}), p.freq, o);
  return reshape(f_out, Shape{B, T, F, C});
}

std::vector<DenseLayerParams> bind_dense_layers(ModelParams& model) {
  const auto& cfg = model.config;
  if (cfg.variant != Variant::DenseTs) throw ShapeError("bind_dense_layers: not a dense_ts model");
  std::vector<DenseLayerParams> layers;
  for (Index i = 1; i <= cfg.depth; ++i) {
    const std::string p = "dense." + std::to_string(i) + ".";
    DenseLayerParams l;
    l.in_channels = cfg.dense_channel * i;
    l.ts.time = bind_mvgb(model.store, p + "time.", l.in_channels);
    l.ts.freq = bind_mvgb(model.store, p + "freq.", l.in_channels);
    l.adjust_dw = bind_conv(model.store, p + "adjust_dw");
    l.adjust = bind_conv(model.store, p + "adjust");
    layers.push_back(l);
  }
  return layers;
}

RealVar dense_ts_forward(RealGraph& g, const RealVar& x, const std::vector<DenseLayerParams>& layers,
                         const ModelConfig& config, DenseTrace* trace) {
  const auto o = mvgb_options(config);
  const Index dc = config.dense_channel;
  if (x.rank() != 4 || x.dim(3) != dc) {
    throw ShapeError("dense_ts: input must be [B,T,F," + std::to_string(dc) + "], got " +
                     x.shape().str());
  }
  RealVar skip = x;
  RealVar adjusted;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& layer = layers[k];
    const Index i = static_cast<Index>(k) + 1;
    if (skip.dim(3) != dc * i || layer.in_channels != dc * i) {
      throw ShapeError("dense_ts: layer " + std::to_string(i) + " receives " +
                       std::to_string(skip.dim(3)) + " channels, expected " +
                       std::to_string(dc * i));
    }
    if (trace) trace->layer_in_channels.push_back(skip.dim(3));
    RealVar h = ts_mvgb_forward(g, skip, layer.ts, o);
    if (layer.adjust_dw) {
      Conv2dOptions dw;
      dw.groups = h.dim(3);
      h = conv2d(h, g.param(*layer.adjust_dw.weight), g.param(*layer.adjust_dw.bias), dw);
    }
    adjusted = pw(g, h, layer.adjust);
    if (k + 1 < layers.size()) skip = concat<Real>({adjusted, skip});
  }
  if (trace) trace->last_adjusted = adjusted;
  return add(scale(adjusted, config.residual_scale), x);
}

MaskOutput dense_tsnet_forward(RealGraph& g, const RealVar& noisy_mag, ModelParams& model) {
  const auto& cfg = model.config;
  if (cfg.variant != Variant::DenseTs) throw ShapeError("dense_tsnet_forward: variant mismatch");
  check_magnitude(noisy_mag, cfg);
  auto x = compress(noisy_mag, cfg.mag_compression);
  auto trunk = dense_ts_forward(g, lift(g, model, x), bind_dense_layers(model), cfg);
  return decode_mask(g, model, trunk, x);
}

MaskOutput classic_ts_forward(RealGraph& g, const RealVar& noisy_mag, ModelParams& model) {
  const auto& cfg = model.config;
  if (cfg.variant != Variant::ClassicTs) throw ShapeError("classic_ts_forward: variant mismatch");
  check_magnitude(noisy_mag, cfg);
  const auto o = mvgb_options(cfg);
  const Index cc = cfg.classic_channel;
  auto x = compress(noisy_mag, cfg.mag_compression);
  auto h = dilated_block(g, model, "encoder", lift(g, model, x));
  for (Index k = 1; k <= cfg.classic_blocks; ++k) {
    const std::string p = "ts." + std::to_string(k) + ".";
    TsMvgbParams ts{bind_mvgb(model.store, p + "time.", cc), bind_mvgb(model.store, p + "freq.", cc)};
    h = ts_mvgb_forward(g, h, ts, o);
  }
  h = dilated_block(g, model, "decoder", h);
  return decode_mask(g, model, h, x);
}

MaskOutput model_forward(RealGraph& g, const RealVar& noisy_mag, ModelParams& model) {
  return model.config.variant == Variant::DenseTs ? dense_tsnet_forward(g, noisy_mag, model)
                                                  : classic_ts_forward(g, noisy_mag, model);
}

Index count_params(const ModelParams& model) { return model.store.count(); }

std::vector<LayerCost> layer_costs(const ModelParams& model, Index frames, Index bins) {
  const auto& cfg = model.config;
  const Index pos = frames * bins;
  std::vector<LayerCost> rows;
  auto add_row = [&](std::string name, Index macs) {
    Index params = 0;
    for (std::size_t i = 0; i < model.store.size(); ++i) {
      const auto& p = model.store[i];
      if (p.path.compare(0, name.size(), name) == 0) params += p.value.size();
    }
    rows.push_back(LayerCost{std::move(name), params, macs});
  };
  auto add_ts = [&](const std::string& prefix, Index c) {
    add_row(prefix + "time.", mvgb_macs(cfg, bins, frames, c));
    add_row(prefix + "freq.", mvgb_macs(cfg, frames, bins, c));
  };
  if (cfg.variant == Variant::DenseTs) {
    const Index dc = cfg.dense_channel;
    add_row("lift.", pos * dc);
    for (Index i = 1; i <= cfg.depth; ++i) {
      const std::string p = "dense." + std::to_string(i) + ".";
      const Index cin = dc * i;
      add_ts(p, cin);
      Index macs = pos * cin * dc;
      if (cfg.adjust == AdjustConv::Depthwise3x3) macs += pos * cin * 9;
      add_row(p + "adjust", macs);
    }
    add_row("head.", pos * dc + pos);
  } else {
    const Index cc = cfg.classic_channel;
    add_row("lift.", pos * cc);
    auto add_block = [&](const std::string& prefix) {
      for (Index j = 0; j < 4; ++j) {
        add_row(prefix + "." + std::to_string(j) + ".", pos * cc * 9 * cc * (j + 1) + pos * cc);
      }
    };
    add_block("encoder");
    for (Index k = 1; k <= cfg.classic_blocks; ++k) add_ts("ts." + std::to_string(k) + ".", cc);
    add_block("decoder");
    add_row("head.", pos * cc + pos);
  }
  return rows;
}

Index count_macs(const ModelParams& model, Index frames, Index bins) {
  Index total = 0;
  for (const auto& r : layer_costs(model, frames, bins)) total += r.macs;
  return total;
}

Index two_second_frames(const ModelConfig& config) { return 1 + kSegmentSamples / config.hop; }

}  // namespace dtsnet
