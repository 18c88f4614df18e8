#include "dtsnet/audio.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dtsnet {

void check_clip(const AudioClip& clip, const char* what) {
  if (clip.sample_rate != kSampleRate) {
    throw DataError(std::string(what) + ": sample rate " + std::to_string(clip.sample_rate) +
                    " Hz, expected 16000 Hz (resample before use)");
  }
  for (double s : clip.samples) {
    if (!std::isfinite(s)) throw DataError(std::string(what) + ": non-finite sample");
  }
}

Index draw_crop_offset(Index length, Index segment, std::mt19937_64& rng) {
  if (length <= segment) return 0;
  std::uniform_int_distribution<Index> dist(0, length - segment);
  return dist(rng);
}

AudioClip crop(const AudioClip& clip, Index offset, Index segment) {
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.samples.assign(static_cast<std::size_t>(segment), 0.0);
  const Index avail = std::max<Index>(0, std::min(segment, clip.size() - offset));
  if (avail > 0) std::copy_n(clip.samples.begin() + offset, avail, out.samples.begin());
  return out;
}

AudioClip segment_two_seconds(const AudioClip& clip, std::mt19937_64& rng) {
  return crop(clip, draw_crop_offset(clip.size(), kSegmentSamples, rng), kSegmentSamples);
}

Tensor<double> stack_clips(const std::vector<AudioClip>& clips) {
  if (clips.empty()) throw ShapeError("stack_clips: no clips");
  const Index L = clips[0].size();
  Tensor<double> out(Shape{static_cast<Index>(clips.size()), L});
  for (std::size_t b = 0; b < clips.size(); ++b) {
    if (clips[b].size() != L) throw ShapeError("stack_clips: clips differ in length");
    std::copy(clips[b].samples.begin(), clips[b].samples.end(),
              out.data() + static_cast<Index>(b) * L);
  }
  return out;
}

AudioClip clip_from_row(const Tensor<double>& signals, Index b, int sample_rate) {
  const Index L = signals.dim(1);
  AudioClip c;
  c.sample_rate = sample_rate;
  c.samples.assign(signals.data() + b * L, signals.data() + (b + 1) * L);
  return c;
}

}  // namespace dtsnet
