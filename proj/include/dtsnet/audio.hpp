#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "dtsnet/tensor.hpp"

namespace dtsnet {

inline constexpr int kSampleRate = 16000;
inline constexpr Index kSegmentSamples = 2 * kSampleRate;

/// Mono PCM samples in [-1, 1) and their rate.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  Index size() const { return static_cast<Index>(samples.size()); }
};

/// Throws DataError unless the clip is finite and at the pipeline rate.
void check_clip(const AudioClip& clip, const char* what);

/// Uniform crop offset in [0, length - segment]; 0 when the clip is not longer than segment.
Index draw_crop_offset(Index length, Index segment, std::mt19937_64& rng);

/// `segment` samples starting at `offset`, zero-padded on the right when the clip runs out.
AudioClip crop(const AudioClip& clip, Index offset, Index segment);

/// Random crop (or right zero-pad) to exactly two seconds.
AudioClip segment_two_seconds(const AudioClip& clip, std::mt19937_64& rng);

/// Stacks equal-length clips into a [B, L] tensor.
Tensor<double> stack_clips(const std::vector<AudioClip>& clips);

/// Row b of a [B, L] tensor as a clip.
AudioClip clip_from_row(const Tensor<double>& signals, Index b, int sample_rate = kSampleRate);

}  // namespace dtsnet
