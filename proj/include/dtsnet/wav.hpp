#pragma once

#include <string>

#include "dtsnet/audio.hpp"

namespace dtsnet {

/// Reads a RIFF/WAVE file holding 16-bit PCM, mono, 16 kHz. Samples are scaled by 1/32768.
/// Throws DataError for any other layout, inconsistent chunk sizes or a second data chunk.
AudioClip wav_read(const std::string& path);

/// Writes 16-bit PCM mono at clip.sample_rate. Samples are rounded to the nearest step of
/// 1/32768 and clamped to [-1, 32767/32768].
void wav_write(const std::string& path, const AudioClip& clip);

/// Nearest 16-bit sample value for x.
short quantize_sample(double x);

}  // namespace dtsnet
