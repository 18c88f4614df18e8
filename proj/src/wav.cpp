#include "dtsnet/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace dtsnet {

namespace {

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(static_cast<unsigned char>(v & 0xff));
  b.push_back(static_cast<unsigned char>(v >> 8));
}

void put_tag(std::vector<unsigned char>& b, const char* tag) { b.insert(b.end(), tag, tag + 4); }

}  // namespace

short quantize_sample(double x) {
  const double v = std::nearbyint(x * 32768.0);
  return static_cast<short>(std::clamp(v, -32768.0, 32767.0));
}

AudioClip wav_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open");
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& why) { throw DataError(path + ": " + why); };
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
    fail("not a RIFF/WAVE file");
  }
  if (static_cast<std::size_t>(le32(buf.data() + 4)) + 8 != buf.size()) {
    fail("RIFF size field does not match file size");
  }
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_bytes = 0;
  std::size_t pos = 12;
  while (pos < buf.size()) {
    if (buf.size() - pos < 8) fail("truncated chunk header");
    const unsigned char* hdr = buf.data() + pos;
    const std::size_t size = le32(hdr + 4);
    if (size > buf.size() - pos - 8) fail("chunk size exceeds file");
    const unsigned char* body = hdr + 8;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (have_fmt) fail("more than one fmt chunk");
      if (size < 16) fail("fmt chunk too short");
      const auto format = le16(body);
      const auto channels = le16(body + 2);
      const auto rate = le32(body + 4);
      const auto bits = le16(body + 14);
      if (format != 1) fail("only PCM (format 1) is supported, got format " + std::to_string(format));
      if (channels != 1) {
        fail(std::to_string(channels) + " channels; downmix to mono first (e.g. sox in.wav -c 1 out.wav)");
      }
      if (rate != static_cast<std::uint32_t>(kSampleRate)) {
        fail(std::to_string(rate) + " Hz; resample to 16000 Hz first (e.g. sox in.wav -r 16000 out.wav)");
      }
      if (bits != 16) fail(std::to_string(bits) + "-bit samples; convert to 16-bit PCM first");
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      if (data) fail("more than one data chunk");
      if (!have_fmt) fail("data chunk before fmt chunk");
      if (size % 2 != 0) fail("data chunk size is odd for 16-bit samples");
      data = body;
      data_bytes = size;
    }
    pos += 8 + size + (size & 1);
  }
  if (!have_fmt) fail("missing fmt chunk");
  if (!data) fail("missing data chunk");
  AudioClip clip;
  clip.sample_rate = kSampleRate;
  clip.samples.resize(data_bytes / 2);
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    const auto raw = static_cast<std::int16_t>(le16(data + 2 * i));
    clip.samples[i] = static_cast<double>(raw) / 32768.0;
  }
  return clip;
}

void wav_write(const std::string& path, const AudioClip& clip) {
  for (double s : clip.samples) {
    if (!std::isfinite(s)) throw NumericalError(path + ": refusing to write non-finite samples");
  }
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  std::vector<unsigned char> b;
  b.reserve(44 + 2 * clip.samples.size());
  put_tag(b, "RIFF");
  put32(b, 36 + 2 * n);
  put_tag(b, "WAVE");
  put_tag(b, "fmt ");
  put32(b, 16);
  put16(b, 1);
  put16(b, 1);
  put32(b, static_cast<std::uint32_t>(clip.sample_rate));
  put32(b, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  put16(b, 2);
  put16(b, 16);
  put_tag(b, "data");
  put32(b, 2 * n);
  for (double s : clip.samples) put16(b, static_cast<std::uint16_t>(quantize_sample(s)));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(path + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw DataError(path + ": write failed");
}

}  // namespace dtsnet
