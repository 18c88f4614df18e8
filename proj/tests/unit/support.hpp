#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "dtsnet/audio.hpp"
#include "dtsnet/grad_check.hpp"

namespace dtsnet::test {

inline Tensor<double> randn(Shape s, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  Tensor<double> t(std::move(s));
  for (Index i = 0; i < t.size(); ++i) t[i] = nd(rng);
  return t;
}

inline Tensor<double> uniform(Shape s, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ud(lo, hi);
  Tensor<double> t(std::move(s));
  for (Index i = 0; i < t.size(); ++i) t[i] = ud(rng);
  return t;
}

inline AudioClip random_clip(Index n, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  AudioClip c;
  c.samples.resize(static_cast<std::size_t>(n));
  for (auto& s : c.samples) s = nd(rng);
  return c;
}

inline AudioClip tone(Index n, double freq, double amp = 0.5) {
  AudioClip c;
  c.samples.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    c.samples[i] = amp * std::sin(2.0 * 3.141592653589793 * freq * static_cast<double>(i) / kSampleRate);
  }
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("dtsnet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& child = "") const {
    return child.empty() ? path_.string() : (path_ / child).string();
  }

 private:
  std::filesystem::path path_;
};

using Fn = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

inline double check(const Fn& fn, std::vector<Tensor<double>> inputs) {
  GradCheckOptions<double> o;
  o.step = 1e-5;
  return grad_check<double>(fn, std::move(inputs), o).max_rel_error;
}

}  // namespace dtsnet::test
