#pragma once

#include <string>
#include <vector>

#include "dtsnet/trainer.hpp"

namespace dtsnet {

/// Flat key=value configuration covering the model, STFT, loss weights and training loop.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  /// Throws ConfigError naming the key for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  /// Applies "key=value".
  void apply(const std::string& assignment);

  /// Every key in documentation order; doubles use 17 significant digits so parsing the text
  /// reproduces the config exactly.
  std::string to_text() const;

  /// Lines of key=value; '#' starts a comment; blank lines ignored. Keys are applied over
  /// `base`. Errors carry origin:line and the key.
  static RunConfig from_text(const std::string& text, const std::string& origin,
                             RunConfig base = {});
  static RunConfig from_file(const std::string& path, RunConfig base = {});

  void validate() const;
};

struct ConfigKeyDoc {
  std::string key;
  std::string default_value;
  std::string doc;
};

std::vector<ConfigKeyDoc> config_key_docs();

/// One line per key with its default and description, for --help.
std::string config_help();

}  // namespace dtsnet
