#include "dtsnet/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace dtsnet {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& want) {
  throw ConfigError(key + ": invalid value '" + value + "' (expected " + want + ")");
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    bad(key, v, "a number");
  }
  if (used != v.size()) bad(key, v, "a number");
  return d;
}

long long parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long i = 0;
  try {
    i = std::stoll(v, &used);
  } catch (const std::exception&) {
    bad(key, v, "an integer");
  }
  if (used != v.size()) bad(key, v, "an integer");
  return i;
}

unsigned long long parse_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v[0] == '-') bad(key, v, "a non-negative integer");
  std::size_t used = 0;
  unsigned long long i = 0;
  try {
    i = std::stoull(v, &used);
  } catch (const std::exception&) {
    bad(key, v, "a non-negative integer");
  }
  if (used != v.size()) bad(key, v, "a non-negative integer");
  return i;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad(key, v, "true or false");
}

std::string drop_text(const BranchToggles& b) {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) s += (s.empty() ? "" : ",") + std::string(name);
  };
  add(b.lke, "lke");
  add(b.ca, "ca");
  add(b.lsg, "lsg");
  return s.empty() ? "none" : s;
}

BranchToggles parse_drop(const std::string& key, const std::string& v) {
  BranchToggles b;
  if (v == "none" || v.empty()) return b;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      switch (parse_branch(trim(item))) {
        case Branch::LKE: b.lke = false; break;
        case Branch::CA: b.ca = false; break;
        case Branch::LSG: b.lsg = false; break;
      }
    } catch (const ConfigError&) {
      bad(key, v, "none or a comma list of lke, ca, lsg");
    }
  }
  return b;
}

struct Entry {
  const char* key;
  const char* doc;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define INT_ENTRY(name, field, doc)                                                         \
  Entry {                                                                                   \
    name, doc,                                                                              \
        [](RunConfig& c, const std::string& k, const std::string& v) {                      \
          c.field = static_cast<decltype(c.field)>(parse_int(k, v));                        \
        },                                                                                  \
        [](const RunConfig& c) { return std::to_string(c.field); }                          \
  }
#define REAL_ENTRY(name, field, doc)                                                        \
  Entry {                                                                                   \
    name, doc,                                                                              \
        [](RunConfig& c, const std::string& k, const std::string& v) {                      \
          c.field = parse_double(k, v);                                                     \
        },                                                                                  \
        [](const RunConfig& c) { return fmt_double(c.field); }                              \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      Entry{"variant", "network: dense_ts or classic_ts",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              try {
                c.model.variant = parse_variant(v);
              } catch (const ConfigError&) {
                bad(k, v, "dense_ts or classic_ts");
              }
            },
            [](const RunConfig& c) { return to_string(c.model.variant); }},
      INT_ENTRY("dense_channel", model.dense_channel, "Dense-TS feature channels"),
      INT_ENTRY("depth", model.depth, "number of dense TS layers"),
      INT_ENTRY("classic_channel", model.classic_channel, "Classic-TS feature channels"),
      INT_ENTRY("classic_blocks", model.classic_blocks, "serial TS blocks in Classic-TS"),
      INT_ENTRY("lke_kernel", model.lke_kernel, "large-kernel depthwise taps (odd)"),
      INT_ENTRY("lsg_kernel", model.lsg_kernel, "learnable-sigmoid-gate depthwise taps (odd)"),
      REAL_ENTRY("mask_beta", model.mask_beta, "mask upper bound of the output learnable sigmoid"),
      REAL_ENTRY("gate_beta", model.gate_beta, "upper bound of the gate learnable sigmoid"),
      REAL_ENTRY("residual_scale", model.residual_scale, "scale of the last dense branch before the residual add"),
      REAL_ENTRY("norm_eps", model.norm_eps, "instance norm epsilon"),
      REAL_ENTRY("mag_compression", model.mag_compression, "power-law exponent on the network input magnitude; 1 disables"),
      Entry{"adjust", "dense-layer channel adjustment: pointwise or depthwise3x3",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "pointwise") {
                c.model.adjust = AdjustConv::Pointwise;
              } else if (v == "depthwise3x3") {
                c.model.adjust = AdjustConv::Depthwise3x3;
              } else {
                bad(k, v, "pointwise or depthwise3x3");
              }
            },
            [](const RunConfig& c) {
              return std::string(c.model.adjust == AdjustConv::Pointwise ? "pointwise"
                                                                         : "depthwise3x3");
            }},
      Entry{"drop", "MVGB views removed: none or a comma list of lke, ca, lsg",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.model.branches = parse_drop(k, v);
            },
            [](const RunConfig& c) { return drop_text(c.model.branches); }},
      INT_ENTRY("n_fft", model.n_fft, "FFT size"),
      INT_ENTRY("win_length", model.win_length, "Hann window length"),
      INT_ENTRY("hop", model.hop, "hop size in samples"),
      INT_ENTRY("batch_size", train.batch_size, "clips per step"),
      INT_ENTRY("max_steps", train.max_steps, "training steps"),
      REAL_ENTRY("lr", train.adam.lr, "AdamW learning rate"),
      REAL_ENTRY("beta1", train.adam.beta1, "AdamW first-moment decay"),
      REAL_ENTRY("beta2", train.adam.beta2, "AdamW second-moment decay"),
      REAL_ENTRY("eps", train.adam.eps, "AdamW denominator epsilon"),
      REAL_ENTRY("weight_decay", train.adam.weight_decay, "AdamW decoupled weight decay"),
      INT_ENTRY("eval_every", train.eval_every, "validation interval in steps; 0 disables"),
      INT_ENTRY("checkpoint_every", train.checkpoint_every, "checkpoint interval in steps; 0 keeps only the final one"),
      Entry{"seed", "seed for initialization, data split, batching and cropping",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.train.seed = parse_uint(k, v);
            },
            [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      INT_ENTRY("segment_samples", train.segment_samples, "training crop length in samples (32000 = 2 s)"),
      REAL_ENTRY("valid_fraction", train.valid_fraction, "fraction of pairs held out for validation"),
      INT_ENTRY("eval_items", train.eval_items, "validation clips per evaluation; 0 means all"),
      Entry{"consistency", "project the estimate through ISTFT/STFT before the magnitude loss",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.train.consistency = parse_bool(k, v);
            },
            [](const RunConfig& c) { return std::string(c.train.consistency ? "true" : "false"); }},
      Entry{"lambda1", "weight of the consistency magnitude loss",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              const double l1 = parse_double(k, v);
              c.train.weights = LossWeights::unchecked(l1, c.train.weights.lambda2());
            },
            [](const RunConfig& c) { return fmt_double(c.train.weights.lambda1()); }},
      Entry{"lambda2", "weight of the metric loss; 0 disables the discriminator",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              const double l2 = parse_double(k, v);
              c.train.weights = LossWeights::unchecked(c.train.weights.lambda1(), l2);
            },
            [](const RunConfig& c) { return fmt_double(c.train.weights.lambda2()); }},
  };
  return table;
}

#undef INT_ENTRY
#undef REAL_ENTRY

const Entry& find_entry(const std::string& key) {
  for (const auto& e : entries()) {
    if (key == e.key) return e;
  }
  throw ConfigError(key + ": unknown config key (see --help for the list)");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  find_entry(key).set(*this, key, trim(value));
}

std::string RunConfig::get(const std::string& key) const { return find_entry(key).get(*this); }

void RunConfig::apply(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError(trim(assignment) + ": expected key=value");
  }
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& e : entries()) s += std::string(e.key) + "=" + e.get(*this) + "\n";
  return s;
}

RunConfig RunConfig::from_text(const std::string& text, const std::string& origin,
                               RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      base.apply(line);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

RunConfig RunConfig::from_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str(), path, std::move(base));
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (train.segment_samples < model.n_fft) {
    throw ConfigError("segment_samples: must be at least n_fft (" + std::to_string(model.n_fft) +
                      ")");
  }
}

std::vector<ConfigKeyDoc> config_key_docs() {
  const RunConfig defaults;
  std::vector<ConfigKeyDoc> out;
  for (const auto& e : entries()) out.push_back({e.key, e.get(defaults), e.doc});
  return out;
}

std::string config_help() {
  std::string s = "Config keys (key=value in --config files or --set):\n";
  for (const auto& d : config_key_docs()) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "  %-17s %-13s %s\n", d.key.c_str(), d.default_value.c_str(),
                  d.doc.c_str());
    s += buf;
  }
  return s;
}

}  // namespace dtsnet
