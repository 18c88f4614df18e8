// dtsnet: train, enhance, evaluate and inspect Dense-TSNet speech enhancement models.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dtsnet/checkpoint.hpp"
#include "dtsnet/config.hpp"
#include "dtsnet/metrics.hpp"
#include "dtsnet/trainer.hpp"
#include "dtsnet/wav.hpp"

namespace fs = std::filesystem;
using namespace dtsnet;

namespace {

constexpr double kReferenceParams = 14000.0;
constexpr double kReferenceMacs = 356e6;
constexpr const char* kProxyLabel =
    "proxy: logistic map of segmental magnitude SNR (midpoint 15 dB, slope 4 dB), not PESQ";

struct ConfigArgs {
  std::string config_file;
  std::vector<std::string> sets;
  std::string variant;
  std::string drop;
};

void add_config_args(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.config_file, "key=value config file");
  cmd->add_option("--set", a.sets, "override one key (key=value); repeatable");
  cmd->add_option("--variant", a.variant, "dense_ts or classic_ts");
  cmd->add_option("--drop", a.drop, "remove MVGB views: lke, ca, lsg (comma list)");
}

RunConfig resolve_config(const ConfigArgs& a, RunConfig base) {
  RunConfig cfg = a.config_file.empty() ? base : RunConfig::from_file(a.config_file, base);
  for (const auto& s : a.sets) cfg.apply(s);
  if (!a.variant.empty()) cfg.set("variant", a.variant);
  if (!a.drop.empty()) cfg.set("drop", a.drop);
  return cfg;
}

ModelParams model_from_checkpoint(const Checkpoint& ckpt, RunConfig& cfg) {
  cfg = RunConfig::from_text(ckpt.config_text, "checkpoint config");
  cfg.model.validate();
  auto model = build_model(cfg.model, cfg.train.seed);
  import_params(model.store, ckpt.section("model"), "checkpoint model");
  return model;
}

// ---------------------------------------------------------------------------------------------

struct TrainArgs {
  ConfigArgs cfg;
  std::string data;
  bool synthetic = false;
  Index synth_pairs = 8;
  Index synth_samples = kSegmentSamples;
  std::string out = "run";
  std::string resume;
  bool no_consistency = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> max_steps;
};

int cmd_train(const TrainArgs& a) {
  RunConfig base;
  std::optional<Checkpoint> ckpt;
  if (!a.resume.empty()) {
    ckpt = load_checkpoint(a.resume);
    base = RunConfig::from_text(ckpt->config_text, a.resume + " config");
  }
  RunConfig cfg = resolve_config(a.cfg, base);
  if (a.no_consistency) cfg.train.consistency = false;
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.max_steps) cfg.train.max_steps = *a.max_steps;
  cfg.validate();

  fs::create_directories(a.out);
  PairedDataset data;
  if (a.synthetic) {
    SynthConfig sc;
    sc.pairs = a.synth_pairs;
    sc.samples = a.synth_samples;
    const std::string dir = (fs::path(a.out) / "data").string();
    synth_dataset(sc, cfg.train.seed, dir);
    data = PairedDataset::load(dir);
  } else if (!a.data.empty()) {
    data = PairedDataset::load(a.data);
  } else {
    throw ConfigError("train: one of --data DIR or --synthetic is required");
  }
  auto [train, valid] = data.split(cfg.train.valid_fraction, cfg.train.seed);

  const std::string config_text = cfg.to_text();
  {
    std::ofstream echo(fs::path(a.out) / "config.txt");
    echo << config_text;
  }
  Trainer trainer(build_model(cfg.model, cfg.train.seed), cfg.train, std::move(train),
                  std::move(valid), proxy_quality, kProxyLabel);
  trainer.set_diagnostic_dir(a.out);
  trainer.set_config_text(config_text);
  if (ckpt) trainer.restore(*ckpt);

  const fs::path curves = fs::path(a.out) / "curves.csv";
  const bool append = ckpt && fs::exists(curves);
  std::ofstream out(curves, append ? std::ios::app : std::ios::trunc);
  CurveLog log(out);
  if (!append) log.header(kProxyLabel, cfg.train.consistency);
  trainer.run(&log, (fs::path(a.out) / "checkpoints").string());
  std::printf("trained %lld steps; checkpoint %s\n", static_cast<long long>(trainer.step_count()),
              (fs::path(a.out) / "checkpoints" / "latest.ckpt").string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------------------------

struct EnhanceArgs {
  std::string checkpoint;
  std::string input;
  std::string output;
  bool force = false;
};

int cmd_enhance(const EnhanceArgs& a) {
  RunConfig cfg;
  const auto ckpt = load_checkpoint(a.checkpoint);
  auto model = model_from_checkpoint(ckpt, cfg);
  const RealStft stft(cfg.model.n_fft, cfg.model.win_length, cfg.model.hop);

  std::vector<std::pair<fs::path, fs::path>> jobs;
  if (fs::is_directory(a.input)) {
    fs::create_directories(a.output);
    std::vector<fs::path> inputs;
    for (const auto& e : fs::directory_iterator(a.input)) {
      if (e.is_regular_file() && e.path().extension() == ".wav") inputs.push_back(e.path());
    }
    std::sort(inputs.begin(), inputs.end());
    if (inputs.empty()) throw DataError(a.input + ": no .wav files");
    for (const auto& p : inputs) jobs.emplace_back(p, fs::path(a.output) / p.filename());
  } else if (fs::is_regular_file(a.input)) {
    fs::path dst = a.output;
    if (fs::is_directory(dst)) dst /= fs::path(a.input).filename();
    jobs.emplace_back(a.input, dst);
  } else {
    throw DataError(a.input + ": no such file or directory");
  }
  if (!a.force) {
    for (const auto& [src, dst] : jobs) {
      if (fs::exists(dst)) throw DataError(dst.string() + ": exists (pass --force to overwrite)");
    }
  }
  for (const auto& [src, dst] : jobs) {
    const auto noisy = wav_read(src.string());
    wav_write(dst.string(), enhance_clip(model, stft, noisy));
    std::printf("%s -> %s\n", src.string().c_str(), dst.string().c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------------------------

struct EvalArgs {
  std::string clean;
  std::string enhanced;
  std::string output;
  std::string quality_scores;
};

int cmd_eval(const EvalArgs& a) {
  const RealStft stft;
  auto report = evaluate_dir(a.clean, a.enhanced, proxy_quality, stft);
  std::string label = kProxyLabel;
  if (!a.quality_scores.empty()) {
    apply_external_quality(report, read_quality_scores(a.quality_scores));
    label = "external scores from " + a.quality_scores;
  }
  if (a.output.empty()) {
    write_report_csv(std::cout, report, label);
  } else {
    std::ofstream out(a.output);
    if (!out) throw DataError(a.output + ": cannot write report");
    write_report_csv(out, report, label);
    std::printf("%zu pairs evaluated, %zu excluded; report %s\n", report.rows.size(),
                report.excluded.size(), a.output.c_str());
  }
  for (const auto& [name, why] : report.excluded) {
    std::fprintf(stderr, "excluded %s: %s\n", name.c_str(), why.c_str());
  }
  if (report.any_failed) return 3;
  if (report.rows.empty()) throw DataError("eval: no pairs could be evaluated");
  return 0;
}

// ---------------------------------------------------------------------------------------------

struct InspectArgs {
  ConfigArgs cfg;
  std::string checkpoint;
};

int cmd_inspect(const InspectArgs& a) {
  RunConfig cfg;
  ModelParams model;
  if (!a.checkpoint.empty()) {
    model = model_from_checkpoint(load_checkpoint(a.checkpoint), cfg);
  } else {
    cfg = resolve_config(a.cfg, RunConfig{});
    cfg.validate();
    model = build_model(cfg.model, cfg.train.seed);
  }
  const Index frames = two_second_frames(cfg.model);
  const Index bins = cfg.model.freq_bins();
  const auto costs = layer_costs(model, frames, bins);

  std::printf("variant %s, input %lld frames x %lld bins (2 s)\n\n",
              to_string(cfg.model.variant).c_str(), static_cast<long long>(frames),
              static_cast<long long>(bins));
  std::printf("%-36s %10s %16s\n", "layer", "params", "MACs");
  Index psum = 0, msum = 0;
  for (const auto& c : costs) {
    std::printf("%-36s %10lld %16lld\n", c.name.c_str(), static_cast<long long>(c.params),
                static_cast<long long>(c.macs));
    psum += c.params;
    msum += c.macs;
  }
  const Index total = count_params(model);
  const Index macs = count_macs(model, frames, bins);
  std::printf("%-36s %10lld %16lld\n\n", "total", static_cast<long long>(psum),
              static_cast<long long>(msum));

  const bool in_band = total >= 8000 && total <= 20000;
  const double mac_ratio = static_cast<double>(macs) / kReferenceMacs;
  std::printf("parameters: %lld (reference 14K, %.1f%%; desk band 8K-20K: %s)\n",
              static_cast<long long>(total), 100.0 * static_cast<double>(total) / kReferenceParams,
              in_band ? "inside" : "outside");
  std::printf("MACs (2 s): %.1fM (reference 356M, ratio %.3f; +/-50%% band: %s; "
              "published hyperparameters incomplete)\n",
              static_cast<double>(macs) / 1e6, mac_ratio,
              (mac_ratio >= 0.5 && mac_ratio <= 1.5) ? "inside" : "outside");
  if (psum != total || msum != macs) {
    std::fprintf(stderr, "inspect: layer table does not sum to totals\n");
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------------------------

struct SynthArgs {
  std::string out = "synth";
  SynthConfig cfg;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  if (a.cfg.pairs < 1) throw ConfigError("pairs: must be >= 1");
  if (a.cfg.samples < 400) throw ConfigError("samples: must be >= 400");
  if (!(a.cfg.snr_min_db <= a.cfg.snr_max_db)) throw ConfigError("snr-min: exceeds snr-max");
  synth_dataset(a.cfg, a.seed, a.out);
  std::printf("wrote %lld pairs to %s/clean and %s/noisy\n", static_cast<long long>(a.cfg.pairs),
              a.out.c_str(), a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense-TSNet speech enhancement toolkit"};
  app.require_subcommand(1);
  app.footer("\n" + config_help() +
             "\nExit codes: 0 success, 2 config error, 3 data error, 4 numerical abort.");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model and write curves and checkpoints");
  add_config_args(train, ta.cfg);
  train->add_option("--data", ta.data, "dataset root with clean/ and noisy/ WAV folders");
  train->add_flag("--synthetic", ta.synthetic, "generate a synthetic dataset under OUT/data");
  train->add_option("--synth-pairs", ta.synth_pairs, "synthetic pairs")->capture_default_str();
  train->add_option("--synth-samples", ta.synth_samples, "samples per synthetic clip")
      ->capture_default_str();
  train->add_option("--out", ta.out, "output directory")->capture_default_str();
  train->add_option("--resume", ta.resume, "continue from a checkpoint");
  train->add_flag("--no-consistency", ta.no_consistency, "plain magnitude MSE instead of the "
                                                          "consistency loss");
  train->add_option("--seed", ta.seed, "override seed");
  train->add_option("--max-steps", ta.max_steps, "override max_steps");

  EnhanceArgs ea;
  auto* enhance = app.add_subcommand("enhance", "enhance a WAV file or a directory of WAVs");
  enhance->add_option("--checkpoint", ea.checkpoint, "trained checkpoint")->required();
  enhance->add_option("--input", ea.input, "noisy WAV file or directory")->required();
  enhance->add_option("--output", ea.output, "output WAV file or directory")->required();
  enhance->add_flag("--force", ea.force, "overwrite existing outputs");

  EvalArgs va;
  auto* eval = app.add_subcommand("eval", "score enhanced WAVs against clean references");
  eval->add_option("--clean", va.clean, "clean reference directory")->required();
  eval->add_option("--enhanced", va.enhanced, "enhanced directory")->required();
  eval->add_option("--output", va.output, "CSV report path (default stdout)");
  eval->add_option("--quality-scores", va.quality_scores,
                   "CSV of id,Q to use instead of the built-in proxy quality");

  InspectArgs ia;
  auto* inspect = app.add_subcommand("inspect", "parameter and MAC counts per layer");
  add_config_args(inspect, ia.cfg);
  inspect->add_option("--checkpoint", ia.checkpoint, "inspect a trained checkpoint");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth-data", "write a synthetic clean/noisy dataset");
  synth->add_option("--out", sa.out, "output directory")->capture_default_str();
  synth->add_option("--pairs", sa.cfg.pairs, "number of pairs")->capture_default_str();
  synth->add_option("--samples", sa.cfg.samples, "samples per clip")->capture_default_str();
  synth->add_option("--seed", sa.seed, "seed")->capture_default_str();
  synth->add_option("--snr-min", sa.cfg.snr_min_db, "lowest SNR in dB")->capture_default_str();
  synth->add_option("--snr-max", sa.cfg.snr_max_db, "highest SNR in dB")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(ta);
    if (*enhance) return cmd_enhance(ea);
    if (*eval) return cmd_eval(va);
    if (*inspect) return cmd_inspect(ia);
    if (*synth) return cmd_synth(sa);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return 4;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
