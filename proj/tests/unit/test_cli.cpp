#include "support.hpp"

#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "dtsnet/config.hpp"
#include "dtsnet/wav.hpp"

namespace dtsnet {
namespace {

struct Result {
  int code = -1;
  std::string out;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the CLI with stdout and stderr merged into one captured string.
Result cli(const test::TempDir& dir, const std::string& args) {
  const auto log = dir.str("cli.log");
  const std::string cmd = std::string(DTSNET_CLI) + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(log);
  return r;
}

bool has(const std::string& text, const std::string& what) {
  return text.find(what) != std::string::npos;
}

TEST(Cli, HelpListsEveryConfigKeyAndExitCodes) {
  test::TempDir dir("cli");
  const auto r = cli(dir, "--help");
  EXPECT_EQ(r.code, 0);
  for (const auto& doc : config_key_docs()) EXPECT_TRUE(has(r.out, doc.key)) << doc.key;
  EXPECT_TRUE(has(r.out, "4 numerical abort"));
}

TEST(Cli, ConfigErrorsExitTwo) {
  test::TempDir dir("cli");
  auto r = cli(dir, "inspect --set bogus=1");
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(has(r.out, "bogus")) << r.out;
  EXPECT_EQ(cli(dir, "inspect --set lr=abc").code, 2);
  EXPECT_EQ(cli(dir, "frobnicate").code, 2);
  EXPECT_EQ(cli(dir, "train --out " + dir.str("t")).code, 2);  // no data source
  std::ofstream(dir.str("bad.cfg")) << "lr=0.1\nbatch_size=-3\n";
  r = cli(dir, "inspect --config " + dir.str("bad.cfg"));
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(has(r.out, "batch_size")) << r.out;
}

TEST(Cli, InspectReportsCountsAndBands) {
  test::TempDir dir("cli");
  auto r = cli(dir, "inspect");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(has(r.out, "parameters: 9910 "));
  EXPECT_TRUE(has(r.out, "desk band 8K-20K: inside"));
  EXPECT_TRUE(has(r.out, "+/-50% band: inside"));
  EXPECT_TRUE(has(r.out, "321 frames x 201 bins"));
  r = cli(dir, "inspect --variant classic_ts");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(has(r.out, "parameters: 10828 "));
}

TEST(Cli, DataErrorsExitThree) {
  test::TempDir dir("cli");
  EXPECT_EQ(cli(dir, "train --data " + dir.str("missing") + " --out " + dir.str("t")).code, 3);
  EXPECT_EQ(cli(dir, "enhance --checkpoint " + dir.str("none.ckpt") + " --input x --output y").code,
            3);
  std::ofstream(dir.str("junk.ckpt")) << "not a checkpoint";
  EXPECT_EQ(cli(dir, "inspect --checkpoint " + dir.str("junk.ckpt")).code, 3);
}

TEST(Cli, EndToEndTrainEnhanceEval) {
  test::TempDir dir("cli");
  auto r = cli(dir, "synth-data --out " + dir.str("data") + " --pairs 3 --samples 4000 --seed 2");
  ASSERT_EQ(r.code, 0) << r.out;

  r = cli(dir, "train --data " + dir.str("data") + " --out " + dir.str("run") +
                   " --max-steps 3 --set segment_samples=1600 --set batch_size=1"
                   " --set eval_every=3 --set valid_fraction=0.34");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto ckpt = dir.str("run/checkpoints/latest.ckpt");
  ASSERT_TRUE(std::filesystem::exists(ckpt));
  const auto curves = slurp(dir.str("run/curves.csv"));
  EXPECT_TRUE(has(curves, "not PESQ"));
  EXPECT_TRUE(has(curves, "\n3,"));
  EXPECT_TRUE(has(slurp(dir.str("run/config.txt")), "segment_samples=1600"));

  r = cli(dir, "train --resume " + ckpt + " --out " + dir.str("run") + " --max-steps 5 --data " +
                   dir.str("data"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto resumed = slurp(dir.str("run/curves.csv"));
  EXPECT_TRUE(has(resumed, "\n5,"));
  EXPECT_EQ(resumed.find("step,"), resumed.rfind("step,"));  // header written once

  r = cli(dir, "inspect --checkpoint " + ckpt);
  EXPECT_EQ(r.code, 0) << r.out;

  r = cli(dir, "enhance --checkpoint " + ckpt + " --input " + dir.str("data/noisy") +
                   " --output " + dir.str("enh"));
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* id : {"synth_0000.wav", "synth_0001.wav", "synth_0002.wav"}) {
    const auto in = wav_read(dir.str("data/noisy/") + id);
    EXPECT_EQ(wav_read(dir.str("enh/") + id).size(), in.size()) << id;
  }
  r = cli(dir, "enhance --checkpoint " + ckpt + " --input " + dir.str("data/noisy") +
                   " --output " + dir.str("enh"));
  EXPECT_EQ(r.code, 3) << r.out;
  EXPECT_TRUE(has(r.out, "--force")) << r.out;
  r = cli(dir, "enhance --force --checkpoint " + ckpt + " --input " +
                   dir.str("data/noisy/synth_0001.wav") + " --output " + dir.str("enh/one.wav"));
  EXPECT_EQ(r.code, 0) << r.out;

  r = cli(dir, "eval --clean " + dir.str("data/clean") + " --enhanced " + dir.str("enh") +
                   " --output " + dir.str("report.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto report = slurp(dir.str("report.csv"));
  EXPECT_TRUE(has(report, "id,ssnr_db,error_mag,error_pha,error_com,quality"));
  EXPECT_TRUE(has(report, "\nsynth_0002.wav,"));
  EXPECT_TRUE(has(report, "\nMEAN,"));

  // a pair that cannot be scored makes eval exit 3
  AudioClip shorter;
  shorter.samples.assign(1000, 0.1);
  wav_write(dir.str("enh/synth_0000.wav"), shorter);
  r = cli(dir, "eval --clean " + dir.str("data/clean") + " --enhanced " + dir.str("enh"));
  EXPECT_EQ(r.code, 3) << r.out;
}

TEST(Cli, SyntheticTrainWithMetricLoss) {
  test::TempDir dir("cli");
  const auto r = cli(dir, "train --synthetic --synth-pairs 2 --synth-samples 2000 --out " +
                              dir.str("run") +
                              " --max-steps 2 --set lambda2=1 --set segment_samples=1600"
                              " --set batch_size=1 --set eval_every=0");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto curves = slurp(dir.str("run/curves.csv"));
  std::istringstream in(curves);
  std::string line, last;
  while (std::getline(in, line)) last = line;
  // step, l_mag, l_metric, l_disc all present
  EXPECT_EQ(last.rfind("2,", 0), 0u) << last;
  EXPECT_FALSE(has(last, ",,,,"));
}

}  // namespace
}  // namespace dtsnet
