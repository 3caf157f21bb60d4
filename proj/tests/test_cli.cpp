#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mgenseg/config.hpp"
#include "mgenseg/report.hpp"

using namespace mgenseg;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "mgenseg_cli";

struct Result {
  int code = -1;
  std::string output;
};

Result run(const std::string& args, const std::string& env = "") {
  const auto log = kRoot / "last_output.txt";
  const std::string cmd = env + " " + MGENSEG_CLI + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

RunConfig tiny_config() {
  auto c = default_run_config();
  c.data.image_size = 32;
  c.data.n_subjects_per_modality = 20;
  c.data.slices_per_subject = 4;
  c.data.lesion_radius_min = 2.0;
  c.data.lesion_radius_max = 5.0;
  c.model.base_channels = 4;
  c.model.max_channels = 8;
  c.model.disc_channels = 4;
  c.train.epochs = 2;
  c.train.batch_size = 4;
  c.train.max_steps_per_epoch = 2;
  c.train.seeds = {0, 1};
  return c;
}

fs::path write_config(const std::string& name, const RunConfig& c) {
  fs::create_directories(kRoot);
  auto p = kRoot / name;
  std::ofstream(p) << to_ini(c);
  return p;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);) n += !l.empty();
  return n;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    config = write_config("tiny.ini", tiny_config()).string();
    data = (kRoot / "data").string();
    auto r = run("--config " + config + " --out " + data + " synth");
    ASSERT_EQ(r.code, 0) << r.output;
  }
  static std::string config, data;
};
std::string Cli::config, Cli::data;

}  // namespace

TEST_F(Cli, Version) {
  auto r = run("--version");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.output.find("0.1.0"), std::string::npos);
}

TEST_F(Cli, DefaultsParseBack) {
  auto r = run("defaults");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(config_hash(parse_config(r.output)), config_hash(default_run_config()));
}

TEST_F(Cli, SynthWritesManifestAndRefusesToClobber) {
  EXPECT_TRUE(fs::exists(fs::path(data) / "manifest.tsv"));
  EXPECT_TRUE(fs::exists(fs::path(data) / "config.ini"));
  EXPECT_TRUE(fs::exists(fs::path(data) / "run.json"));
  EXPECT_EQ(run("--config " + config + " --out " + data + " synth").code, 2);
  auto again = (kRoot / "data2").string();
  EXPECT_EQ(run("--config " + config + " --out " + again + " synth").code, 0);
  EXPECT_EQ(run("--config " + config + " --out " + again + " --force synth").code, 0);
  // Same config, same bytes.
  std::ifstream a(fs::path(data) / "manifest.tsv"), b(fs::path(again) / "manifest.tsv");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());
}

TEST_F(Cli, ConfigErrorsExitWithTwo) {
  auto bad = kRoot / "bad.ini";
  std::ofstream(bad) << to_ini(tiny_config()) << "\n[train2]\nfoo = 1\n";
  auto r = run("--config " + bad.string() + " --out " + (kRoot / "x").string() + " train");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("unknown config section"), std::string::npos);
  EXPECT_EQ(run("--out " + (kRoot / "x").string() + " train").code, 2);
  EXPECT_NE(run("no-such-command").code, 0);
}

TEST_F(Cli, DataHashMismatchRejected) {
  auto c = tiny_config();
  c.data.seed = 99;
  auto other = write_config("other_data.ini", c);
  auto r = run("--config " + other.string() + " --data " + data + " --out " + (kRoot / "mismatch").string() +
               " train");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("data hash"), std::string::npos);
}

TEST_F(Cli, TrainEvalReportEndToEnd) {
  const auto out = kRoot / "run";
  auto r = run("--config " + config + " --data " + data + " --out " + out.string() + " --quiet train");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(out / "config.ini"));
  EXPECT_TRUE(fs::exists(out / "run.json"));
  ASSERT_TRUE(fs::exists(out / "results.csv"));
  EXPECT_EQ(read_results_csv(out / "results.csv").size(), 2u);
  const auto hash = config_hash(load_config(config));
  const auto ckpt = out / "runs" / hash / "seed_0" / "best.ckpt";
  ASSERT_TRUE(fs::exists(ckpt));
  EXPECT_TRUE(fs::exists(out / "runs" / hash / "seed_1" / "done.json"));
  EXPECT_TRUE(fs::exists(out / "figures" / hash / "attention_ranges.csv"));

  // A repeated invocation reuses the finished seeds and reports the same rows.
  const auto before = read_results_csv(out / "results.csv");
  ASSERT_EQ(run("--config " + config + " --data " + data + " --out " + out.string() + " --quiet train").code, 0);
  const auto after = read_results_csv(out / "results.csv");
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].dice, after[i].dice);

  const auto json = kRoot / "eval.json";
  r = run("--config " + config + " --data " + data + " --out " + json.string() + " eval --checkpoint " +
          ckpt.string() + " --partition test");
  ASSERT_EQ(r.code, 0) << r.output;
  auto j = nlohmann::json::parse(std::ifstream(json));
  EXPECT_EQ(j.at("modality"), "T");
  EXPECT_EQ(j.at("per_slice").size(), j.at("n_slices").get<std::size_t>());
  EXPECT_EQ(run("--config " + config + " --data " + data + " eval --checkpoint " + ckpt.string() +
                " --partition train")
                .code,
            2);
  EXPECT_EQ(run("--config " + config + " --data " + data + " eval --checkpoint " + ckpt.string() +
                " --partition train --allow-train")
                .code,
            0);

  const auto rep = kRoot / "report";
  r = run("--out " + rep.string() + " report --results " + (out / "results.csv").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(count_lines(rep / "aggregate.csv"), 2u);
  EXPECT_EQ(run("--out " + (kRoot / "empty_report").string() + " report").code, 2);
}

TEST_F(Cli, DataRootPrecedence) {
  const auto out = kRoot / "env_run";
  // Environment variable alone.
  auto r = run("--config " + config + " --seed 3 --out " + out.string() + " --quiet train",
               "MGENSEG_DATA_ROOT=" + data);
  EXPECT_EQ(r.code, 0) << r.output;
  // The flag beats a broken environment value.
  r = run("--config " + config + " --seed 3 --data " + data + " --out " + out.string() + " --quiet train",
          "MGENSEG_DATA_ROOT=/nonexistent");
  EXPECT_EQ(r.code, 0) << r.output;
  r = run("--config " + config + " --seed 3 --out " + out.string() + " --quiet train",
          "MGENSEG_DATA_ROOT=/nonexistent");
  EXPECT_NE(r.code, 0);
}

TEST_F(Cli, InterruptedRunResumes) {
  const auto out = kRoot / "interrupt";
  const std::string base = "--config " + config + " --data " + data + " --seed 5 --out " + out.string() + " --quiet ";
  auto r = run(base + "ablate no_image_level --stop-after-epochs 1");
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_FALSE(fs::exists(out / "results.csv") && count_lines(out / "results.csv") > 1);
  EXPECT_EQ(run(base + "ablate no_image_level").code, 2);
  r = run(base + "--resume ablate no_image_level");
  EXPECT_EQ(r.code, 0) << r.output;
  auto rows = read_results_csv(out / "results.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].ablation, "no_image_level");
  EXPECT_EQ(rows[0].seed, 5u);
}

TEST_F(Cli, MatrixRowCountsMatchConfigs) {
  const auto out = kRoot / "matrix";
  auto c = tiny_config();
  c.train.epochs = 1;
  c.train.max_steps_per_epoch = 1;
  auto cfg = write_config("matrix.ini", c);
  auto r = run("--config " + cfg.string() + " --data " + data + " --seeds 1 --out " + out.string() +
               " --quiet --jobs 2 matrix --ablations --baseline");
  ASSERT_EQ(r.code, 0) << r.output;
  auto rows = read_results_csv(out / "results.csv");
  EXPECT_EQ(rows.size(), 6u);
  EXPECT_EQ(count_lines(out / "aggregate.csv"), 1u + 6u);
}
