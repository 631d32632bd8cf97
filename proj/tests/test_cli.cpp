#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "refgame/cli.hpp"

using namespace refgame;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "refgame");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("refgame_cli_") + info->name() + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }

  // Small world and a short run so each CLI call takes milliseconds.
  std::vector<std::string> small(const fs::path& out) const {
    return {"--out", out.string(), "--set", "world.n_categories=2", "world.concepts_per_category=2",
            "world.instances_per_concept=3", "world.feature_dim=8", "train.batch_size=8", "train.log_interval=10",
            "train.eval_games=60", "--iterations", "30", "--seed", "5"};
  }

  std::vector<std::string> cmd(const std::string& sub, const fs::path& out,
                               std::vector<std::string> extra = {}) const {
    std::vector<std::string> a{sub};
    for (auto& s : small(out)) a.push_back(s);
    for (auto& s : extra) a.push_back(s);
    return a;
  }

  fs::path dir_;
};

Json single_json_line(const std::string& text) {
  EXPECT_FALSE(text.empty());
  EXPECT_EQ(text.back(), '\n');
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
  return Json::parse(text);
}

}  // namespace

TEST_F(CliTest, TrainThenEvalReproducesFinalMetric) {
  const fs::path run = dir_ / "run";
  const CliRun t = cli(cmd("train", run));
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_TRUE(t.err.empty());
  for (const char* f : {"manifest.json", "metrics.jsonl", "checkpoint.json"}) EXPECT_TRUE(fs::exists(run / f)) << f;

  const auto metrics = parse_metrics_jsonl(read_file(run / "metrics.jsonl"));
  ASSERT_EQ(metrics.size(), 3u);
  EXPECT_EQ(metrics.back().iteration, 30u);

  const CliRun e = cli(cmd("eval", run));
  ASSERT_EQ(e.code, 0) << e.err;
  const EvalReport rep = eval_report_from_json(parse_json(read_file(run / "eval.json"), "eval"));
  EXPECT_EQ(rep.n_games, 60u);
  EXPECT_EQ(rep.comm_success, metrics.back().eval_success);
  EXPECT_EQ(rep.used_symbols, metrics.back().used_symbols);
  EXPECT_NE(e.out.find("comm_success"), std::string::npos);

  const ExperimentManifest echoed = manifest_from_json(parse_json(read_file(run / "manifest.json"), "m"));
  EXPECT_EQ(echoed.train.seed, 5u);
  EXPECT_EQ(echoed.train.n_iterations, 30u);
  EXPECT_EQ(echoed.world.feature_dim, 8u);
}

TEST_F(CliTest, AnalyzeWritesArtifacts) {
  const fs::path run = dir_ / "run";
  ASSERT_EQ(cli(cmd("train", run, {"--grounding"})).code, 0);
  ASSERT_EQ(cli(cmd("eval", run, {"--rows", "concept"})).code, 0);
  const CliRun a = cli(cmd("analyze", run));
  ASSERT_EQ(a.code, 0) << a.err;
  for (const char* f : {"analysis.json", "usage.csv", "embeddings.csv"}) EXPECT_TRUE(fs::exists(run / f)) << f;
  const Json j = parse_json(read_file(run / "analysis.json"), "analysis");
  EXPECT_TRUE(j.contains("purity"));
  EXPECT_TRUE(j.contains("assignment"));
  ASSERT_TRUE(j.contains("grounding"));
  EXPECT_DOUBLE_EQ(j["grounding"]["chance"].get<double>(), 100.0 / 100.0);
  EXPECT_EQ(j["grounding"]["n_rounds"].get<std::size_t>(), 60u);
  EXPECT_NE(a.out.find("grounding match"), std::string::npos);

  const std::string usage = read_file(run / "usage.csv");
  EXPECT_EQ(static_cast<std::size_t>(std::count(usage.begin(), usage.end(), '\n')), 1u + 4u);
  if (!j.contains("spectrum_error")) {
    EXPECT_TRUE(fs::exists(run / "spectrum.csv"));
  }
}

TEST_F(CliTest, ReplayDrawsCurve) {
  const fs::path run = dir_ / "run";
  ASSERT_EQ(cli(cmd("train", run)).code, 0);
  const CliRun r = cli(cmd("replay", run));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("iterations 10..30 (3 records)"), std::string::npos) << r.out;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '*'), 3);
}

TEST(AsciiCurve, PlacesPointsByRoundedRow) {
  const std::vector<MetricsRecord> m = {{1, "instance_level", 0, 0.0, 1}, {2, "instance_level", 0, 50.0, 1},
                                        {3, "instance_level", 0, 100.0, 1}};
  const std::string plot = ascii_curve(m, 3, 3);
  EXPECT_EQ(plot,
            "100.0 |  *\n"
            " 50.0 | * \n"
            "  0.0 |*  \n"
            "      +---\n"
            "       iterations 1..3 (3 records)\n");
  // wider than the data: one column per record
  EXPECT_EQ(ascii_curve(m, 60, 3), plot);
  EXPECT_THROW(ascii_curve(std::vector<MetricsRecord>{}), DomainError);
}

TEST_F(CliTest, RepeatedTrainingIsByteIdentical) {
  ASSERT_EQ(cli(cmd("train", dir_ / "a")).code, 0);
  ASSERT_EQ(cli(cmd("train", dir_ / "b")).code, 0);
  for (const char* f : {"metrics.jsonl", "checkpoint.json"}) {
    EXPECT_EQ(read_file(dir_ / "a" / f), read_file(dir_ / "b" / f)) << f;
  }
  ASSERT_EQ(cli(cmd("train", dir_ / "a")).code, 0);
  EXPECT_EQ(read_file(dir_ / "a" / "checkpoint.json"), read_file(dir_ / "b" / "checkpoint.json"));
}

TEST_F(CliTest, ConfigErrorsExitTwoWithJsonLine) {
  CliRun r = cli(cmd("train", dir_ / "x", {"--set", "train.tau=-1"}));
  EXPECT_EQ(r.code, 2);
  Json j = single_json_line(r.err);
  EXPECT_EQ(j["error"], "config");
  EXPECT_NE(j["message"].get<std::string>().find("train.tau"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir_ / "x" / "checkpoint.json"));

  r = cli({"train", "--no-such-flag"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(single_json_line(r.err)["error"], "usage");

  r = cli({});
  EXPECT_EQ(r.code, 2);

  write_file_atomic(dir_ / "bad.json", "{not json");
  r = cli({"train", "--manifest", (dir_ / "bad.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(single_json_line(r.err)["error"], "config");

  r = cli(cmd("eval", dir_ / "x", {"--rows", "diagonal"}));
  EXPECT_NE(r.code, 0);
}

TEST_F(CliTest, MissingFilesExitFour) {
  CliRun r = cli(cmd("eval", dir_ / "nothing"));
  EXPECT_EQ(r.code, 4);
  EXPECT_EQ(single_json_line(r.err)["error"], "io");

  r = cli({"train", "--manifest", (dir_ / "absent.json").string()});
  EXPECT_EQ(r.code, 4);

  r = cli(cmd("replay", dir_ / "nothing"));
  EXPECT_EQ(r.code, 4);
}

TEST_F(CliTest, CorruptCheckpointIsRuntimeError) {
  const fs::path run = dir_ / "run";
  ASSERT_EQ(cli(cmd("train", run)).code, 0);
  const std::string text = read_file(run / "checkpoint.json");
  write_file_atomic(run / "checkpoint.json", text.substr(0, text.size() / 2));
  const CliRun r = cli(cmd("eval", run));
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(single_json_line(r.err)["error"], "corrupt");
}

TEST_F(CliTest, HelpExitsZero) {
  const CliRun r = cli({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("train"), std::string::npos);
}

TEST_F(CliTest, ManifestFileAndFlagsCompose) {
  write_file_atomic(dir_ / "m.json", R"({"seed": 3, "train": {"arch": "agnostic", "vocab_size": 12}})");
  auto args = cmd("train", dir_ / "run", {"--manifest", (dir_ / "m.json").string(), "--vocab", "7"});
  ASSERT_EQ(cli(args).code, 0);
  const Checkpoint ck = load_checkpoint(dir_ / "run" / "checkpoint.json");
  EXPECT_EQ(ck.train.arch, SenderArch::agnostic);
  EXPECT_EQ(ck.train.vocab_size, 7u);
  EXPECT_EQ(ck.train.seed, 5u);  // --seed wins over the manifest's top-level seed
  EXPECT_EQ(ck.world.seed, 3u);
}

TEST_F(CliTest, InstalledBinaryRuns) {
  std::string line = std::string(REFGAME_CLI_PATH) + " train";
  for (const auto& a : small(dir_ / "ext")) line += " '" + a + "'";
  line += " > /dev/null 2>&1";
  const int status = std::system(line.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
  EXPECT_TRUE(fs::exists(dir_ / "ext" / "checkpoint.json"));

  ASSERT_EQ(cli(cmd("train", dir_ / "in")).code, 0);
  EXPECT_EQ(read_file(dir_ / "ext" / "checkpoint.json"), read_file(dir_ / "in" / "checkpoint.json"));

  const int bad = std::system((std::string(REFGAME_CLI_PATH) + " train --set train.tau=-1 2> /dev/null").c_str());
  ASSERT_TRUE(WIFEXITED(bad));
  EXPECT_EQ(WEXITSTATUS(bad), 2);
}
