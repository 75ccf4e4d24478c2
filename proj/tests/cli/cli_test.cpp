// Runs the speedyfeed binary end to end and checks files and exit codes.

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace {

namespace fs = std::filesystem;

const fs::path kRoot = fs::temp_directory_path() / "speedyfeed_cli";

int RunCli(const std::string& args) {
  const std::string cmd = std::string(SPEEDYFEED_CLI) + " " + args + " > " +
                          (kRoot / "last_output.txt").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string Read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string Output() { return Read(kRoot / "last_output.txt"); }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    ASSERT_EQ(RunCli("gen-data --seed 3 --num-news 200 --num-users 120 --data-dir " + Data()), 0)
        << Output();
  }
  static std::string Data() { return (kRoot / "data").string(); }
};

TEST_F(Cli, GenDataWritesParseableFilesDeterministically) {
  for (const char* f : {"news.tsv", "train_logs.tsv", "test_logs.tsv", "vocab.tsv", "config.json"}) {
    EXPECT_TRUE(fs::exists(kRoot / "data" / f)) << f;
  }
  const std::string again = (kRoot / "data2").string();
  ASSERT_EQ(RunCli("gen-data --seed 3 --num-news 200 --num-users 120 --data-dir " + again), 0);
  EXPECT_NE(Output().find("top  1.0%"), std::string::npos);
  for (const char* f : {"news.tsv", "train_logs.tsv", "test_logs.tsv", "vocab.tsv"}) {
    EXPECT_EQ(Read(kRoot / "data" / f), Read(fs::path(again) / f)) << f;
  }
}

TEST_F(Cli, TrainResumeEval) {
  const std::string run = (kRoot / "run").string();
  ASSERT_EQ(RunCli("train --data-dir " + Data() + " --out-dir " + run + " --max-steps 2 --producers 1"), 0)
      << Output();
  EXPECT_NE(Output().find("stopped at step 2"), std::string::npos) << Output();
  ASSERT_EQ(RunCli("train --resume --data-dir " + Data() + " --out-dir " + run + " --producers 1"), 0)
      << Output();
  EXPECT_NE(Output().find("finished at step"), std::string::npos);
  EXPECT_TRUE(fs::exists(fs::path(run) / "config.json"));
  EXPECT_TRUE(fs::exists(fs::path(run) / "metrics.jsonl"));

  ASSERT_EQ(RunCli("eval --data-dir " + Data() + " --out-dir " + run), 0) << Output();
  const std::string first = Read(fs::path(run) / "eval.json");
  ASSERT_EQ(RunCli("eval --data-dir " + Data() + " --out-dir " + run), 0);
  EXPECT_EQ(Read(fs::path(run) / "eval.json"), first);
  EXPECT_NE(first.find("\"auc\""), std::string::npos);
  EXPECT_TRUE(fs::exists(fs::path(run) / "eval.csv"));
}

TEST_F(Cli, DisableCacheWritesGammaZero) {
  const std::string run = (kRoot / "nocache").string();
  ASSERT_EQ(RunCli("train --disable-cache --max-steps 1 --data-dir " + Data() + " --out-dir " + run), 0)
      << Output();
  EXPECT_NE(Read(fs::path(run) / "config.json").find("\"gamma\": 0"), std::string::npos);
}

TEST_F(Cli, BenchListsAllConfigurations) {
  const std::string dir = (kRoot / "bench").string();
  ASSERT_EQ(RunCli("bench --data-dir " + Data() + " --report-dir " + dir + " --users 2 --clicks 6"), 0)
      << Output();
  const std::string out = Output();
  for (const char* name : {"naive per-click", "+autoregressive", "+centralized batching", "+cache",
                           "+bus segmentation"}) {
    EXPECT_NE(out.find(name), std::string::npos) << name;
  }
  EXPECT_TRUE(fs::exists(fs::path(dir) / "bench.json"));
  EXPECT_TRUE(fs::exists(fs::path(dir) / "bench.csv"));
}

TEST_F(Cli, ExitCodes) {
  const fs::path bad = kRoot / "bad.json";
  std::ofstream(bad) << R"({"encoder": {"hiden_dim": 8}})";
  EXPECT_EQ(RunCli("train --config " + bad.string() + " --data-dir " + Data()), 2);
  EXPECT_EQ(RunCli("train --no-such-flag"), 2);
  EXPECT_EQ(RunCli("train --data-dir " + (kRoot / "missing").string()), 3);

  const fs::path broken = kRoot / "broken";
  fs::create_directories(broken);
  for (const char* f : {"news.tsv", "vocab.tsv", "test_logs.tsv"}) {
    fs::copy_file(kRoot / "data" / f, broken / f, fs::copy_options::overwrite_existing);
  }
  std::ofstream(broken / "train_logs.tsv") << "U1 # U1-0 # notatime # N1 # N2\n";
  EXPECT_EQ(RunCli("train --data-dir " + broken.string() + " --out-dir " + (kRoot / "x").string()), 3);
  EXPECT_NE(Output().find("line 1"), std::string::npos) << Output();

  EXPECT_EQ(RunCli("train --encoder-lr 1e300 --user-lr 1e300 --max-steps 3 --data-dir " + Data() +
                " --out-dir " + (kRoot / "nan").string()),
            4)
      << Output();
}

}  // namespace
