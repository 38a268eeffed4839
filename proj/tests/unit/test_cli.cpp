// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "cmc/cmc.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  std::string cmd = std::string(CMC_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t got;
  while ((got = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, got);
  int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string value_of(const std::string& report, const std::string& key) {
  std::istringstream in(report);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
  return {};
}

std::string first_line(const std::string& path) {
  std::istringstream in(cmc::io::read_file(path));
  std::string line;
  std::getline(in, line);
  return line;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::path(::testing::TempDir()) /
           ("cmc_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, GenGaussianPrintsAnalyticMi) {
  auto r = run("gen --gaussian --rho 0.9 --dim 1 --n 10000 --seed 7 --out " + path("g.cmcv"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(value_of(r.out, "analytic_mi_nats"), "0.8304");
  EXPECT_EQ(value_of(r.out, "n"), "10000");
  EXPECT_EQ(cmc::load_dataset(path("g.cmcv")).size(), 10000u);
}

TEST_F(Cli, GenSharedWritesFourViews) {
  auto r = run("gen --shared --views 4 --noise 2.0 --n 200 --seed 1 --out " + path("s.cmcv"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(value_of(r.out, "views"), "4");
  auto ds = cmc::load_dataset(path("s.cmcv"));
  EXPECT_EQ(ds.view_count(), 4u);
  EXPECT_TRUE(ds.has_labels());
}

TEST_F(Cli, SameFlagsGiveIdenticalFiles) {
  for (const std::string flags : {"--gaussian --rho 0.5 --dim 2 --n 500 --seed 3", "--shared --views 3 --n 100 --seed 2",
                                  "--patches --n 10 --seed 4", "--color lab --n 5 --seed 1"}) {
    ASSERT_EQ(run("gen " + flags + " --out " + path("a.bin")).code, 0) << flags;
    ASSERT_EQ(run("gen " + flags + " --out " + path("b.bin")).code, 0) << flags;
    EXPECT_EQ(cmc::io::read_file(path("a.bin")), cmc::io::read_file(path("b.bin"))) << flags;
  }
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("gen --gaussian --rho 1.5 --out " + path("bad.cmcv")).code, 2);
  EXPECT_EQ(run("gen --no-such-flag").code, 2);
  cmc::io::write_file(path("junk.cmcv"), "junk");
  auto r = run("train --data " + path("junk.cmcv") + " --out " + path("o"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("magic"), std::string::npos) << r.out;

  ASSERT_EQ(run("gen --gaussian --n 200 --seed 1 --out " + path("g.cmcv")).code, 0);
  r = run("train --data " + path("g.cmcv") + " --out " + path("o") + " --epochs 1 --set train.negatives=200");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("negatives"), std::string::npos) << r.out;
  r = run("train --data " + path("g.cmcv") + " --out " + path("o") + " --epochs 1 --mode core:z");
  EXPECT_EQ(r.code, 2);
  // Divergence is a runtime failure, not a configuration mistake.
  r = run("train --data " + path("g.cmcv") + " --out " + path("o") +
          " --epochs 1 --set train.negatives=8 --set train.tau=1e-320");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("epoch 0 batch 0"), std::string::npos) << r.out;
}

TEST_F(Cli, TrainLogsOneColumnPerPair) {
  ASSERT_EQ(run("gen --shared --views 4 --noise 2.0 --n 200 --seed 1 --out " + path("s.cmcv")).code, 0);
  const std::string common = " --data " + path("s.cmcv") + " --epochs 1 --set train.negatives=32 --set model.hidden=16";
  auto core = run("train --mode core:v1 --out " + path("core") + common);
  ASSERT_EQ(core.code, 0) << core.out;
  EXPECT_EQ(value_of(core.out, "pairs"), "3");
  EXPECT_EQ(first_line(path("core/pair_loss.csv")), "epoch,v1-v2,v1-v3,v1-v4");
  auto full = run("train --mode full --out " + path("full") + common);
  ASSERT_EQ(full.code, 0) << full.out;
  EXPECT_EQ(value_of(full.out, "pairs"), "6");
  EXPECT_EQ(first_line(path("full/pair_loss.csv")), "epoch,v1-v2,v1-v3,v1-v4,v2-v3,v2-v4,v3-v4");
  EXPECT_EQ(first_line(path("full/metrics.csv")), "epoch,pair,loss,mi_lb,lr");
  for (const char* f : {"model.cmck", "bank.cmcb", "config.ini", "summary.txt"})
    EXPECT_TRUE(fs::exists(path(std::string("full/") + f))) << f;
  // The written config reproduces the run.
  auto cfg = cmc::load_config(path("full/config.ini"));
  EXPECT_EQ(cfg.graph_mode, "full");
  EXPECT_EQ(cfg.train.negatives, 32u);
}

TEST_F(Cli, TrainIsByteReproducible) {
  ASSERT_EQ(run("gen --gaussian --n 300 --seed 2 --out " + path("g.cmcv")).code, 0);
  const std::string args = " --data " + path("g.cmcv") + " --epochs 2 --seed 9 --set train.negatives=16";
  ASSERT_EQ(run("train --out " + path("a") + args).code, 0);
  ASSERT_EQ(run("train --out " + path("b") + args).code, 0);
  for (const char* f : {"metrics.csv", "pair_loss.csv", "model.cmck", "bank.cmcb", "summary.txt"})
    EXPECT_EQ(cmc::io::read_file(path(std::string("a/") + f)), cmc::io::read_file(path(std::string("b/") + f))) << f;
}

TEST_F(Cli, ProbeOnNoiselessRun) {
  // Classes are separable but the margin is thin; with a 500-sample probe
  // split even the raw view misses about 2% of held-out points.
  ASSERT_EQ(run("gen --shared --views 2 --noise 0 --n 4000 --seed 1 --out " + path("s.cmcv")).code, 0);
  ASSERT_EQ(run("train --data " + path("s.cmcv") + " --out " + path("t") + " --epochs 5 --set train.negatives=64").code, 0);
  auto r = run("probe --data " + path("s.cmcv") + " --checkpoint " + path("t/model.cmck") + " --view v1 --out " + path("p"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(value_of(r.out, "tag"), "embed:v1");
  EXPECT_GE(std::stod(value_of(r.out, "test_accuracy")), 0.99) << r.out;
}

TEST_F(Cli, DiagPrintsPearson) {
  ASSERT_EQ(run("gen --gaussian --rho 0.9 --n 2048 --seed 1 --out " + path("g.cmcv")).code, 0);
  ASSERT_EQ(run("train --data " + path("g.cmcv") + " --out " + path("t") + " --epochs 2 --set train.negatives=64").code, 0);
  auto r = run("diag --checkpoint " + path("t/model.cmck") + " --rho 0.9 --n-eval 500 --out " + path("d"));
  ASSERT_EQ(r.code, 0) << r.out;
  double pr = std::stod(value_of(r.out, "pearson_r"));
  EXPECT_GE(pr, -1.0);
  EXPECT_LE(pr, 1.0);
  EXPECT_EQ(value_of(r.out, "n_pairs"), "1000");
  EXPECT_TRUE(fs::exists(path("d/diag.txt")));
}

TEST_F(Cli, SweepWritesOneRowPerPoint) {
  auto r = run("sweep --kind negatives --out " + path("sw") +
               " --set sweep.grid=16,32 --set sweep.seeds=1,2 --set sweep.train_samples=100"
               " --set sweep.probe_samples=200 --set train.epochs=1 --set model.hidden=16");
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream in(cmc::io::read_file(path("sw/sweep.csv")));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "kind,seed,point,mi_nats,mi_lb,train_accuracy,test_accuracy");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(line.rfind("negatives,", 0), 0u) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 4u);
  EXPECT_EQ(run("sweep --kind bogus --out " + path("sw2")).code, 2);
}
