#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "less/report.hpp"
#include "less/rollout.hpp"
#include "oracles.hpp"

#ifndef LESS_SHAPER_BIN
#error "LESS_SHAPER_BIN must point at the built CLI"
#endif

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("less-cli-" + std::to_string(::getpid()) + "-" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args) const {
    const std::string cmd = std::string(LESS_SHAPER_BIN) + " " + args + " >" + (dir_ / "stdout").string() +
                            " 2>" + (dir_ / "stderr").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string read(const std::string& name) const {
    std::ifstream in(dir_ / name, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  void write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name, std::ios::binary) << text;
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write_groups(const std::string& name, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::vector<less::RolloutGroup> groups;
    for (int k = 0; k < 6; ++k) {
      auto g = oracle::random_group(rng, 6, 30, 4);
      g.query_id = "q" + std::to_string(k);
      for (auto& r : g.responses) r.base_advantage.reset();
      groups.push_back(std::move(g));
    }
    std::ostringstream out;
    less::write_rollout_groups(groups, out);
    write(name, out.str());
  }

  fs::path dir_;
};

TEST_F(Cli, ShapeHappyPath) {
  write_groups("in.jsonl", 1);
  ASSERT_EQ(run("shape --input " + path("in.jsonl") + " --output " + path("out.jsonl")), 0) << read("stderr");
  std::istringstream in(read("out.jsonl"));
  const auto groups = less::load_rollout_groups(in);
  ASSERT_EQ(groups.size(), 6u);
  for (const auto& g : groups) {
    double sum = 0.0;
    for (const auto& r : g.responses) {
      ASSERT_TRUE(r.shaped);
      ASSERT_TRUE(r.base_advantage);
      EXPECT_EQ(r.shaped->size(), r.size());
      sum += *r.base_advantage;
    }
    EXPECT_NEAR(sum, 0.0, 1e-9);
  }
}

TEST_F(Cli, ShapeIsIdempotentOnItsOwnOutput) {
  write_groups("in.jsonl", 2);
  ASSERT_EQ(run("shape --input " + path("in.jsonl") + " --output " + path("a.jsonl")), 0);
  ASSERT_EQ(run("shape --input " + path("a.jsonl") + " --output " + path("b.jsonl")), 0);
  EXPECT_EQ(read("a.jsonl"), read("b.jsonl"));
}

TEST_F(Cli, MissingInputIsUsageError) {
  EXPECT_EQ(run("shape --output " + path("out.jsonl")), 1);
  EXPECT_NE(read("stderr").find("--input"), std::string::npos);
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("shape --input x --output y --quantile 1.5"), 1);
}

TEST_F(Cli, MalformedRecordIsDataError) {
  write("bad.jsonl", std::string(less::kRolloutHeader) + "\n{\"query_id\":\"q\",\"tokens\":[1]\n");
  EXPECT_EQ(run("shape --input " + path("bad.jsonl") + " --output " + path("out.jsonl")), 2);
  EXPECT_NE(read("stderr").find("line 2"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("out.jsonl")));
  EXPECT_EQ(run("shape --input " + path("missing.jsonl") + " --output " + path("out.jsonl")), 2);
}

TEST_F(Cli, UndersizedGroupWarns) {
  write("one.jsonl", std::string(less::kRolloutHeader) +
                         "\n{\"query_id\":\"solo\",\"tokens\":[1,2],\"entropies\":[0.1,0.2],\"reward\":1,\"correct\":1}\n");
  ASSERT_EQ(run("shape --input " + path("one.jsonl") + " --output " + path("out.jsonl")), 0);
  EXPECT_NE(read("stderr").find("solo"), std::string::npos);
}

TEST_F(Cli, AnalyzePerGroupAndRegistry) {
  write_groups("in.jsonl", 3);
  ASSERT_EQ(run("analyze --input " + path("in.jsonl") + " --per-group --dump-registry --min-seg-len 3 --out " +
                path("rep.txt")),
            0);
  const auto rep = read("rep.txt");
  EXPECT_NE(rep.find("aggregate"), std::string::npos);
  EXPECT_NE(rep.find("group {\"query_id\":\"q0\""), std::string::npos);
  EXPECT_NE(rep.find("# registry"), std::string::npos);
}

TEST_F(Cli, ReportCorrelate) {
  write("pairs.txt", "# x y\n1 2\n2 4.1\n3 5.9\n4 8.2\n");
  ASSERT_EQ(run("report --correlate " + path("pairs.txt")), 0);
  EXPECT_NE(read("stdout").find("n 4"), std::string::npos);
  write("flat.txt", "1 2\n2 2\n3 2\n");
  EXPECT_EQ(run("report --correlate " + path("flat.txt")), 2);
}

TEST_F(Cli, ReportLossMatchesLibrary) {
  write_groups("in.jsonl", 4);
  ASSERT_EQ(run("shape --input " + path("in.jsonl") + " --output " + path("shaped.jsonl")), 0);
  std::istringstream in(read("shaped.jsonl"));
  const auto groups = less::load_rollout_groups(in);
  std::vector<less::PolicyEvals> evals;
  for (const auto& g : groups)
    for (const auto& r : g.responses)
      evals.push_back({std::vector<double>(r.size(), -1.0), std::vector<double>(r.size(), -1.0), {}});
  std::ostringstream lp;
  less::write_logprobs(groups, evals, lp);
  write("lp.jsonl", lp.str());
  ASSERT_EQ(run("report --loss " + path("shaped.jsonl") + " --logprobs " + path("lp.jsonl")), 0) << read("stderr");
  EXPECT_NE(read("stdout").find("clip fraction 0"), std::string::npos);
  EXPECT_EQ(run("report --loss " + path("shaped.jsonl")), 1);
}

TEST_F(Cli, SimulateAndCompare) {
  ASSERT_EQ(run("simulate --mode grpo --steps 2 --seeds 1,2 --out " + path("runs")), 0) << read("stderr");
  ASSERT_EQ(run("simulate --mode less --steps 2 --seeds 1,2 --out " + path("runs")), 0) << read("stderr");
  EXPECT_TRUE(fs::exists(path("runs/less-seed2.metrics")));
  ASSERT_EQ(run("report --compare " + path("runs")), 0);
  EXPECT_NE(read("stdout").find("paired seeds: 2"), std::string::npos);
  EXPECT_EQ(run("simulate --mode ppo --out " + path("runs")), 1);
}

}  // namespace
