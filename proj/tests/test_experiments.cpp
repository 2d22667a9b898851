// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "nss/experiments.hpp"

using namespace nss;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("nss_test_experiments_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

struct Fixture {
  Dataset train;
  Dataset test;
};

Fixture small_data() {
  auto s = synth_system(11, 2, 1, 1, 700, 0.01);
  return {s.data.slice(0, 500), s.data.slice(500, 200)};
}

CampaignOptions quick_options(const fs::path& dir) {
  CampaignOptions o;
  o.base.max_iters = 5;
  o.base.val_every = 5;
  o.base.seq_est_len = 4;
  o.base.seq_fit_len = 8;
  o.base.batch_size = 4;
  o.base.est_hidden_size = 4;
  o.out_dir = dir;
  return o;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);) ++n;
  return n;
}

}  // namespace

TEST(Grid, ProductCountAndOrder) {
  FactorGrid g{{{"A", {"1", "2"}}, {"B", {"x", "y", "z"}}}};
  EXPECT_EQ(g.size(), 6u);
  const auto p = cartesian_product(g);
  ASSERT_EQ(p.size(), 6u);
  EXPECT_EQ(p[0], (Assignment{{"A", "1"}, {"B", "x"}}));
  EXPECT_EQ(p[1], (Assignment{{"A", "1"}, {"B", "y"}}));
  EXPECT_EQ(p[5], (Assignment{{"A", "2"}, {"B", "z"}}));
  std::set<Assignment> unique(p.begin(), p.end());
  EXPECT_EQ(unique.size(), 6u);
}

TEST(Grid, BenchmarkSizes) {
  EXPECT_EQ(wiener_hammerstein_grid().size(), 768u);
  EXPECT_EQ(cartesian_product(wiener_hammerstein_grid()).size(), 768u);
  EXPECT_EQ(pick_and_place_grid().size(), 432u);
  EXPECT_EQ(enumerate_grid(pick_and_place_grid()).size(), 432u);
}

TEST(Grid, InvalidGridsAreRejected) {
  EXPECT_THROW((FactorGrid{{{"A", {}}}}.validate()), ConfigError);
  EXPECT_THROW((FactorGrid{{{"A", {"1"}}, {"A", {"2"}}}}.validate()), ConfigError);
  EXPECT_THROW(enumerate_grid(FactorGrid{{{"learning_rate", {"1"}}}}), ConfigError);
  EXPECT_THROW(enumerate_grid(FactorGrid{{{"batch_size", {"many"}}}}), ConfigError);
}

TEST(Levels, ApplyAndReadBack) {
  TrainConfig c;
  apply_level(c, "est_type", "LSTM");
  apply_level(c, "max_time", "1800.0");
  apply_level(c, "seed", "17");
  EXPECT_EQ(c.est_type, EstimatorKind::LSTM);
  EXPECT_EQ(c.max_time, 1800.0);
  EXPECT_EQ(level_of(c, "max_time"), "1800");
  EXPECT_EQ(level_of(c, "seed"), "17");
  EXPECT_EQ(canonical_level("max_time", "300.0"), "300");
  EXPECT_THROW(apply_level(c, "colour", "red"), ConfigError);
}

TEST(Grid, ExecutionOrderPutsLongRunsFirstStably) {
  FactorGrid g{{{"max_time", {"300", "1800"}}, {"batch_size", {"32", "128"}}}};
  const auto order = execution_order(enumerate_grid(g));
  ASSERT_EQ(order.size(), 4u);
  EXPECT_EQ(order[0].max_time, 1800.0);
  EXPECT_EQ(order[0].batch_size, 32);
  EXPECT_EQ(order[1].batch_size, 128);
  EXPECT_EQ(order[2].max_time, 300.0);
  EXPECT_EQ(order[2].batch_size, 32);
}

TEST(Results, RowRoundTrip) {
  auto dir = temp_dir("rows");
  RunRecord r;
  r.config.est_type = EstimatorKind::RAND;
  r.config.seed = 5;
  r.fit_percent = 87.123456789012345;
  r.val_loss = 1.0 / 3.0;
  r.iters = 42;
  r.wall_s = 1.5;
  r.status = RunStatus::diverged;
  r.checkpoint = "c.json";
  {
    std::ofstream out(dir / "r.csv");
    write_results_header(out);
    write_result_row(out, r);
  }
  const auto back = load_results(dir / "r.csv");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].key(), r.key());
  EXPECT_EQ(back[0].fit_percent, r.fit_percent);
  EXPECT_EQ(back[0].val_loss, r.val_loss);
  EXPECT_EQ(back[0].status, RunStatus::diverged);
  EXPECT_EQ(back[0].checkpoint, "c.json");
  EXPECT_THROW(load_results(dir / "absent.csv"), IoError);
}

TEST(Campaign, SingleConfigurationSmokeRun) {
  auto dir = temp_dir("smoke");
  const auto data = small_data();
  FactorGrid g{{{"est_type", {"FF"}}}};
  const auto r = run_campaign(g, data.train, data.test, quick_options(dir));
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.executed, 1);
  EXPECT_EQ(r.records[0].status, RunStatus::ok);
  EXPECT_EQ(r.records[0].iters, 5);
  EXPECT_TRUE(std::isfinite(r.records[0].fit_percent));
  EXPECT_TRUE(fs::exists(dir / r.records[0].checkpoint) || fs::exists(r.records[0].checkpoint));
  EXPECT_EQ(count_lines(dir / "results.csv"), 2u);
  EXPECT_EQ(load_results(dir / "results.csv").size(), 1u);
}

TEST(Campaign, InfeasibleRunsAreRecordedNotFatal) {
  auto dir = temp_dir("infeasible");
  const auto data = small_data();
  FactorGrid g{{{"seq_fit_len", {"8", "5000"}}}};
  const auto r = run_campaign(g, data.train, data.test, quick_options(dir));
  ASSERT_EQ(r.records.size(), 2u);
  std::multiset<RunStatus> st;
  for (const auto& rec : r.records) st.insert(rec.status);
  EXPECT_EQ(st.count(RunStatus::ok), 1u);
  EXPECT_EQ(st.count(RunStatus::infeasible), 1u);
}

TEST(Campaign, ResumeSkipsCompletedRunsAndRepairsPartialRows) {
  auto dir = temp_dir("resume");
  const auto data = small_data();
  FactorGrid g{{{"est_type", {"FF", "ZERO"}}, {"seed", {"0", "1"}}}};
  const auto first = run_campaign(g, data.train, data.test, quick_options(dir));
  EXPECT_EQ(first.executed, 4);

  // Keep the header, two complete rows and half of the third.
  std::ifstream in(dir / "results.csv");
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  in.close();
  ASSERT_EQ(lines.size(), 5u);
  {
    std::ofstream out(dir / "results.csv", std::ios::trunc);
    out << lines[0] << '\n' << lines[1] << '\n' << lines[2] << '\n' << lines[3].substr(0, lines[3].size() / 2);
  }
  const auto second = run_campaign(g, data.train, data.test, quick_options(dir));
  EXPECT_EQ(second.executed, 2);
  const auto rows = load_results(dir / "results.csv");
  ASSERT_EQ(rows.size(), 4u);
  std::set<std::string> keys;
  for (const auto& r : rows) keys.insert(r.key());
  EXPECT_EQ(keys.size(), 4u);

  const auto third = run_campaign(g, data.train, data.test, quick_options(dir));
  EXPECT_EQ(third.executed, 0);
  EXPECT_EQ(count_lines(dir / "results.csv"), 5u);
}

TEST(Campaign, RerunAndParallelismGiveIdenticalFits) {
  const auto data = small_data();
  FactorGrid g{{{"est_type", {"LSTM", "RAND"}}, {"batch_size", {"4", "8"}}}};
  auto fits = [&](const std::string& name, Index parallelism) {
    auto o = quick_options(temp_dir(name));
    o.parallelism = parallelism;
    std::map<std::string, double> out;
    for (const auto& r : run_campaign(g, data.train, data.test, o).records) out[r.key()] = r.fit_percent;
    return out;
  };
  const auto a = fits("rerun_a", 1);
  const auto b = fits("rerun_b", 1);
  const auto c = fits("rerun_c", 3);
  EXPECT_EQ(a.size(), 4u);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(Replicate, OneRecordPerSeed) {
  auto dir = temp_dir("replicate");
  const auto data = small_data();
  auto o = quick_options(dir);
  const auto r = replicate(o.base, {3, 1, 2}, data.train, data.test, o);
  ASSERT_EQ(r.records.size(), 3u);
  std::set<std::uint64_t> seeds;
  for (const auto& rec : r.records) seeds.insert(rec.config.seed);
  EXPECT_EQ(seeds, (std::set<std::uint64_t>{1, 2, 3}));
  EXPECT_THROW(replicate(o.base, {1, 2, 1}, data.train, data.test, o), ConfigError);
  EXPECT_THROW(replicate(o.base, {}, data.train, data.test, o), ConfigError);
}

TEST(CampaignFile, LoadsAndResolvesPaths) {
  auto dir = temp_dir("file");
  std::ofstream(dir / "c.json") << R"({
    "factors": {"est_type": ["FF", "ZERO"], "seed": [0, 1, 2]},
    "train_data": "train.csv", "test_data": "/abs/test.csv",
    "out_dir": "runs", "parallelism": 2,
    "base": {"max_iters": 10, "learning_rate": 0.01},
    "init_policy": "zero-full", "skip": 3
  })";
  const auto f = load_campaign_file(dir / "c.json");
  EXPECT_EQ(f.grid.size(), 6u);
  EXPECT_EQ(f.grid.factors[1].levels, (std::vector<std::string>{"0", "1", "2"}));
  EXPECT_EQ(f.train_data, dir / "train.csv");
  EXPECT_EQ(f.test_data, fs::path("/abs/test.csv"));
  EXPECT_EQ(f.options.out_dir, dir / "runs");
  EXPECT_EQ(f.options.parallelism, 2);
  EXPECT_EQ(f.options.base.max_iters, 10);
  EXPECT_EQ(f.options.base.learning_rate, 0.01);
  EXPECT_EQ(f.options.eval.policy, InitPolicy::zero_full);
  EXPECT_EQ(f.options.eval.skip, 3);

  std::ofstream(dir / "bad.json") << R"({"factors": {"est_type": ["FF"]}, "train_data": "a", "test_data": "b", "typo": 1})";
  EXPECT_THROW(load_campaign_file(dir / "bad.json"), ConfigError);
}
