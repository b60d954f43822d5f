#include "fedgeo/mobility.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "fedgeo/error.hpp"

namespace fedgeo {
namespace {

namespace fs = std::filesystem;

GridSpec BeijingGrid() {
  GridSpec g;
  g.origin_lat = 39.9;
  g.origin_lon = 116.3;
  g.cell_size_m = 100.0;
  g.n_rows = 50;
  g.n_cols = 50;
  return g;
}

constexpr const char* kPltHeader =
    "Geolife trajectory\nWGS 84\nAltitude is in Feet\nReserved 3\n0,2,255,My Track,0,0,2,8421376\n0\n";

class PltFileTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("fedgeo_plt_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path Write(const std::string& body) {
    const fs::path p = dir_ / "track.plt";
    std::ofstream(p) << kPltHeader << body;
    return p;
  }

  fs::path dir_;
};

TEST_F(PltFileTest, HeaderOnlyGivesNoTrajectories) {
  EXPECT_TRUE(ingest_plt(Write(""), BeijingGrid()).empty());
}

TEST_F(PltFileTest, TwoCloseRecordsFormOneTrajectory) {
  const auto t = ingest_plt(Write("39.9005,116.3005,0,492,39744.1201851852,2008-10-23,02:53:04\n"
                                  "39.9006,116.3006,0,492,39744.1205324074,2008-10-23,02:53:34\n"),
                            BeijingGrid());
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].size(), 2u);
  EXPECT_EQ(t[0].points[1].timestamp - t[0].points[0].timestamp, 30);
  EXPECT_EQ(t[0].points[0].timestamp, 1224730384);  // 2008-10-23T02:53:04Z
  EXPECT_TRUE(t[0].valid());
}

TEST_F(PltFileTest, LongGapSplitsTrajectory) {
  const auto t = ingest_plt(Write("39.9005,116.3005,0,492,0,2008-10-23,02:00:00\n"
                                  "39.9005,116.3005,0,492,0,2008-10-23,02:01:00\n"
                                  "39.9010,116.3010,0,492,0,2008-10-23,04:01:00\n"
                                  "39.9010,116.3010,0,492,0,2008-10-23,04:02:00\n"
                                  "39.9010,116.3010,0,492,0,2008-10-23,04:03:00\n"),
                            BeijingGrid(), IngestOptions{30 * 60});
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].size(), 2u);
  EXPECT_EQ(t[1].size(), 3u);
}

TEST_F(PltFileTest, OutOfBoundsPointsAreDropped) {
  const auto t = ingest_plt(Write("39.9005,116.3005,0,492,0,2008-10-23,02:00:00\n"
                                  "41.0000,118.0000,0,492,0,2008-10-23,02:00:10\n"
                                  "39.9005,116.3005,0,492,0,2008-10-23,02:00:20\n"),
                            BeijingGrid());
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].size(), 2u);
}

TEST_F(PltFileTest, MalformedRecordReportsLineNumber) {
  try {
    ingest_plt(Write("39.9005,116.3005,0,492,0,2008-10-23,02:00:00\n39.9,not-a-number,0,0,0,2008-10-23,02:00:05\n"),
               BeijingGrid());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 8u);
  }
}

TEST_F(PltFileTest, TruncatedHeaderIsEmptyFile) {
  const fs::path p = dir_ / "short.plt";
  std::ofstream(p) << "Geolife trajectory\nWGS 84\n";
  EXPECT_THROW(ingest_plt(p, BeijingGrid()), EmptyFile);
}

Trajectory Make(std::initializer_list<std::pair<std::int64_t, std::uint32_t>> pts) {
  Trajectory t;
  for (auto [ts, loc] : pts) t.points.push_back({ts, LocationId{loc}});
  return t;
}

TEST(ResampleTest, TenSecondRecordsToMinuteTicks) {
  Trajectory t;
  for (std::int64_t s = 0; s <= 180; s += 10) t.points.push_back({s, LocationId{static_cast<std::uint32_t>(s / 10)}});
  const Trajectory r = resample_fixed_interval(t, 60);
  ASSERT_EQ(r.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(r.points[i].timestamp, static_cast<std::int64_t>(60 * i));
    EXPECT_EQ(r.points[i].loc.index, 6 * i);
  }
}

TEST(ResampleTest, SingleRecordIsUnchanged) {
  const Trajectory t = Make({{100, 7}});
  EXPECT_EQ(resample_fixed_interval(t, 60), t);
}

TEST(ResampleTest, AlreadyOnTicksKeepsLocations) {
  const Trajectory t = Make({{0, 1}, {60, 2}, {120, 3}});
  EXPECT_EQ(resample_fixed_interval(t, 60), t);
}

TEST(ResampleTest, GapsRepeatLatestRecord) {
  const Trajectory r = resample_fixed_interval(Make({{0, 1}, {130, 2}}), 60);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r.points[2].loc.index, 1u);  // tick 120 < 130
}

TEST(WindowizeTest, BoundaryLengths) {
  Trajectory five;
  for (std::uint32_t i = 0; i < 5; ++i) five.points.push_back({i, LocationId{10 + i}});
  const auto s = windowize(five, 4);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].target.index, 14u);
  EXPECT_EQ(s[0].window.size(), 4u);

  Trajectory four = five;
  four.points.pop_back();
  EXPECT_TRUE(windowize(four, 4).empty());
}

TEST(WindowizeTest, CountIsLengthMinusWindow) {
  for (std::size_t len : {1u, 10u, 33u, 40u, 64u}) {
    Trajectory t;
    for (std::uint32_t i = 0; i < len; ++i) t.points.push_back({i, LocationId{i}});
    const auto samples = windowize(t, 32);
    ASSERT_EQ(samples.size(), len > 32 ? len - 32 : 0u) << "len " << len;
    for (std::size_t p = 0; p < samples.size(); ++p) {
      EXPECT_EQ(samples[p].target, t.points[p + 32].loc);
      EXPECT_EQ(samples[p].window.front(), t.points[p].loc);
    }
  }
}

TEST(EntropyTest, HandValues) {
  EXPECT_EQ(location_entropy(LocationCounts{{LocationId{3}, 9}}), 0.0);
  EXPECT_NEAR(location_entropy(LocationCounts{{LocationId{1}, 5}, {LocationId{2}, 5}}), std::log(2.0), 1e-12);
  EXPECT_NEAR(location_entropy(LocationCounts{{LocationId{1}, 3}, {LocationId{2}, 1}}), 0.5623351446188083, 1e-12);
}

TEST(EntropyTest, BoundedByLogSupportAndLabelInvariant) {
  const LocationCounts a{{LocationId{1}, 4}, {LocationId{2}, 1}, {LocationId{3}, 7}};
  const LocationCounts b{{LocationId{90}, 7}, {LocationId{5}, 4}, {LocationId{40}, 1}};
  EXPECT_DOUBLE_EQ(location_entropy(a), location_entropy(b));
  EXPECT_GT(location_entropy(a), 0.0);
  EXPECT_LE(location_entropy(a), std::log(3.0));
}

ClientDataset ClientWith(int id, std::initializer_list<std::uint32_t> locs) {
  ClientDataset c;
  c.client_id = id;
  for (auto l : locs) c.location_counts[LocationId{l}] = 1;
  return c;
}

TEST(HeterogeneityIndexTest, FormulaCases) {
  FederatedDataset iid;
  iid.clients = {ClientWith(0, {1, 2, 3}), ClientWith(1, {1, 2, 3})};
  EXPECT_EQ(heterogeneity_index(iid), 0.0);

  FederatedDataset disjoint;
  disjoint.clients = {ClientWith(0, {1}), ClientWith(1, {2}), ClientWith(2, {3})};
  EXPECT_EQ(heterogeneity_index(disjoint), 1.0);

  FederatedDataset mixed;  // C_max = 11, c = 3
  mixed.clients = {ClientWith(0, {0, 1, 2}), ClientWith(1, {3, 4, 5}), ClientWith(2, {6, 7}),
                   ClientWith(3, {8, 9, 10})};
  EXPECT_NEAR(heterogeneity_index(mixed), 0.8, 1e-12);
}

TEST(HeterogeneityIndexTest, SingleLocationIsDegenerate) {
  FederatedDataset ds;
  ds.clients = {ClientWith(0, {4}), ClientWith(1, {4})};
  EXPECT_THROW(heterogeneity_index(ds), DegenerateDataset);
}

TEST(HeterogeneityIndexTest, GrowingAClientSupportNeverRaisesHi) {
  FederatedDataset ds;
  ds.clients = {ClientWith(0, {0, 1, 6, 7}), ClientWith(1, {2, 3, 4, 8, 9}), ClientWith(2, {5})};
  double prev = heterogeneity_index(ds);
  for (std::uint32_t extra : {6u, 7u, 0u, 8u, 9u, 1u, 2u, 3u, 4u}) {
    ds.clients[2].location_counts[LocationId{extra}] = 1;
    const double hi = heterogeneity_index(ds);
    EXPECT_LE(hi, prev + 1e-15);
    prev = hi;
  }
}

TEST(HeterogeneityIndexTest, NewLocationOnSmallClientRaisesHi) {
  // Growth that enlarges the location universe but not the largest client
  // raises C_max alone.
  FederatedDataset ds;
  ds.clients = {ClientWith(0, {0, 1, 2}), ClientWith(1, {3})};
  EXPECT_DOUBLE_EQ(heterogeneity_index(ds), 1.0 - 2.0 / 3.0);
  ds.clients[1].location_counts[LocationId{4}] = 1;
  EXPECT_DOUBLE_EQ(heterogeneity_index(ds), 1.0 - 2.0 / 4.0);
}

FederatedDataset WithSampleCount(std::size_t n) {
  FederatedDataset ds;
  ds.window = 1;
  ClientDataset c;
  for (std::uint32_t i = 0; i < n; ++i) c.samples.push_back({{LocationId{i}}, LocationId{i + 1}});
  ds.clients.push_back(c);
  return ds;
}

TEST(SplitTest, TenSamples) {
  const auto ds = split_train_test(WithSampleCount(10), 0.1);
  EXPECT_EQ(ds.clients[0].train().size(), 9u);
  EXPECT_EQ(ds.clients[0].test().size(), 1u);
}

TEST(SplitTest, SingleSampleIsTooSmall) {
  EXPECT_THROW(split_train_test(WithSampleCount(1), 0.1), ClientTooSmall);
}

TEST(SplitTest, LastTenPercentInOrder) {
  const auto ds = split_train_test(WithSampleCount(100), 0.1);
  const auto test = ds.clients[0].test();
  ASSERT_EQ(test.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(test[i].window[0].index, 90 + i);  // samples 91..100
  EXPECT_THROW(split_train_test(WithSampleCount(100), 1.0), ConfigError);
}

GridSpec SynthGrid() {
  GridSpec g;
  g.n_rows = 20;
  g.n_cols = 20;
  return g;
}

TEST(SynthTest, AlwaysStayingGivesZeroEntropy) {
  SynthConfig cfg;
  cfg.window = 8;
  cfg.trajectory_length = 20;
  cfg.stay_prob = 1.0;
  const auto ds = synth_generate(SynthGrid(), 5, cfg, 1);
  for (const auto& c : ds.clients) {
    EXPECT_EQ(location_entropy(c), 0.0) << "client " << c.client_id;
  }
}

TEST(SynthTest, DisjointHomesWithoutDowntown) {
  SynthConfig cfg;
  cfg.window = 8;
  cfg.trajectory_length = 40;
  cfg.downtown_size = 0;
  cfg.stay_prob = 0.2;
  const auto ds = synth_generate(SynthGrid(), 2, cfg, 9);
  for (const auto& [loc, n] : ds.clients[0].location_counts) EXPECT_EQ(ds.clients[1].location_counts.count(loc), 0u);
}

TEST(SynthTest, DefaultConfigIsHeterogeneousAndDeterministic) {
  const SynthConfig cfg;
  const auto a = synth_generate(SynthGrid(), 10, cfg, 42);
  const auto b = synth_generate(SynthGrid(), 10, cfg, 42);
  EXPECT_GE(heterogeneity_index(a), 0.5);
  ASSERT_EQ(a.clients.size(), b.clients.size());
  for (std::size_t k = 0; k < a.clients.size(); ++k) {
    EXPECT_EQ(a.clients[k].samples, b.clients[k].samples);
    EXPECT_EQ(a.clients[k].location_counts, b.clients[k].location_counts);
  }
  const auto c = synth_generate(SynthGrid(), 10, cfg, 43);
  EXPECT_NE(a.clients[0].samples, c.clients[0].samples);
}

TEST(SynthTest, ImpossibleLayoutIsConfigError) {
  SynthConfig cfg;
  cfg.home_size_min = cfg.home_size_max = 10;
  EXPECT_THROW(synth_generate(SynthGrid(), 5, cfg, 0), ConfigError);
  cfg.home_size_min = cfg.home_size_max = 4;
  cfg.trajectory_length = cfg.window;
  EXPECT_THROW(synth_generate(SynthGrid(), 5, cfg, 0), ConfigError);
}

TEST(SplitProperty, TrainPrecedesTestWithinEveryClient) {
  SynthConfig cfg;
  cfg.window = 6;
  cfg.trajectory_length = 30;
  cfg.trajectories_min = 1;
  cfg.trajectories_max = 5;
  const auto ds = split_train_test(synth_generate(SynthGrid(), 8, cfg, 5), 0.1);
  for (const auto& c : ds.clients) {
    EXPECT_EQ(c.train().size() + c.test().size(), c.samples.size());
    EXPECT_GE(c.test().size(), 1u);
    EXPECT_EQ(c.test().data(), c.train().data() + c.train().size());
  }
}

TEST(DatasetCacheTest, RoundTrip) {
  SynthConfig cfg;
  cfg.window = 5;
  cfg.trajectory_length = 12;
  const auto ds = synth_generate(SynthGrid(), 3, cfg, 77);
  const fs::path dir = fs::temp_directory_path() / "fedgeo_cache_test";
  fs::remove_all(dir);
  write_dataset_cache(ds, dir);
  const auto back = read_dataset_cache(dir);
  EXPECT_EQ(back.grid, ds.grid);
  EXPECT_EQ(back.window, ds.window);
  ASSERT_EQ(back.clients.size(), ds.clients.size());
  for (std::size_t k = 0; k < ds.clients.size(); ++k) {
    EXPECT_EQ(back.clients[k].client_id, ds.clients[k].client_id);
    EXPECT_EQ(back.clients[k].samples, ds.clients[k].samples);
    EXPECT_EQ(back.clients[k].location_counts, ds.clients[k].location_counts);
  }
  fs::remove_all(dir);
}

}  // namespace
}  // namespace fedgeo
