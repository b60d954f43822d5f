#include "fedgeo/geogrid.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedgeo/error.hpp"
#include "fedgeo/rng.hpp"
#include "oracles.hpp"

namespace fedgeo {
namespace {

GridSpec Grid(std::size_t rows, std::size_t cols, double cell = 100.0) {
  GridSpec g;
  g.origin_lat = 39.9;
  g.origin_lon = 116.3;
  g.cell_size_m = cell;
  g.n_rows = rows;
  g.n_cols = cols;
  return g;
}

LocationId Id(std::uint32_t i) { return LocationId{i}; }

TEST(LocateTest, OriginIsCellZero) {
  const GridSpec g = Grid(3, 4);
  EXPECT_EQ(locate(g, g.origin_lat, g.origin_lon), Id(0));
}

TEST(LocateTest, HundredFiftyMetersEastIsSecondColumn) {
  const GridSpec g = Grid(1, 4);
  const GeoPoint p = unproject(g, {150.0, 0.0});
  EXPECT_EQ(locate(g, p.lat, p.lon), Id(1));
}

TEST(LocateTest, OutsideGridThrows) {
  const GridSpec g = Grid(2, 2);
  const GeoPoint west = unproject(g, {-1.0, 50.0});
  const GeoPoint north = unproject(g, {50.0, 200.0});
  EXPECT_THROW(locate(g, west.lat, west.lon), OutOfBounds);
  EXPECT_THROW(locate(g, north.lat, north.lon), OutOfBounds);
}

TEST(LocateTest, RandomPointsLieWithinHalfDiagonalOfTheirCellCenter) {
  const GridSpec g = Grid(7, 9, 100.0);
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    const PlanarPoint p{rng.uniform(0.0, 900.0), rng.uniform(0.0, 700.0)};
    const GeoPoint geo = unproject(g, p);
    const PlanarPoint c = cell_center(g, locate(g, geo.lat, geo.lon));
    EXPECT_LE(std::hypot(c.east_m - p.east_m, c.north_m - p.north_m), 100.0 * std::sqrt(2.0) / 2.0 + 1e-9);
  }
}

TEST(CellCenterDistanceTest, KnownSpacings) {
  const GridSpec g = Grid(3, 3);
  EXPECT_EQ(cell_center_distance(g, Id(4), Id(4)), 0.0);
  EXPECT_DOUBLE_EQ(cell_center_distance(g, Id(0), Id(1)), 100.0);
  EXPECT_NEAR(cell_center_distance(g, Id(0), Id(4)), 141.42, 0.01);
  EXPECT_DOUBLE_EQ(cell_center_distance(g, Id(2), Id(6)), cell_center_distance(g, Id(6), Id(2)));
}

TEST(SpatialWeightsTest, SingleCellIsQ) {
  const auto m = build_spatial_weights(Grid(1, 1), 150.0, 3.5);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m.nnz(), 1u);
  EXPECT_EQ(m.at(0, 0), 3.5);
  EXPECT_FALSE(m.normalized());
}

TEST(SpatialWeightsTest, TwoByTwoWithinThresholdIsFullyConnected) {
  const double q = 2.0;
  const auto m = build_spatial_weights(Grid(2, 2), 150.0, q);
  const auto oracle = testing::brute_force_spatial_weights(Grid(2, 2), 150.0, q, false);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_EQ(m.at(i, j), i == j ? q : 1.0);
      EXPECT_EQ(m.at(i, j), oracle[i][j]);
    }
  }
}

TEST(SpatialWeightsTest, ThresholdBelowSpacingLeavesOnlyDiagonal) {
  const auto m = build_spatial_weights(Grid(2, 2), 50.0, 1.0);
  EXPECT_EQ(m.nnz(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(m.row(i).size(), 1u);
}

TEST(SpatialWeightsTest, StrictInequalityAtExactSpacing) {
  // d equal to the horizontal spacing excludes those neighbours.
  const auto m = build_spatial_weights(Grid(1, 3), 100.0, 1.0);
  EXPECT_EQ(m.nnz(), 3u);
}

TEST(SpatialWeightsTest, RejectsNonPositiveQ) {
  EXPECT_THROW(build_spatial_weights(Grid(2, 2), 150.0, 0.0), ConfigError);
  EXPECT_THROW(build_spatial_weights(Grid(2, 2), -1.0, 1.0), ConfigError);
}

TEST(RowNormalizeTest, SingleEntryBecomesOne) {
  const auto m = row_normalize(build_spatial_weights(Grid(1, 1), 150.0, 7.0));
  EXPECT_EQ(m.at(0, 0), 1.0);
  EXPECT_TRUE(m.normalized());
}

TEST(RowNormalizeTest, QTwoWithThreeNeighbours) {
  const auto m = row_normalize(build_spatial_weights(Grid(2, 2), 150.0, 2.0));
  EXPECT_DOUBLE_EQ(m.at(0, 0), 0.4);
  EXPECT_DOUBLE_EQ(m.at(0, 1), 0.2);
  EXPECT_DOUBLE_EQ(m.at(0, 2), 0.2);
  EXPECT_DOUBLE_EQ(m.at(0, 3), 0.2);
}

TEST(RowNormalizeTest, IsolatedCellsGiveIdentity) {
  const auto m = row_normalize(build_spatial_weights(Grid(3, 3), 50.0, 4.0));
  EXPECT_EQ(m, SpatialWeightMatrix::identity(9));
}

TEST(RowNormalizeTest, ZeroRowThrows) {
  SpatialWeightMatrix m(2, {0, 1, 1}, {{0, 1.0}}, false);
  EXPECT_THROW(row_normalize(m), DegenerateRow);
}

TEST(ApplyToEmbeddingTest, IdentityLeavesEmbeddingUnchanged) {
  Matrix emb(3, 2, {1.0, -2.0, 0.5, 3.0, -1.5, 4.0});
  EXPECT_EQ(apply_to_embedding(SpatialWeightMatrix::identity(3), emb), emb);
}

TEST(ApplyToEmbeddingTest, TwoAdjacentCellsAverage) {
  const auto s = row_normalize(build_spatial_weights(Grid(1, 2), 150.0, 1.0));
  Matrix emb(2, 2, {1.0, 4.0, 3.0, -2.0});
  const Matrix out = apply_to_embedding(s, emb);
  EXPECT_DOUBLE_EQ(out(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(out(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(out(1, 0), 2.0);
  EXPECT_DOUBLE_EQ(out(1, 1), 1.0);
}

TEST(ApplyToEmbeddingTest, RejectsMismatchAndUnnormalized) {
  const auto raw = build_spatial_weights(Grid(2, 2), 150.0, 1.0);
  EXPECT_THROW(apply_to_embedding(raw, Matrix(4, 2)), DimensionMismatch);
  EXPECT_THROW(apply_to_embedding(row_normalize(raw), Matrix(3, 2)), DimensionMismatch);
}

TEST(ApplyToEmbeddingTest, OutputsStayWithinColumnRange) {
  Rng rng(11);
  const GridSpec g = Grid(5, 6);
  const auto s = row_normalize(build_spatial_weights(g, 220.0, 1.5));
  Matrix emb(30, 4);
  for (double& v : emb.data()) v = rng.uniform(-3.0, 3.0);
  const Matrix out = apply_to_embedding(s, emb);
  for (std::size_t c = 0; c < 4; ++c) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t r = 0; r < 30; ++r) {
      lo = std::min(lo, emb(r, c));
      hi = std::max(hi, emb(r, c));
    }
    for (std::size_t r = 0; r < 30; ++r) {
      EXPECT_GE(out(r, c), lo - 1e-12);
      EXPECT_LE(out(r, c), hi + 1e-12);
    }
  }
}

TEST(SpatialWeightsProperty, SupportIsSymmetricAndMonotoneInThreshold) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const GridSpec g = Grid(1 + rng.below(7), 1 + rng.below(7), rng.uniform(50.0, 200.0));
    const double d1 = rng.uniform(0.0, 400.0);
    const double d2 = d1 + rng.uniform(0.0, 200.0);
    const auto a = build_spatial_weights(g, d1, 1.0);
    const auto b = build_spatial_weights(g, d2, 1.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
      for (std::size_t j = 0; j < a.size(); ++j) {
        EXPECT_EQ(a.at(i, j) != 0.0, a.at(j, i) != 0.0);
        if (a.at(i, j) != 0.0) EXPECT_NE(b.at(i, j), 0.0);
      }
    }
  }
}

TEST(SpatialWeightsProperty, LargeQApproachesIdentity) {
  Rng rng(5);
  const GridSpec g = Grid(4, 4);
  const auto s = row_normalize(build_spatial_weights(g, 150.0, 1e9));
  Matrix emb(16, 3);
  for (double& v : emb.data()) v = rng.uniform(-1.0, 1.0);
  const Matrix out = apply_to_embedding(s, emb);
  for (std::size_t i = 0; i < emb.data().size(); ++i) EXPECT_LT(std::abs(out.data()[i] - emb.data()[i]), 1e-6);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_GT(s.at(i, i), 1.0 - 1e-8);
}

TEST(WriteSpatialWeightsTest, HeaderAndEntryLines) {
  const auto s = row_normalize(build_spatial_weights(Grid(1, 2), 150.0, 2.0));
  const auto path = std::filesystem::temp_directory_path() / "fedgeo_sw_test.txt";
  write_spatial_weights(s, path);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), "2 4\n0 0 0.666666667\n0 1 0.333333333\n1 0 0.333333333\n1 1 0.666666667\n");
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace fedgeo
