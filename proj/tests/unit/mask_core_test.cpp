#include <gtest/gtest.h>

#include <numbers>

#include "test_support.hpp"
#include "toothloop/mask_core.hpp"

namespace toothloop {
namespace {

using testing::brute_force_raster;
using testing::dense_raw_moments;

BinaryMask block(std::uint32_t w, std::uint32_t h, std::uint32_t x0,
                 std::uint32_t y0, std::uint32_t x1, std::uint32_t y1) {
  std::vector<std::uint8_t> px(std::size_t{w} * h, 0);
  for (std::uint32_t y = y0; y < y1; ++y)
    for (std::uint32_t x = x0; x < x1; ++x) px[std::size_t{y} * w + x] = 1;
  return BinaryMask::from_dense(w, h, px);
}

TEST(Polygon, RejectsInvalidVertexLists) {
  EXPECT_THROW(Polygon({{0, 0}, {1, 1}}), Error);
  EXPECT_THROW(Polygon({{0, 0}, {1, 1}, {1, 1}}), Error);
  EXPECT_THROW(Polygon({{0, 0}, {1, 0}, {0, 1}, {0, 0}}), Error);
  EXPECT_THROW(Polygon({{-1, 0}, {1, 0}, {0, 1}}), Error);
  EXPECT_THROW(Polygon({{NAN, 0}, {1, 0}, {0, 1}}), Error);
  EXPECT_NO_THROW(Polygon({{0, 0}, {1, 0}, {0, 1}}));
}

TEST(BinaryMask, RunInvariants) {
  EXPECT_THROW(BinaryMask::from_runs(2, 2, {1, 2}), Error);      // sum 3
  EXPECT_THROW(BinaryMask::from_runs(2, 2, {1, 0, 3}), Error);   // interior zero
  EXPECT_NO_THROW(BinaryMask::from_runs(2, 2, {0, 4}));          // leading zero ok
  EXPECT_THROW(BinaryMask(0, 3), Error);
  const BinaryMask empty(3, 2);
  EXPECT_EQ(empty.runs(), std::vector<std::uint32_t>{6});
  EXPECT_TRUE(empty.empty());
}

TEST(BinaryMask, DenseRoundTripAndAt) {
  std::mt19937_64 rng(7);
  const auto px = testing::random_dense(rng, 13, 9, 0.4);
  const auto m = BinaryMask::from_dense(13, 9, px);
  EXPECT_EQ(m.to_dense(), px);
  for (std::uint32_t y = 0; y < 9; ++y)
    for (std::uint32_t x = 0; x < 13; ++x) EXPECT_EQ(m.at(x, y), px[y * 13 + x] != 0);
}

TEST(Rle, RoundTripsRandomMasks) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto w = static_cast<std::uint32_t>(1 + rng() % 40);
    const auto h = static_cast<std::uint32_t>(1 + rng() % 40);
    const double density = testing::uniform01(rng);
    const auto m = BinaryMask::from_dense(w, h, testing::random_dense(rng, w, h, density));
    ASSERT_EQ(decode_rle(encode_rle(m)), m);
  }
}

TEST(Rle, ByteLayoutIsVarintSequence) {
  // 200x1 mask, pixels 150..199 on: runs {150, 50}.
  const auto m = block(200, 1, 150, 0, 200, 1);
  const std::vector<std::uint8_t> expected{0xC8, 0x01, 0x01, 0x96, 0x01, 0x32};
  EXPECT_EQ(encode_rle(m), expected);
}

TEST(Rle, RejectsCorruptInput) {
  EXPECT_THROW(decode_rle(std::vector<std::uint8_t>{0x02, 0x02, 0x03}), Error);
  EXPECT_THROW(decode_rle(std::vector<std::uint8_t>{0x02, 0x80}), Error);
  EXPECT_THROW(decode_rle(std::vector<std::uint8_t>{0x02, 0x02, 0x01, 0x00, 0x03}), Error);
}

TEST(Rasterize, SquareCoversFourPixels) {
  const auto m = rasterize(Polygon({{0, 0}, {2, 0}, {2, 2}, {0, 2}}), 4, 4);
  const auto oracle = brute_force_raster({{0, 0}, {2, 0}, {2, 2}, {0, 2}}, 4, 4);
  EXPECT_EQ(m.to_dense(), oracle);
  EXPECT_EQ(m.on_count(), 4u);
  for (auto [x, y] : {std::pair{0u, 0u}, {1u, 0u}, {0u, 1u}, {1u, 1u}}) EXPECT_TRUE(m.at(x, y));
}

TEST(Rasterize, OutsideAndFullImage) {
  EXPECT_TRUE(rasterize(Polygon({{50, 50}, {60, 50}, {55, 58}}), 20, 20).empty());
  const auto full = rasterize(Polygon({{0, 0}, {17, 0}, {17, 11}, {0, 11}}), 17, 11);
  EXPECT_EQ(full.on_count(), 17u * 11u);
}

TEST(Rasterize, ZeroAreaPolygonIsAllOff) {
  EXPECT_TRUE(rasterize(Polygon({{1, 1}, {5, 1}, {9, 1}}), 12, 12).empty());
}

TEST(Rasterize, MatchesPointInPolygonOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto v = testing::random_star_polygon(rng, 30, 25, 2, 35, 3 + static_cast<int>(rng() % 12));
    for (auto& p : v) {
      p.x = std::max(p.x, 0.0);
      p.y = std::max(p.y, 0.0);
    }
    if (!Polygon::validate(v).empty()) continue;
    const auto m = rasterize(Polygon(v), 61, 47);
    ASSERT_EQ(m.to_dense(), brute_force_raster(v, 61, 47)) << "trial " << trial;
  }
}

TEST(Moments, SinglePixel) {
  const auto m = compute_moments(block(6, 5, 3, 2, 4, 3));
  EXPECT_DOUBLE_EQ(m.raw[0][0], 1.0);
  EXPECT_DOUBLE_EQ(m.raw[1][0], 3.5);
  EXPECT_DOUBLE_EQ(m.raw[0][1], 2.5);
  EXPECT_DOUBLE_EQ(m.raw[1][1], 8.75);
  const auto c = centroid(block(6, 5, 3, 2, 4, 3));
  EXPECT_DOUBLE_EQ(c.x, 3.5);
  EXPECT_DOUBLE_EQ(c.y, 2.5);
}

TEST(Moments, TwoByTwoBlock) {
  const auto mask = block(5, 5, 0, 0, 2, 2);
  const auto m = compute_moments(mask);
  const auto oracle = dense_raw_moments(mask.to_dense(), 5, 5);
  EXPECT_EQ(m.raw[0][0], 4.0);
  EXPECT_EQ(m.raw[1][0], 4.0);
  EXPECT_EQ(m.raw[0][1], 4.0);
  EXPECT_EQ(m.raw, oracle);
  const auto c = centroid(mask);
  EXPECT_EQ(c.x, 1.0);
  EXPECT_EQ(c.y, 1.0);
}

TEST(Moments, CentralMomentInvariants) {
  std::mt19937_64 rng(5);
  const auto mask = BinaryMask::from_dense(30, 30, testing::random_dense(rng, 30, 30, 0.3));
  const auto m = compute_moments(mask);
  ASSERT_TRUE(m.defined);
  EXPECT_EQ(m.central[0][0], m.raw[0][0]);
  EXPECT_EQ(m.central[1][0], 0.0);
  EXPECT_EQ(m.central[0][1], 0.0);
  // mu20 against its textbook definition from raw moments.
  const double cx = m.raw[1][0] / m.raw[0][0];
  EXPECT_NEAR(m.central[2][0], m.raw[2][0] - cx * m.raw[1][0], 1e-9 * m.raw[2][0]);
}

TEST(Moments, EmptyMaskIsUndefined) {
  const auto m = compute_moments(BinaryMask(4, 4));
  EXPECT_FALSE(m.defined);
  for (const auto& row : m.raw)
    for (double v : row) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(centroid(BinaryMask(4, 4)), Error);
}

TEST(Moments, DiskHuMatchesClosedForm) {
  const auto mask = rasterize(Polygon(testing::disk_polygon(64, 64, 40)), 128, 128);
  const auto m = compute_moments(mask);
  EXPECT_NEAR(m.hu[0], 1.0 / (2.0 * std::numbers::pi), 0.01 / (2.0 * std::numbers::pi));
  for (int i = 1; i < 7; ++i) EXPECT_LT(std::abs(m.hu[i]), 1e-4) << "phi" << i + 1;
}

TEST(Moments, IntegerTranslationLeavesHuUnchanged) {
  std::mt19937_64 rng(9);
  const auto v = testing::random_star_polygon(rng, 40, 40, 10, 30, 9);
  const auto a = compute_moments(rasterize(Polygon(v), 200, 160));
  const auto b = compute_moments(rasterize(Polygon(testing::transform(v, 0, 0, 0, 1, 97, 61)), 200, 160));
  for (int i = 0; i < 7; ++i) EXPECT_LE(testing::relative_difference(a.hu[i], b.hu[i]), 1e-9);
}

TEST(Centroid, SymmetricMaskSitsAtImageCenter) {
  const auto c = centroid(block(100, 60, 20, 10, 80, 50));
  EXPECT_NEAR(c.x, 50.0, 1e-9);
  EXPECT_NEAR(c.y, 30.0, 1e-9);
}

TEST(Orientation, AxisAlignedRectangles) {
  const auto tall = block(64, 64, 20, 10, 30, 40);   // 10 wide, 30 high
  const auto wide = block(64, 64, 10, 20, 40, 30);   // 30 wide, 10 high
  EXPECT_NEAR(orientation_from_vertical(tall).degrees, 0.0, 1e-12);
  EXPECT_EQ(orientation_from_vertical(wide).degrees, 90.0);
  EXPECT_FALSE(orientation_from_vertical(tall).degenerate);
}

TEST(Orientation, RotatedRectangleRecoversAngle) {
  for (double angle : {30.0, -30.0, 60.0, -75.0}) {
    const auto v = testing::tilted_rectangle(64, 64, 10, 30, angle);
    const auto o = orientation_from_vertical(rasterize(Polygon(v), 128, 128));
    EXPECT_NEAR(o.degrees, angle, 1.0) << angle;
  }
}

TEST(Orientation, DiskIsDegenerate) {
  const auto o = orientation_from_vertical(
      rasterize(Polygon(testing::disk_polygon(32, 32, 20)), 64, 64));
  EXPECT_TRUE(o.degenerate);
  EXPECT_EQ(o.degrees, 0.0);
}

TEST(Iou, BasicCases) {
  const auto a = block(8, 8, 0, 0, 2, 2);
  const auto b = block(8, 8, 1, 0, 3, 2);
  const auto far = block(8, 8, 5, 5, 7, 7);
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, far), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, b), 2.0 / 6.0);
  EXPECT_EQ(iou(BinaryMask(8, 8), BinaryMask(8, 8)), 0.0);
  EXPECT_THROW(iou(a, BinaryMask(8, 7)), Error);
}

TEST(Iou, MatchesPixelCountOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const auto w = static_cast<std::uint32_t>(1 + rng() % 30);
    const auto h = static_cast<std::uint32_t>(1 + rng() % 30);
    const auto pa = testing::random_dense(rng, w, h, testing::uniform01(rng));
    const auto pb = testing::random_dense(rng, w, h, testing::uniform01(rng));
    std::uint64_t inter = 0, uni = 0, ca = 0, cb = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
      inter += pa[i] && pb[i];
      uni += pa[i] || pb[i];
      ca += pa[i];
      cb += pb[i];
    }
    const auto a = BinaryMask::from_dense(w, h, pa);
    const auto b = BinaryMask::from_dense(w, h, pb);
    ASSERT_EQ(intersection_count(a, b), inter);
    ASSERT_LE(inter, std::min(ca, cb));
    const double expected = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    ASSERT_EQ(iou(a, b), expected);
    ASSERT_EQ(iou(a, b), iou(b, a));
  }
}

}  // namespace
}  // namespace toothloop
