#include <gtest/gtest.h>

#include <algorithm>
#include <numbers>

#include "projection_support.hpp"
#include "toothloop/features.hpp"

namespace toothloop {
namespace {

using testing::gaussian;
using testing::uniform;
using testing::column;
using testing::FisherOracle;
using testing::gaussian_classes;

FeatureVector vec(std::initializer_list<double> values) {
  FeatureVector v;
  std::copy(values.begin(), values.end(), v.values.begin());
  return v;
}

TEST(ExtractFeatures, CenteredMaskHasZeroOffset) {
  const auto mask = rasterize(Polygon({{40, 20}, {60, 20}, {60, 40}, {40, 40}}), 100, 60);
  const auto v = extract_features(mask, 100, 60);
  EXPECT_EQ(v.dx(), 0.0);
  EXPECT_EQ(v.dy(), 0.0);
}

TEST(ExtractFeatures, DiskFeatures) {
  const auto mask = rasterize(Polygon(testing::disk_polygon(64, 64, 40)), 128, 128);
  const auto v = extract_features(mask, 128, 128);
  EXPECT_TRUE(v.angle_degenerate);
  EXPECT_EQ(v.angle(), 0.0);
  EXPECT_NEAR(v.hu(0), -std::log10(1.0 / (2.0 * std::numbers::pi)), 0.005);
  for (std::size_t i = 1; i < 7; ++i) EXPECT_GT(v.hu(i), 4.0) << "hu" << i + 1;
}

TEST(ExtractFeatures, MirrorImagesShareOffsetsAndNegateAngle) {
  const std::uint32_t w = 200, h = 120;
  const auto v = testing::tilted_rectangle(60, 50, 14, 40, 20);
  std::vector<Point> mirrored;
  for (const Point& p : v) mirrored.push_back({w - p.x, p.y});
  const auto a = extract_features(rasterize(Polygon(v), w, h), w, h);
  const auto b = extract_features(rasterize(Polygon(mirrored), w, h), w, h);
  EXPECT_NEAR(a.dx(), b.dx(), 1e-9);
  EXPECT_NEAR(a.dy(), b.dy(), 1e-9);
  EXPECT_NEAR(a.angle(), -b.angle(), 1e-9);
  EXPECT_NEAR(a.angle(), 20.0, 1.0);
}

TEST(ExtractFeatures, TranslationChangesOnlyOffsets) {
  std::mt19937_64 rng(4);
  const auto v = testing::random_star_polygon(rng, 50, 50, 12, 30, 10);
  const auto a = extract_features(rasterize(Polygon(v), 300, 200), 300, 200);
  const auto b = extract_features(
      rasterize(Polygon(testing::transform(v, 0, 0, 0, 1, 131, 77)), 300, 200), 300, 200);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(a.hu(i), b.hu(i), 1e-6);
  EXPECT_EQ(a.angle(), b.angle());
  EXPECT_NE(a.dx(), b.dx());
}

TEST(ExtractFeatures, Errors) {
  EXPECT_THROW(extract_features(BinaryMask(10, 10), 10, 10), Error);
  const auto mask = rasterize(Polygon({{1, 1}, {5, 1}, {5, 5}}), 10, 10);
  EXPECT_THROW(extract_features(mask, 10, 11), Error);
}

TEST(CompressHu, SignedLog) {
  EXPECT_DOUBLE_EQ(compress_hu(1e-3), 3.0);
  EXPECT_DOUBLE_EQ(compress_hu(-1e-3), -3.0);
  EXPECT_DOUBLE_EQ(compress_hu(0.0), 30.0);
}

TEST(ClassStats, Examples) {
  std::vector<LabeledFeature> samples{
      {vec({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}), ToothClass::incisor},
      {vec({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}), ToothClass::incisor},
      {vec({0}), ToothClass::canine},
      {vec({2}), ToothClass::canine},
      {vec({5}), ToothClass::molar3},
  };
  const auto stats = fit_class_stats(samples);
  const auto& inc = stats.of(ToothClass::incisor);
  EXPECT_EQ(inc.count, 2u);
  for (std::size_t d = 0; d < kFeatureDims; ++d) {
    EXPECT_EQ(inc.mean[d], samples[0].features[d]);
    EXPECT_EQ(inc.stddev[d], 0.0);
  }
  EXPECT_EQ(stats.of(ToothClass::canine).mean[0], 1.0);
  EXPECT_EQ(stats.of(ToothClass::canine).stddev[0], 1.0);
  EXPECT_FALSE(stats.of(ToothClass::molar3).usable());
  EXPECT_FALSE(stats.of(ToothClass::molar2).usable());
}

TEST(ClassStats, SeededNormalSampling) {
  std::mt19937_64 rng(2024);
  std::vector<LabeledFeature> samples;
  for (int i = 0; i < 1000; ++i) {
    FeatureVector v;
    for (double& x : v.values) x = gaussian(rng);
    samples.push_back({v, ToothClass::molar1});
  }
  const auto s = fit_class_stats(samples).of(ToothClass::molar1);
  for (std::size_t d = 0; d < kFeatureDims; ++d) {
    EXPECT_NEAR(s.mean[d], 0.0, 0.1);
    EXPECT_NEAR(s.stddev[d], 1.0, 0.1);
  }
}

TEST(Deviation, Rules) {
  std::vector<LabeledFeature> samples{{vec({0, 0}), ToothClass::canine},
                                      {vec({2, 0}), ToothClass::canine}};
  const auto stats = fit_class_stats(samples);  // dim0: mean 1 sd 1; dim1: mean 0 sd 0
  auto flags = classify_deviation(vec({1, 0}), stats, ToothClass::canine);
  EXPECT_EQ(flags.non_near_count(), 0u);
  EXPECT_FALSE(flags.unusable_class);

  flags = classify_deviation(vec({3, 0}), stats, ToothClass::canine);
  EXPECT_EQ(flags.flags[0], DeviationFlag::above);
  flags = classify_deviation(vec({2, 0}), stats, ToothClass::canine);   // exactly mean + 1 sd
  EXPECT_EQ(flags.flags[0], DeviationFlag::near);
  flags = classify_deviation(vec({-0.5, 0}), stats, ToothClass::canine);
  EXPECT_EQ(flags.flags[0], DeviationFlag::below);

  // Zero spread: any difference decides by sign.
  flags = classify_deviation(vec({1, 1e-12}), stats, ToothClass::canine);
  EXPECT_EQ(flags.flags[1], DeviationFlag::above);
  flags = classify_deviation(vec({1, -3}), stats, ToothClass::canine);
  EXPECT_EQ(flags.flags[1], DeviationFlag::below);

  flags = classify_deviation(vec({100}), stats, ToothClass::molar2);
  EXPECT_TRUE(flags.unusable_class);
  EXPECT_EQ(flags.non_near_count(), 0u);
}

TEST(Deviation, InvariantUnderPositiveAffineRescaling) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<LabeledFeature> samples;
    for (int i = 0; i < 12; ++i) {
      FeatureVector v;
      for (double& x : v.values) x = gaussian(rng);
      samples.push_back({v, ToothClass::incisor});
    }
    FeatureVector probe;
    for (double& x : probe.values) x = 2.0 * gaussian(rng);
    const double scale = uniform(rng, 0.1, 10.0);
    const double shift = uniform(rng, -50, 50);
    auto rescaled = samples;
    for (auto& s : rescaled)
      for (double& x : s.features.values) x = scale * x + shift;
    FeatureVector probe2 = probe;
    for (double& x : probe2.values) x = scale * x + shift;
    const auto a = classify_deviation(probe, fit_class_stats(samples), ToothClass::incisor, 1.0);
    const auto b = classify_deviation(probe2, fit_class_stats(rescaled), ToothClass::incisor, 1.0);
    EXPECT_EQ(a.flags, b.flags);
  }
}

TEST(Projection, AlignsWithTheOnlySeparatingAxis) {
  std::mt19937_64 rng(8);
  auto samples = gaussian_classes(rng, {{ToothClass::incisor, 0}, {ToothClass::molar1, 0}}, 0.0, 150);
  for (auto& s : samples)
    if (s.cls == ToothClass::molar1) s.features.values[0] += 6.0;
  const auto model = fit_projection(samples);
  EXPECT_GT(std::abs(model.basis[0][0]), 0.95);
}

TEST(Projection, BasisShape) {
  std::mt19937_64 rng(12);
  const auto samples = gaussian_classes(
      rng, {{ToothClass::incisor, 0}, {ToothClass::canine, 1}, {ToothClass::molar1, 2}}, 5.0, 60);
  const auto model = fit_projection(samples);
  for (int c = 0; c < 2; ++c) {
    double norm = 0;
    for (std::size_t d = 0; d < kFeatureDims; ++d) norm += model.basis[d][c] * model.basis[d][c];
    EXPECT_NEAR(norm, 1.0, 1e-12);
    const auto w = column(model, c);
    const auto pivot = std::max_element(w.begin(), w.end(), [](double a, double b) {
      return std::abs(a) < std::abs(b);
    });
    EXPECT_GT(*pivot, 0.0);
  }
  FeatureVector mean;
  mean.values = model.mean;
  const auto p = project(model, mean);
  EXPECT_EQ(p.x, 0.0);
  EXPECT_EQ(p.y, 0.0);
  EXPECT_GE(model.eigenvalues[0], model.eigenvalues[1]);
}

TEST(Projection, FisherCriterionBeatsRandomDirections) {
  std::mt19937_64 rng(31);
  const auto samples = gaussian_classes(
      rng, {{ToothClass::incisor, 0}, {ToothClass::canine, 3}, {ToothClass::molar2, 6}}, 2.0, 40);
  const auto model = fit_projection(samples);
  const FisherOracle oracle(samples);
  const double fitted = oracle.criterion(column(model, 0));
  for (int i = 0; i < 1000; ++i) {
    std::array<double, kFeatureDims> w{};
    double norm = 0;
    for (double& x : w) {
      x = gaussian(rng);
      norm += x * x;
    }
    for (double& x : w) x /= std::sqrt(norm);
    ASSERT_GE(fitted, oracle.criterion(w));
  }
}

TEST(Projection, PermutationInvariant) {
  std::mt19937_64 rng(5);
  auto samples = gaussian_classes(
      rng, {{ToothClass::incisor, 0}, {ToothClass::canine, 1}}, 3.0, 30);
  const auto a = fit_projection(samples);
  std::shuffle(samples.begin(), samples.end(), rng);
  const auto b = fit_projection(samples);
  EXPECT_EQ(a.basis, b.basis);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.scale, b.scale);
}

TEST(Projection, Errors) {
  std::mt19937_64 rng(1);
  auto one_class = gaussian_classes(rng, {{ToothClass::incisor, 0}}, 0.0, 20);
  EXPECT_THROW(fit_projection(one_class), Error);

  // Identical class means: same points under two labels.
  std::vector<LabeledFeature> same;
  for (const auto& s : one_class) {
    same.push_back({s.features, ToothClass::incisor});
    same.push_back({s.features, ToothClass::canine});
  }
  try {
    fit_projection(same);
    FAIL() << "expected degenerate class structure";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::degenerate);
    EXPECT_NE(std::string(e.what()).find("degenerate class structure"), std::string::npos);
  }
}

TEST(Projection, IsAffine) {
  std::mt19937_64 rng(19);
  const auto samples = gaussian_classes(
      rng, {{ToothClass::incisor, 0}, {ToothClass::canine, 1}, {ToothClass::molar1, 2}}, 4.0, 30);
  const auto model = fit_projection(samples);
  for (int trial = 0; trial < 100; ++trial) {
    FeatureVector u, w, mix;
    const double alpha = uniform(rng, -2, 3);
    for (std::size_t d = 0; d < kFeatureDims; ++d) {
      u.values[d] = 5 * gaussian(rng);
      w.values[d] = 5 * gaussian(rng);
      mix.values[d] = alpha * u.values[d] + (1 - alpha) * w.values[d];
    }
    const auto pu = project(model, u), pw = project(model, w), pm = project(model, mix);
    EXPECT_NEAR(pm.x, alpha * pu.x + (1 - alpha) * pw.x, 1e-9);
    EXPECT_NEAR(pm.y, alpha * pu.y + (1 - alpha) * pw.y, 1e-9);
  }
}

TEST(Projection, SeparatedClassMeansAreFartherThanSpread) {
  std::mt19937_64 rng(23);
  const auto samples = gaussian_classes(
      rng, {{ToothClass::incisor, 0}, {ToothClass::canine, 1}, {ToothClass::molar1, 2}}, 5.0, 80);
  const auto model = fit_projection(samples);
  std::array<double, kClassCount> radius{};
  std::array<int, kClassCount> count{};
  for (const auto& s : samples) {
    const auto p = project(model, s.features);
    const auto& m = *model.class_means[index_of(s.cls)];
    radius[index_of(s.cls)] += std::hypot(p.x - m.x, p.y - m.y);
    ++count[index_of(s.cls)];
  }
  double mean_radius = 0;
  int classes = 0;
  for (std::size_t c = 0; c < kClassCount; ++c)
    if (count[c]) {
      mean_radius += radius[c] / count[c];
      ++classes;
    }
  mean_radius /= classes;
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = a + 1; b < 3; ++b) {
      const auto& ma = *model.class_means[a];
      const auto& mb = *model.class_means[b];
      EXPECT_GT(std::hypot(ma.x - mb.x, ma.y - mb.y), mean_radius);
    }
}

TEST(NearestNeighbors, Examples) {
  std::vector<LabeledPoint> pts{{5, {0, 0}}, {2, {1, 0}}, {9, {0, 1}}, {1, {3, 3}}};
  auto nn = nearest_neighbors({1, 0}, pts, 2);
  ASSERT_EQ(nn.size(), 2u);
  EXPECT_EQ(nn[0].id, 2u);
  EXPECT_EQ(nn[0].distance, 0.0);
  EXPECT_EQ(nn[1].id, 5u);

  nn = nearest_neighbors({0.5, 0.5}, pts, 10);
  ASSERT_EQ(nn.size(), 4u);
  // 2, 5 and 9 are equidistant; ties go to the smaller id.
  EXPECT_EQ(nn[0].id, 2u);
  EXPECT_EQ(nn[1].id, 5u);
  EXPECT_EQ(nn[2].id, 9u);
  EXPECT_EQ(nn[3].id, 1u);
}

TEST(NearestNeighbors, MatchesExhaustiveSort) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<LabeledPoint> pts;
    for (std::uint64_t i = 0; i < 200; ++i) {
      // Coarse grid makes distance ties common.
      pts.push_back({1000 - i, {std::floor(uniform(rng, 0, 10)), std::floor(uniform(rng, 0, 10))}});
    }
    const Point2 q{std::floor(uniform(rng, 0, 10)), std::floor(uniform(rng, 0, 10))};
    std::vector<std::pair<double, std::uint64_t>> oracle;
    for (const auto& p : pts) {
      const double dx = p.point.x - q.x, dy = p.point.y - q.y;
      oracle.push_back({std::sqrt(dx * dx + dy * dy), p.id});
    }
    std::sort(oracle.begin(), oracle.end());
    const auto nn = nearest_neighbors(q, pts, 7);
    ASSERT_EQ(nn.size(), 7u);
    for (std::size_t i = 0; i < 7; ++i) {
      EXPECT_EQ(nn[i].id, oracle[i].second);
      EXPECT_EQ(nn[i].distance, oracle[i].first);
    }
  }
}

}  // namespace
}  // namespace toothloop
