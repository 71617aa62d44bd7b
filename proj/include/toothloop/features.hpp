#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "toothloop/mask_core.hpp"
#include "toothloop/tooth_class.hpp"

namespace toothloop {

inline constexpr std::size_t kFeatureDims = 10;

/// Fixed dimension order used everywhere (JSON, CSV, statistics).
inline constexpr std::array<std::string_view, kFeatureDims> kFeatureNames{
    "hu1", "hu2", "hu3", "hu4", "hu5", "hu6", "hu7", "dx", "dy", "angle"};

inline constexpr std::size_t kDimDx = 7;
inline constexpr std::size_t kDimDy = 8;
inline constexpr std::size_t kDimAngle = 9;

/// Per-tooth metric vector: seven log-compressed Hu invariants, absolute
/// offset of the centroid from the image center, and tilt from vertical.
struct FeatureVector {
  std::array<double, kFeatureDims> values{};
  /// Orientation was undefined (disk-like mask); angle is 0.
  bool angle_degenerate = false;

  double hu(std::size_t i) const { return values[i]; }
  double dx() const { return values[kDimDx]; }
  double dy() const { return values[kDimDy]; }
  double angle() const { return values[kDimAngle]; }

  double& operator[](std::size_t d) { return values[d]; }
  double operator[](std::size_t d) const { return values[d]; }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// -sign(h) * log10(|h| + 1e-30), with sign(0) taken as +1.
double compress_hu(double h);

/// Throws Error{degenerate} for an empty mask and Error{invalid_argument}
/// when the mask frame differs from the image size.
FeatureVector extract_features(const BinaryMask& mask, std::uint32_t image_width,
                               std::uint32_t image_height);

struct LabeledFeature {
  FeatureVector features;
  ToothClass cls;
};

struct ClassSummary {
  std::size_t count = 0;
  std::array<double, kFeatureDims> mean{};
  /// Population standard deviation.
  std::array<double, kFeatureDims> stddev{};
  bool usable() const { return count >= 2; }
};

struct ClassStats {
  std::array<ClassSummary, kClassCount> classes{};

  const ClassSummary& of(ToothClass c) const { return classes[index_of(c)]; }
};

ClassStats fit_class_stats(std::span<const LabeledFeature> samples);

enum class DeviationFlag { below, near, above };

std::string_view to_string(DeviationFlag flag);

struct DeviationReport {
  std::array<DeviationFlag, kFeatureDims> flags{};
  /// Class had too few samples; every flag defaulted to near.
  bool unusable_class = false;

  std::size_t non_near_count() const;
};

DeviationReport classify_deviation(const FeatureVector& v, const ClassStats& stats,
                                   ToothClass cls, double z_threshold = 1.0);

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

/// Fitted Fisher discriminant over standardized features.
struct ProjectionModel {
  /// basis[d] is row d of the 10x2 matrix; columns have unit norm.
  std::array<std::array<double, 2>, kFeatureDims> basis{};
  std::array<double, kFeatureDims> mean{};
  /// Per-dimension population std of the training pool (1 where it was 0).
  std::array<double, kFeatureDims> scale{};
  double epsilon = 1e-6;
  /// Generalized eigenvalues of the two retained directions, descending.
  std::array<double, 2> eigenvalues{};
  std::array<std::optional<Point2>, kClassCount> class_means{};
  std::size_t sample_count = 0;
};

/// Throws Error{invalid_argument} with fewer than two classes of >= 2
/// samples, Error{degenerate} when all class means coincide.
ProjectionModel fit_projection(std::span<const LabeledFeature> samples,
                               double epsilon = 1e-6);

/// Standardized features of `v` under the model's mean/scale.
std::array<double, kFeatureDims> standardize(const ProjectionModel& model,
                                             const FeatureVector& v);

Point2 project(const ProjectionModel& model, const FeatureVector& v);

struct LabeledPoint {
  std::uint64_t id;
  Point2 point;
};

struct Neighbor {
  std::uint64_t id;
  double distance;
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// k closest points by Euclidean distance, ascending, ties by id.
std::vector<Neighbor> nearest_neighbors(Point2 query,
                                        std::span<const LabeledPoint> labeled,
                                        std::size_t k);

}  // namespace toothloop
