#include "toothloop/features.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace toothloop {

double compress_hu(double h) {
  const double sign = h < 0.0 ? -1.0 : 1.0;
  return -sign * std::log10(std::abs(h) + 1e-30);
}

FeatureVector extract_features(const BinaryMask& mask, std::uint32_t image_width,
                               std::uint32_t image_height) {
  if (mask.width() != image_width || mask.height() != image_height) {
    throw Error(ErrorCode::invalid_argument,
                "mask frame does not match the image dimensions");
  }
  const MomentSet moments = compute_moments(mask);
  if (!moments.defined) {
    throw Error(ErrorCode::degenerate, "cannot extract features from an empty mask");
  }
  FeatureVector v;
  for (std::size_t i = 0; i < 7; ++i) v.values[i] = compress_hu(moments.hu[i]);
  const double cx = moments.raw[1][0] / moments.raw[0][0];
  const double cy = moments.raw[0][1] / moments.raw[0][0];
  v.values[kDimDx] = std::abs(cx - image_width / 2.0);
  v.values[kDimDy] = std::abs(cy - image_height / 2.0);
  const Orientation o = orientation_from_vertical(moments);
  v.values[kDimAngle] = o.degrees;
  v.angle_degenerate = o.degenerate;
  return v;
}

ClassStats fit_class_stats(std::span<const LabeledFeature> samples) {
  ClassStats stats;
  std::array<std::array<double, kFeatureDims>, kClassCount> sums{};
  for (const auto& s : samples) {
    auto& summary = stats.classes[index_of(s.cls)];
    ++summary.count;
    for (std::size_t d = 0; d < kFeatureDims; ++d) sums[index_of(s.cls)][d] += s.features[d];
  }
  for (std::size_t c = 0; c < kClassCount; ++c) {
    auto& summary = stats.classes[c];
    if (summary.count == 0) continue;
    for (std::size_t d = 0; d < kFeatureDims; ++d) {
      summary.mean[d] = sums[c][d] / static_cast<double>(summary.count);
    }
  }
  // Second pass about the mean.
  std::array<std::array<double, kFeatureDims>, kClassCount> sq{};
  for (const auto& s : samples) {
    const auto c = index_of(s.cls);
    for (std::size_t d = 0; d < kFeatureDims; ++d) {
      const double diff = s.features[d] - stats.classes[c].mean[d];
      sq[c][d] += diff * diff;
    }
  }
  for (std::size_t c = 0; c < kClassCount; ++c) {
    auto& summary = stats.classes[c];
    if (summary.count == 0) continue;
    for (std::size_t d = 0; d < kFeatureDims; ++d) {
      summary.stddev[d] = std::sqrt(sq[c][d] / static_cast<double>(summary.count));
    }
  }
  return stats;
}

std::string_view to_string(DeviationFlag flag) {
  switch (flag) {
    case DeviationFlag::below: return "below";
    case DeviationFlag::near: return "near";
    case DeviationFlag::above: return "above";
  }
  return "near";
}

std::size_t DeviationReport::non_near_count() const {
  return static_cast<std::size_t>(
      std::count_if(flags.begin(), flags.end(),
                    [](DeviationFlag f) { return f != DeviationFlag::near; }));
}

DeviationReport classify_deviation(const FeatureVector& v, const ClassStats& stats,
                                   ToothClass cls, double z_threshold) {
  DeviationReport report;
  report.flags.fill(DeviationFlag::near);
  const ClassSummary& summary = stats.of(cls);
  if (!summary.usable()) {
    report.unusable_class = true;
    return report;
  }
  for (std::size_t d = 0; d < kFeatureDims; ++d) {
    const double mean = summary.mean[d];
    const double sd = summary.stddev[d];
    if (sd == 0.0) {
      if (v[d] > mean) report.flags[d] = DeviationFlag::above;
      else if (v[d] < mean) report.flags[d] = DeviationFlag::below;
      continue;
    }
    if (v[d] > mean + z_threshold * sd) {
      report.flags[d] = DeviationFlag::above;
    } else if (v[d] < mean - z_threshold * sd) {
      report.flags[d] = DeviationFlag::below;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Fisher discriminant

namespace {

using Matrix = Eigen::Matrix<double, kFeatureDims, kFeatureDims>;
using Vector = Eigen::Matrix<double, kFeatureDims, 1>;

}  // namespace

std::array<double, kFeatureDims> standardize(const ProjectionModel& model,
                                             const FeatureVector& v) {
  std::array<double, kFeatureDims> z{};
  for (std::size_t d = 0; d < kFeatureDims; ++d) {
    z[d] = (v[d] - model.mean[d]) / model.scale[d];
  }
  return z;
}

ProjectionModel fit_projection(std::span<const LabeledFeature> samples,
                               double epsilon) {
  std::array<std::size_t, kClassCount> counts{};
  for (const auto& s : samples) ++counts[index_of(s.cls)];
  std::size_t usable_classes = 0;
  for (std::size_t c : counts) usable_classes += c >= 2 ? 1 : 0;
  if (usable_classes < 2) {
    throw Error(ErrorCode::invalid_argument,
                "projection needs at least 2 classes with 2 or more samples");
  }

  // Sorting fixes the accumulation order, which makes the fit independent of
  // the caller's sample order down to the last bit.
  std::vector<LabeledFeature> pool;
  pool.reserve(samples.size());
  for (const auto& s : samples) {
    if (counts[index_of(s.cls)] >= 2) pool.push_back(s);
  }
  std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
    if (a.cls != b.cls) return a.cls < b.cls;
    return a.features.values < b.features.values;
  });

  ProjectionModel model;
  model.epsilon = epsilon;
  model.sample_count = pool.size();
  const auto n = static_cast<double>(pool.size());
  for (const auto& s : pool) {
    for (std::size_t d = 0; d < kFeatureDims; ++d) model.mean[d] += s.features[d];
  }
  for (double& m : model.mean) m /= n;
  std::array<double, kFeatureDims> var{};
  for (const auto& s : pool) {
    for (std::size_t d = 0; d < kFeatureDims; ++d) {
      const double diff = s.features[d] - model.mean[d];
      var[d] += diff * diff;
    }
  }
  for (std::size_t d = 0; d < kFeatureDims; ++d) {
    const double sd = std::sqrt(var[d] / n);
    model.scale[d] = sd > 0.0 ? sd : 1.0;
  }

  std::vector<Vector> z(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto zs = standardize(model, pool[i].features);
    z[i] = Eigen::Map<const Vector>(zs.data());
  }

  std::array<Vector, kClassCount> class_mean;
  for (auto& m : class_mean) m.setZero();
  for (std::size_t i = 0; i < pool.size(); ++i) class_mean[index_of(pool[i].cls)] += z[i];
  for (std::size_t c = 0; c < kClassCount; ++c) {
    if (counts[c] >= 2) class_mean[c] /= static_cast<double>(counts[c]);
  }
  // Standardized pool mean is zero up to rounding; compute it anyway.
  Vector grand = Vector::Zero();
  for (const auto& zi : z) grand += zi;
  grand /= n;

  Matrix within = Matrix::Zero();
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const Vector diff = z[i] - class_mean[index_of(pool[i].cls)];
    within += diff * diff.transpose();
  }
  Matrix between = Matrix::Zero();
  for (std::size_t c = 0; c < kClassCount; ++c) {
    if (counts[c] < 2) continue;
    const Vector diff = class_mean[c] - grand;
    between += static_cast<double>(counts[c]) * diff * diff.transpose();
  }

  const double total = within.trace() + between.trace();
  if (between.trace() <= 1e-12 * std::max(total, 1.0)) {
    throw Error(ErrorCode::degenerate, "degenerate class structure");
  }

  const double trace_w = within.trace();
  const double ridge = trace_w > 0.0 ? epsilon * trace_w / kFeatureDims : epsilon;
  const Matrix regularized = within + ridge * Matrix::Identity();

  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> solver(between, regularized);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorCode::degenerate, "generalized eigen-solve failed");
  }
  // Eigenvalues come back ascending.
  for (int col = 0; col < 2; ++col) {
    const int source = static_cast<int>(kFeatureDims) - 1 - col;
    Vector w = solver.eigenvectors().col(source);
    w.normalize();
    Eigen::Index pivot = 0;
    w.cwiseAbs().maxCoeff(&pivot);
    if (w(pivot) < 0.0) w = -w;
    for (std::size_t d = 0; d < kFeatureDims; ++d) model.basis[d][col] = w(static_cast<Eigen::Index>(d));
    model.eigenvalues[col] = solver.eigenvalues()(source);
  }

  for (std::size_t c = 0; c < kClassCount; ++c) {
    if (counts[c] < 2) continue;
    Point2 p;
    for (std::size_t d = 0; d < kFeatureDims; ++d) {
      p.x += class_mean[c](static_cast<Eigen::Index>(d)) * model.basis[d][0];
      p.y += class_mean[c](static_cast<Eigen::Index>(d)) * model.basis[d][1];
    }
    model.class_means[c] = p;
  }
  return model;
}

Point2 project(const ProjectionModel& model, const FeatureVector& v) {
  for (double x : v.values) {
    if (!std::isfinite(x)) {
      throw Error(ErrorCode::invalid_argument, "cannot project a non-finite vector");
    }
  }
  const auto z = standardize(model, v);
  Point2 p;
  for (std::size_t d = 0; d < kFeatureDims; ++d) {
    p.x += z[d] * model.basis[d][0];
    p.y += z[d] * model.basis[d][1];
  }
  return p;
}

std::vector<Neighbor> nearest_neighbors(Point2 query,
                                        std::span<const LabeledPoint> labeled,
                                        std::size_t k) {
  std::vector<Neighbor> all;
  all.reserve(labeled.size());
  for (const auto& lp : labeled) {
    const double dx = lp.point.x - query.x;
    const double dy = lp.point.y - query.y;
    all.push_back({lp.id, std::sqrt(dx * dx + dy * dy)});
  }
  const auto by_distance = [](const Neighbor& a, const Neighbor& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.id < b.id;
  };
  const std::size_t keep = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep),
                    all.end(), by_distance);
  all.resize(keep);
  return all;
}

}  // namespace toothloop
