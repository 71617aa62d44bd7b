#pragma once

// Synthetic feature classes and an independent Fisher criterion, shared by
// the unit and acceptance suites.

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "test_support.hpp"
#include "toothloop/features.hpp"

namespace toothloop::testing {


// Classes shifted by `separation` along their own axis, unit noise elsewhere.
inline std::vector<LabeledFeature> gaussian_classes(std::mt19937_64& rng,
                                             const std::vector<std::pair<ToothClass, std::size_t>>& axes,
                                             double separation, std::size_t per_class) {
  std::vector<LabeledFeature> out;
  for (const auto& [cls, axis] : axes) {
    for (std::size_t i = 0; i < per_class; ++i) {
      FeatureVector v;
      for (double& x : v.values) x = gaussian(rng);
      v.values[axis] += separation;
      out.push_back({v, cls});
    }
  }
  return out;
}

// Independent Fisher criterion on population-standardized data.
struct FisherOracle {
  std::array<std::array<double, kFeatureDims>, kFeatureDims> sw{}, sb{};

  explicit FisherOracle(const std::vector<LabeledFeature>& samples) {
    const std::size_t n = samples.size();
    std::array<double, kFeatureDims> mean{}, sd{};
    for (const auto& s : samples)
      for (std::size_t d = 0; d < kFeatureDims; ++d) mean[d] += s.features[d] / n;
    for (const auto& s : samples)
      for (std::size_t d = 0; d < kFeatureDims; ++d)
        sd[d] += (s.features[d] - mean[d]) * (s.features[d] - mean[d]) / n;
    for (double& v : sd) v = v > 0 ? std::sqrt(v) : 1.0;
    std::vector<std::array<double, kFeatureDims>> z;
    for (const auto& s : samples) {
      std::array<double, kFeatureDims> zi{};
      for (std::size_t d = 0; d < kFeatureDims; ++d) zi[d] = (s.features[d] - mean[d]) / sd[d];
      z.push_back(zi);
    }
    std::array<std::array<double, kFeatureDims>, kClassCount> cm{};
    std::array<std::size_t, kClassCount> count{};
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = index_of(samples[i].cls);
      ++count[c];
      for (std::size_t d = 0; d < kFeatureDims; ++d) cm[c][d] += z[i][d];
    }
    for (std::size_t c = 0; c < kClassCount; ++c)
      if (count[c]) for (double& v : cm[c]) v /= count[c];
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = index_of(samples[i].cls);
      for (std::size_t a = 0; a < kFeatureDims; ++a)
        for (std::size_t b = 0; b < kFeatureDims; ++b)
          sw[a][b] += (z[i][a] - cm[c][a]) * (z[i][b] - cm[c][b]);
    }
    for (std::size_t c = 0; c < kClassCount; ++c)
      for (std::size_t a = 0; a < kFeatureDims; ++a)
        for (std::size_t b = 0; b < kFeatureDims; ++b) sb[a][b] += count[c] * cm[c][a] * cm[c][b];
  }

  double criterion(const std::array<double, kFeatureDims>& w) const {
    double num = 0, den = 0;
    for (std::size_t a = 0; a < kFeatureDims; ++a)
      for (std::size_t b = 0; b < kFeatureDims; ++b) {
        num += w[a] * sb[a][b] * w[b];
        den += w[a] * sw[a][b] * w[b];
      }
    return num / den;
  }
};

inline std::array<double, kFeatureDims> column(const ProjectionModel& m, int c) {
  std::array<double, kFeatureDims> w{};
  for (std::size_t d = 0; d < kFeatureDims; ++d) w[d] = m.basis[d][c];
  return w;
}

}  // namespace toothloop::testing
