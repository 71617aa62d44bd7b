#pragma once

#include <json.hpp>

#include "toothloop/features.hpp"

namespace toothloop {

/// {"hu1": ..., ..., "angle": ...} in the fixed dimension order.
nlohmann::json feature_values_to_json(const std::array<double, kFeatureDims>& values);

nlohmann::json features_to_json(const FeatureVector& v);
FeatureVector features_from_json(const nlohmann::json& j);

nlohmann::json deviation_to_json(const DeviationReport& r);

nlohmann::json class_stats_to_json(const ClassStats& stats);

nlohmann::json projection_to_json(const ProjectionModel& m);
ProjectionModel projection_from_json(const nlohmann::json& j);

}  // namespace toothloop
