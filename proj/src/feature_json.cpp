#include "toothloop/feature_json.hpp"

#include <string>

namespace toothloop {

using nlohmann::json;

json feature_values_to_json(const std::array<double, kFeatureDims>& values) {
  json j = json::object();
  for (std::size_t d = 0; d < kFeatureDims; ++d) j[std::string(kFeatureNames[d])] = values[d];
  return j;
}

namespace {

std::array<double, kFeatureDims> values_from_json(const json& j) {
  std::array<double, kFeatureDims> out{};
  for (std::size_t d = 0; d < kFeatureDims; ++d) {
    out[d] = j.at(std::string(kFeatureNames[d])).get<double>();
  }
  return out;
}

json point_to_json(const Point2& p) { return {{"x", p.x}, {"y", p.y}}; }

}  // namespace

json features_to_json(const FeatureVector& v) {
  return {{"names", kFeatureNames},
          {"values", v.values},
          {"angle_degenerate", v.angle_degenerate}};
}

FeatureVector features_from_json(const json& j) {
  try {
    FeatureVector v;
    v.values = j.at("values").get<std::array<double, kFeatureDims>>();
    v.angle_degenerate = j.value("angle_degenerate", false);
    return v;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("invalid feature vector: ") + e.what());
  }
}

json deviation_to_json(const DeviationReport& r) {
  json flags = json::object();
  for (std::size_t d = 0; d < kFeatureDims; ++d) {
    flags[std::string(kFeatureNames[d])] = to_string(r.flags[d]);
  }
  return {{"flags", flags},
          {"non_near_count", r.non_near_count()},
          {"unusable_class", r.unusable_class}};
}

json class_stats_to_json(const ClassStats& stats) {
  json out = json::object();
  for (ToothClass c : kAllClasses) {
    const ClassSummary& s = stats.of(c);
    out[std::string(to_string(c))] = {{"count", s.count},
                                      {"usable", s.usable()},
                                      {"mean", feature_values_to_json(s.mean)},
                                      {"stddev", feature_values_to_json(s.stddev)}};
  }
  return out;
}

json projection_to_json(const ProjectionModel& m) {
  json means = json::object();
  for (ToothClass c : kAllClasses) {
    const auto& p = m.class_means[index_of(c)];
    means[std::string(to_string(c))] = p ? point_to_json(*p) : json(nullptr);
  }
  return {{"basis", m.basis},
          {"mean", feature_values_to_json(m.mean)},
          {"scale", feature_values_to_json(m.scale)},
          {"epsilon", m.epsilon},
          {"eigenvalues", m.eigenvalues},
          {"class_means", means},
          {"sample_count", m.sample_count}};
}

ProjectionModel projection_from_json(const json& j) {
  try {
    ProjectionModel m;
    m.basis = j.at("basis").get<std::array<std::array<double, 2>, kFeatureDims>>();
    m.mean = values_from_json(j.at("mean"));
    m.scale = values_from_json(j.at("scale"));
    m.epsilon = j.at("epsilon").get<double>();
    m.eigenvalues = j.at("eigenvalues").get<std::array<double, 2>>();
    for (ToothClass c : kAllClasses) {
      const json& p = j.at("class_means").at(std::string(to_string(c)));
      if (!p.is_null()) m.class_means[index_of(c)] = Point2{p.at("x"), p.at("y")};
    }
    m.sample_count = j.at("sample_count").get<std::size_t>();
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("invalid projection model: ") + e.what());
  }
}

}  // namespace toothloop
