#include "toothloop/eval_metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <tuple>

namespace toothloop {

using nlohmann::json;

Matching match_instances(std::span<const BinaryMask> predictions,
                         std::span<const BinaryMask> truths, double threshold) {
  std::vector<MatchPair> candidates;
  for (std::size_t p = 0; p < predictions.size(); ++p) {
    for (std::size_t t = 0; t < truths.size(); ++t) {
      const double overlap = iou(predictions[p], truths[t]);
      if (overlap >= threshold && overlap > 0.0) candidates.push_back({p, t, overlap});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const MatchPair& a, const MatchPair& b) {
    return std::tuple(-a.iou, a.prediction, a.truth) < std::tuple(-b.iou, b.prediction, b.truth);
  });
  std::vector<bool> pred_used(predictions.size()), truth_used(truths.size());
  Matching out;
  for (const MatchPair& c : candidates) {
    if (pred_used[c.prediction] || truth_used[c.truth]) continue;
    pred_used[c.prediction] = true;
    truth_used[c.truth] = true;
    out.pairs.push_back(c);
  }
  for (std::size_t p = 0; p < predictions.size(); ++p) {
    if (!pred_used[p]) out.unmatched_predictions.push_back(p);
  }
  for (std::size_t t = 0; t < truths.size(); ++t) {
    if (!truth_used[t]) out.unmatched_truths.push_back(t);
  }
  return out;
}

double f1_score(double precision, double recall) {
  if (precision + recall <= 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

MetricSet metrics_from(const PixelConfusion& c) {
  MetricSet m;
  const auto tp = static_cast<double>(c.true_positives);
  const auto fp = static_cast<double>(c.false_positives);
  const auto fn = static_cast<double>(c.false_negatives);
  auto ratio = [&m](double num, double den) {
    if (den == 0.0) {
      m.undefined = true;
      return 0.0;
    }
    return 100.0 * num / den;
  };
  m.iou = ratio(tp, tp + fp + fn);
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);
  m.f1 = f1_score(m.precision, m.recall);
  return m;
}

void EvalAccumulator::add(const Matching& matching, std::span<const EvalInstance> predictions,
                          std::span<const EvalInstance> truths) {
  for (const MatchPair& pair : matching.pairs) {
    const auto& pred = predictions[pair.prediction];
    const auto& truth = truths[pair.truth];
    const std::uint64_t overlap = intersection_count(pred.mask, truth.mask);
    const PixelConfusion c{overlap, pred.mask.on_count() - overlap,
                           truth.mask.on_count() - overlap};
    total_ += c;
    per_class_[index_of(truth.cls)] += c;
    seen_[index_of(truth.cls)] = true;
  }
  for (std::size_t p : matching.unmatched_predictions) {
    const PixelConfusion c{0, predictions[p].mask.on_count(), 0};
    total_ += c;
    per_class_[index_of(predictions[p].cls)] += c;
    seen_[index_of(predictions[p].cls)] = true;
  }
  for (std::size_t t : matching.unmatched_truths) {
    const PixelConfusion c{0, 0, truths[t].mask.on_count()};
    total_ += c;
    per_class_[index_of(truths[t].cls)] += c;
    seen_[index_of(truths[t].cls)] = true;
  }
  matched_ += matching.pairs.size();
  unmatched_predictions_ += matching.unmatched_predictions.size();
  unmatched_truths_ += matching.unmatched_truths.size();
}

EvalReport EvalAccumulator::finish(std::uint32_t round) const {
  EvalReport r;
  r.round = round;
  r.confusion = total_;
  r.aggregate = metrics_from(total_);
  r.matched = matched_;
  r.unmatched_predictions = unmatched_predictions_;
  r.unmatched_truths = unmatched_truths_;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < kClassCount; ++c) {
    if (!seen_[c]) continue;
    ClassBreakdown b{per_class_[c], metrics_from(per_class_[c])};
    r.macro.iou += b.metrics.iou;
    r.macro.precision += b.metrics.precision;
    r.macro.recall += b.metrics.recall;
    r.macro.undefined = r.macro.undefined || b.metrics.undefined;
    r.per_class[c] = b;
    ++classes;
  }
  if (classes > 0) {
    r.macro.iou /= static_cast<double>(classes);
    r.macro.precision /= static_cast<double>(classes);
    r.macro.recall /= static_cast<double>(classes);
  } else {
    r.macro.undefined = true;
  }
  r.macro.f1 = f1_score(r.macro.precision, r.macro.recall);
  return r;
}

EvalReport evaluate(const Matching& matching, std::span<const EvalInstance> predictions,
                    std::span<const EvalInstance> truths, std::uint32_t round) {
  EvalAccumulator acc;
  acc.add(matching, predictions, truths);
  return acc.finish(round);
}

EvalReport summary_report(std::uint32_t round, const MetricSet& metrics) {
  EvalReport r;
  r.round = round;
  r.aggregate = metrics;
  r.macro = metrics;
  return r;
}

void EvalHistory::record(const EvalReport& report) {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), report.round,
                             [](const EvalReport& e, std::uint32_t r) { return e.round < r; });
  if (it != entries_.end() && it->round == report.round) {
    throw Error(ErrorCode::conflict,
                "round " + std::to_string(report.round) + " is already recorded");
  }
  entries_.insert(it, report);
}

std::string EvalHistory::to_csv() const {
  std::string out = "round,iou,precision,recall,f1\n";
  char line[160];
  for (const auto& e : entries_) {
    std::snprintf(line, sizeof line, "%u,%.4f,%.4f,%.4f,%.4f\n", e.round, e.aggregate.iou,
                  e.aggregate.precision, e.aggregate.recall, e.aggregate.f1);
    out += line;
  }
  return out;
}

json EvalHistory::series() const {
  json s{{"round", json::array()},
         {"iou", json::array()},
         {"precision", json::array()},
         {"recall", json::array()},
         {"f1", json::array()}};
  for (const auto& e : entries_) {
    s["round"].push_back(e.round);
    s["iou"].push_back(e.aggregate.iou);
    s["precision"].push_back(e.aggregate.precision);
    s["recall"].push_back(e.aggregate.recall);
    s["f1"].push_back(e.aggregate.f1);
  }
  return s;
}

json metrics_to_json(const MetricSet& m) {
  return {{"iou", m.iou},
          {"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"undefined", m.undefined}};
}

MetricSet metrics_from_json(const json& j) {
  MetricSet m;
  try {
    m.iou = j.at("iou").get<double>();
    m.precision = j.at("precision").get<double>();
    m.recall = j.at("recall").get<double>();
    m.f1 = j.contains("f1") ? j.at("f1").get<double>() : f1_score(m.precision, m.recall);
    m.undefined = j.value("undefined", false);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::protocol_error, std::string("invalid metrics: ") + e.what());
  }
  for (double v : {m.iou, m.precision, m.recall, m.f1}) {
    if (!(v >= 0.0 && v <= 100.0)) {
      throw Error(ErrorCode::protocol_error, "metric outside [0, 100]");
    }
  }
  return m;
}

namespace {
json confusion_to_json(const PixelConfusion& c) {
  return {{"tp", c.true_positives}, {"fp", c.false_positives}, {"fn", c.false_negatives}};
}
PixelConfusion confusion_from_json(const json& j) {
  return {j.at("tp").get<std::uint64_t>(), j.at("fp").get<std::uint64_t>(),
          j.at("fn").get<std::uint64_t>()};
}
}  // namespace

json report_to_json(const EvalReport& r) {
  json per_class = json::object();
  for (std::size_t c = 0; c < kClassCount; ++c) {
    if (!r.per_class[c]) continue;
    per_class[std::string(to_string(kAllClasses[c]))] = {
        {"confusion", confusion_to_json(r.per_class[c]->confusion)},
        {"metrics", metrics_to_json(r.per_class[c]->metrics)}};
  }
  return {{"round", r.round},
          {"aggregate", metrics_to_json(r.aggregate)},
          {"confusion", confusion_to_json(r.confusion)},
          {"macro", metrics_to_json(r.macro)},
          {"per_class", std::move(per_class)},
          {"matched", r.matched},
          {"unmatched_predictions", r.unmatched_predictions},
          {"unmatched_truths", r.unmatched_truths}};
}

EvalReport report_from_json(const json& j) {
  try {
    EvalReport r;
    r.round = j.at("round").get<std::uint32_t>();
    r.aggregate = metrics_from_json(j.at("aggregate"));
    r.confusion = confusion_from_json(j.at("confusion"));
    r.macro = metrics_from_json(j.at("macro"));
    for (const auto& [name, entry] : j.at("per_class").items()) {
      auto cls = parse_class(name);
      if (!cls) throw Error(ErrorCode::parse_error, "unknown class '" + name + "' in report");
      r.per_class[index_of(*cls)] = ClassBreakdown{confusion_from_json(entry.at("confusion")),
                                                   metrics_from_json(entry.at("metrics"))};
    }
    r.matched = j.at("matched").get<std::size_t>();
    r.unmatched_predictions = j.at("unmatched_predictions").get<std::size_t>();
    r.unmatched_truths = j.at("unmatched_truths").get<std::size_t>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("invalid report: ") + e.what());
  }
}

}  // namespace toothloop
