#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "toothloop/mask_core.hpp"
#include "toothloop/tooth_class.hpp"

namespace toothloop {

struct EvalInstance {
  BinaryMask mask;
  ToothClass cls = ToothClass::incisor;
};

struct MatchPair {
  std::size_t prediction;
  std::size_t truth;
  double iou;
  friend bool operator==(const MatchPair&, const MatchPair&) = default;
};

struct Matching {
  std::vector<MatchPair> pairs;
  std::vector<std::size_t> unmatched_predictions;
  std::vector<std::size_t> unmatched_truths;
};

/// Greedy one-to-one matching by descending pairwise IoU; pairs with IoU
/// below `threshold` stay unmatched. Ties resolve by prediction index, then
/// truth index. Class labels are ignored.
Matching match_instances(std::span<const BinaryMask> predictions,
                         std::span<const BinaryMask> truths, double threshold = 0.5);

struct PixelConfusion {
  std::uint64_t true_positives = 0;
  std::uint64_t false_positives = 0;
  std::uint64_t false_negatives = 0;

  PixelConfusion& operator+=(const PixelConfusion& o) {
    true_positives += o.true_positives;
    false_positives += o.false_positives;
    false_negatives += o.false_negatives;
    return *this;
  }
  friend bool operator==(const PixelConfusion&, const PixelConfusion&) = default;
};

/// Percentages in [0, 100].
struct MetricSet {
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  /// Some denominator was zero and the affected metric was reported as 0.
  bool undefined = false;
};

MetricSet metrics_from(const PixelConfusion& c);

/// F1 in percent from precision and recall in percent; 0 when both are 0.
double f1_score(double precision, double recall);

struct ClassBreakdown {
  PixelConfusion confusion;
  MetricSet metrics;
};

struct EvalReport {
  std::uint32_t round = 0;
  /// Micro aggregate over pooled pixel counts.
  MetricSet aggregate;
  PixelConfusion confusion;
  /// Macro average over classes that have any pixels.
  MetricSet macro;
  std::array<std::optional<ClassBreakdown>, kClassCount> per_class{};
  std::size_t matched = 0;
  std::size_t unmatched_predictions = 0;
  std::size_t unmatched_truths = 0;
};

/// Pools confusion counts over any number of images.
class EvalAccumulator {
 public:
  /// Matched pairs add their overlap to TP and the remainders to FP / FN;
  /// unmatched predictions count as FP, unmatched truths as FN. Per-class
  /// counts follow the truth label for matched pairs.
  void add(const Matching& matching, std::span<const EvalInstance> predictions,
           std::span<const EvalInstance> truths);

  EvalReport finish(std::uint32_t round = 0) const;

 private:
  PixelConfusion total_;
  std::array<PixelConfusion, kClassCount> per_class_{};
  std::array<bool, kClassCount> seen_{};
  std::size_t matched_ = 0;
  std::size_t unmatched_predictions_ = 0;
  std::size_t unmatched_truths_ = 0;
};

EvalReport evaluate(const Matching& matching, std::span<const EvalInstance> predictions,
                    std::span<const EvalInstance> truths, std::uint32_t round = 0);

/// Report that carries only headline metrics (used for backend-reported
/// round summaries).
EvalReport summary_report(std::uint32_t round, const MetricSet& metrics);

/// Append-only per-round evaluation history.
class EvalHistory {
 public:
  /// Throws Error{conflict} if the round is already recorded.
  void record(const EvalReport& report);

  const std::vector<EvalReport>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// "round,iou,precision,recall,f1" header plus one row per round.
  std::string to_csv() const;
  /// {"round": [...], "iou": [...], ...} series for charting.
  nlohmann::json series() const;

 private:
  std::vector<EvalReport> entries_;
};

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
nlohmann::json metrics_to_json(const MetricSet& m);
MetricSet metrics_from_json(const nlohmann::json& j);

}  // namespace toothloop
