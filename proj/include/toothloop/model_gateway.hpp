#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "toothloop/annotation_store.hpp"
#include "toothloop/eval_metrics.hpp"
#include "toothloop/mask_core.hpp"
#include "toothloop/tooth_class.hpp"

namespace toothloop {

struct Prediction {
  Polygon polygon;
  ToothClass cls = ToothClass::incisor;
  double confidence = 0.0;
  friend bool operator==(const Prediction&, const Prediction&) = default;
};

/// Backend unreachable or timed out. Retrying may succeed.
class TransportError : public Error {
 public:
  TransportError(const std::string& message, int attempts,
                 std::chrono::milliseconds retry_after)
      : Error(ErrorCode::transport_error, message),
        attempts_(attempts),
        retry_after_(retry_after) {}

  int attempts() const noexcept { return attempts_; }
  std::chrono::milliseconds retry_after() const noexcept { return retry_after_; }

 private:
  int attempts_;
  std::chrono::milliseconds retry_after_;
};

enum class RoundStatus { submitted, running, done, failed };

std::string_view to_string(RoundStatus s);
std::optional<RoundStatus> parse_round_status(std::string_view name);

struct JobStatus {
  RoundStatus status = RoundStatus::running;
  std::optional<MetricSet> metrics;
  std::string message;
};

/// Segmentation and training service seen by the rest of the system.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  /// Predictions in image coordinates. An empty list is a valid answer.
  virtual std::vector<Prediction> segment(const PanoramicImage& image) = 0;

  /// Starts training on an interchange document; returns a job id.
  virtual std::string submit_training(std::uint32_t round, const nlohmann::json& document) = 0;

  virtual JobStatus poll_training(const std::string& job_id) = 0;

  virtual std::string name() const = 0;
};

// ---------------------------------------------------------------------------
// Deterministic mock

struct MockConfig {
  std::uint64_t seed = 42;
  /// Learning curve IoU(n) = final - (final - initial) * exp(-n / lambda),
  /// n = cumulative training samples. Fractions in [0, 1].
  double iou_initial = 0.75;
  double iou_final = 0.85;
  double lambda = 300.0;
  /// Share of predictions emitted with a wrong class and low confidence.
  double mislabel_rate = 0.15;
};

/// IoU fraction after `samples` cumulative training samples.
double mock_learning_curve(const MockConfig& config, std::uint64_t samples);

/// Percent metrics for a given IoU fraction, with precision = recall.
MetricSet mock_metrics(double iou_fraction);

/// Tooth order emitted per quadrant from the midline outward.
inline constexpr std::array<ToothClass, 7> kMockQuadrantOrder{
    ToothClass::incisor, ToothClass::incisor, ToothClass::canine, ToothClass::molar1,
    ToothClass::molar1,  ToothClass::molar1,  ToothClass::molar2};

/// Synthetic dentition: 28 teeth (4 quadrants x 7) laid out along two jaw
/// lines at 0.38 H and 0.62 H, with seeded jitter. About `mislabel_rate` of
/// them carry a neighbouring class and confidence below 0.5.
class MockBackend final : public ModelBackend {
 public:
  explicit MockBackend(MockConfig config = {});

  std::vector<Prediction> segment(const PanoramicImage& image) override;
  std::string submit_training(std::uint32_t round, const nlohmann::json& document) override;
  JobStatus poll_training(const std::string& job_id) override;
  std::string name() const override { return "mock"; }

  const MockConfig& config() const { return config_; }
  MetricSet baseline() const { return mock_metrics(mock_learning_curve(config_, 0)); }

  std::uint64_t consumed() const;
  /// Restores the cumulative sample counter after a restart.
  void set_consumed(std::uint64_t samples);
  /// The next submitted job reports failure and does not advance the curve.
  void fail_next_training();

 private:
  MockConfig config_;
  mutable std::mutex mutex_;
  std::uint64_t consumed_ = 0;
  bool fail_next_ = false;
  std::map<std::string, JobStatus> jobs_;
};

// ---------------------------------------------------------------------------
// Remote HTTP backend

inline constexpr int kWireVersion = 1;

struct RemoteConfig {
  /// e.g. "http://127.0.0.1:9000"
  std::string base_url;
  std::chrono::milliseconds timeout{10000};
  int max_attempts = 2;
  std::chrono::milliseconds retry_delay{200};
};

/// JSON-over-HTTP client:
///   POST /v1/segment  {version, image}           -> {version, predictions}
///   POST /v1/train    {version, round, document} -> {version, job_id}
///   GET  /v1/train/ID                            -> {version, status, metrics?}
class RemoteBackend final : public ModelBackend {
 public:
  explicit RemoteBackend(RemoteConfig config);

  std::vector<Prediction> segment(const PanoramicImage& image) override;
  std::string submit_training(std::uint32_t round, const nlohmann::json& document) override;
  JobStatus poll_training(const std::string& job_id) override;
  std::string name() const override { return config_.base_url; }

 private:
  RemoteConfig config_;

  nlohmann::json exchange(const std::string& method, const std::string& path,
                          const nlohmann::json* body);
};

// Wire encoding. Decoding throws Error{protocol_error} naming the field.
nlohmann::json prediction_to_json(const Prediction& p);
nlohmann::json predictions_to_json(const std::vector<Prediction>& ps);
std::vector<Prediction> predictions_from_wire(const nlohmann::json& payload);
JobStatus job_status_from_wire(const nlohmann::json& payload);
nlohmann::json job_status_to_wire(const JobStatus& status);

// ---------------------------------------------------------------------------
// Arrangement-order relabeling

struct ArrangementTemplate {
  /// Expected classes per quadrant from the midline outward.
  std::vector<ToothClass> sequence{ToothClass::incisor, ToothClass::incisor,
                                   ToothClass::canine,  ToothClass::molar1,
                                   ToothClass::molar1,  ToothClass::molar1,
                                   ToothClass::molar2,  ToothClass::molar3};
  double tau = 0.5;

  /// Throws Error{invalid_argument} on an empty sequence or tau outside [0, 1].
  void validate() const;
};

struct Quadrant {
  bool upper;
  bool left;
  /// 0 = closest to the vertical midline.
  std::size_t position;
};

/// Quadrant and midline order of every prediction. Jaws are separated by
/// two-means clustering of centroid y; left/right by W/2.
std::vector<Quadrant> arrange(const std::vector<Prediction>& predictions, double image_width);

/// Predictions below `tau` take the template class at their position;
/// everything else is returned unchanged.
std::vector<Prediction> arrangement_relabel(std::vector<Prediction> predictions,
                                            double image_width,
                                            const ArrangementTemplate& tmpl = {});

// ---------------------------------------------------------------------------
// Training rounds

struct TrainingRound {
  /// 1-based. Round 0 in the history is the untrained baseline.
  std::uint32_t number = 0;
  std::vector<InstanceId> samples;
  RoundStatus status = RoundStatus::submitted;
  std::string job_id;
  std::optional<MetricSet> metrics;
  std::string message;
};

nlohmann::json round_to_json(const TrainingRound& r);
TrainingRound round_from_json(const nlohmann::json& j);

/// One round in flight at a time. Completed rounds are numbered 1, 2, ...
/// without gaps; failed attempts are kept separately and free their number
/// for the next submission.
///
/// The store passed to submit/poll must be protected by the caller.
class TrainingCoordinator {
 public:
  /// Records the round 0 baseline in the history.
  void record_baseline(const MetricSet& metrics);

  /// Rejects with Error{conflict} (message names the running round) if one
  /// is in flight, Error{invalid_argument} for an empty list or a sample
  /// that is not selected for training, Error{not_found} for unknown ids.
  /// A backend failure marks the attempt failed and rethrows.
  TrainingRound submit(const AnnotationStore& store, std::vector<InstanceId> samples,
                       ModelBackend& backend);

  /// Polls the in-flight round once. On completion the samples are marked
  /// with the round number and its metrics enter the history.
  std::optional<TrainingRound> poll(AnnotationStore& store, ModelBackend& backend);

  /// Polls until the in-flight round leaves the running state or `timeout`.
  std::optional<TrainingRound> wait(AnnotationStore& store, ModelBackend& backend,
                                    std::chrono::milliseconds timeout,
                                    std::chrono::milliseconds interval = std::chrono::milliseconds(50));

  std::optional<TrainingRound> in_flight() const;
  std::vector<TrainingRound> rounds() const;
  std::vector<TrainingRound> failed_attempts() const;
  /// Completed or in-flight round by number; throws Error{not_found}.
  TrainingRound round(std::uint32_t number) const;
  EvalHistory history() const;
  /// Sum of samples over completed rounds.
  std::uint64_t samples_consumed() const;

  nlohmann::json to_json() const;
  static TrainingCoordinator from_json(const nlohmann::json& j);

  TrainingCoordinator() = default;
  TrainingCoordinator(const TrainingCoordinator& other);
  TrainingCoordinator& operator=(const TrainingCoordinator& other);

 private:
  mutable std::mutex mutex_;
  std::vector<TrainingRound> rounds_;
  std::vector<TrainingRound> failed_;
  std::optional<TrainingRound> in_flight_;
  EvalHistory history_;
};

}  // namespace toothloop
