#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "toothloop/annotation_store.hpp"
#include "toothloop/features.hpp"
#include "toothloop/model_gateway.hpp"
#include "toothloop/persistence.hpp"

namespace toothloop {

/// Error with a machine-readable payload for the response body.
class DetailedError : public Error {
 public:
  DetailedError(ErrorCode code, const std::string& message, nlohmann::json details)
      : Error(code, message), details_(std::move(details)) {}
  const nlohmann::json& details() const noexcept { return details_; }

 private:
  nlohmann::json details_;
};

struct WorkspaceConfig {
  /// Empty: in-memory only.
  std::filesystem::path data_dir;
  /// "mock" or a backend base URL.
  std::string backend = "mock";
  MockConfig mock;
  std::chrono::milliseconds backend_timeout{10000};
  ArrangementTemplate arrangement;
  /// Apply the arrangement heuristic to fresh predictions.
  bool relabel = true;
  double z_threshold = 1.0;
  double epsilon = 1e-6;
  /// How long POST /api/train waits for the backend before answering 202.
  std::chrono::milliseconds train_wait{5000};
};

/// Marker kind of a projected point.
enum class MarkerKind { train, new_, expert };
std::string_view to_string(MarkerKind k);
MarkerKind marker_kind(const ToothInstance& instance);

struct AnomalyEntry {
  InstanceId id = 0;
  ToothClass cls = ToothClass::incisor;
  DeviationReport deviation;
  std::optional<Point2> projected;
};

/// Sorted by non-near count, descending, then by id.
std::vector<AnomalyEntry> rank_anomalies(std::vector<AnomalyEntry> entries);

/// Everything the service exposes, behind one object.
///
/// Readers take a shared lock; writers take a per-image mutex (so slow work
/// such as a backend call for one image does not block other images) and an
/// exclusive lock only to commit. Committed edits go to the edit log before
/// the call returns; structural changes (ingest, segmentation, training,
/// refit) write a fresh snapshot.
class Workspace {
 public:
  explicit Workspace(WorkspaceConfig config);
  /// Uses `backend` instead of the one named in the config.
  Workspace(WorkspaceConfig config, std::unique_ptr<ModelBackend> backend);
  ~Workspace();

  Workspace(const Workspace&) = delete;
  Workspace& operator=(const Workspace&) = delete;

  const WorkspaceConfig& config() const { return config_; }
  ModelBackend& backend() { return *backend_; }

  // Reads. Each returns a JSON body.
  nlohmann::json session() const;
  nlohmann::json list_images() const;
  nlohmann::json get_image(ImageId id) const;
  nlohmann::json image_instances(ImageId id) const;
  nlohmann::json instance_features(InstanceId id) const;
  nlohmann::json similar(InstanceId id, std::size_t k) const;
  nlohmann::json projection() const;
  nlohmann::json training_round(std::uint32_t number);
  nlohmann::json eval_history() const;
  nlohmann::json class_stats() const;

  // Mutations. Each response carries "revision".
  nlohmann::json ingest(const nlohmann::json& document);
  nlohmann::json segment(ImageId id);
  /// Body: {"edits": [{"index", "x", "y"}, ...]} or {"polygon": [...]}.
  nlohmann::json edit_contour(InstanceId id, const nlohmann::json& body);
  nlohmann::json set_label(InstanceId id, const std::string& class_name,
                           const std::string& actor = "expert");
  nlohmann::json select(InstanceId id, bool selected, const std::string& actor = "expert");
  nlohmann::json refit_projection();
  /// Empty `samples`: every selected instance not consumed by a round yet.
  nlohmann::json train(std::vector<InstanceId> samples);

  // Batch helpers used by the CLI.
  nlohmann::json export_annotations(const InstanceFilter& filter,
                                    bool include_all_images = false) const;
  /// One row per instance, ordered by id; instances whose mask is empty
  /// inside the image frame are skipped.
  std::vector<std::pair<ToothInstance, FeatureVector>> all_features() const;
  std::vector<AnomalyEntry> anomalies(double z_threshold) const;
  std::uint64_t revision() const;
  std::optional<ProjectionModel> current_projection() const;

  /// Writes a snapshot now (no-op when in-memory).
  void checkpoint();

 private:
  struct Projection {
    std::uint64_t id = 0;
    ProjectionModel model;
  };
  struct CachedFeature {
    Polygon polygon;
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    FeatureVector features;
  };

  WorkspaceConfig config_;
  std::unique_ptr<ModelBackend> backend_;
  std::optional<DataDirectory> data_;
  std::mutex persist_mutex_;

  mutable std::shared_mutex state_;
  AnnotationStore store_;
  TrainingCoordinator training_;

  std::mutex image_locks_mutex_;
  std::map<ImageId, std::unique_ptr<std::mutex>> image_locks_;

  mutable std::mutex projection_mutex_;
  std::shared_ptr<const Projection> projection_;
  std::uint64_t projection_counter_ = 0;

  mutable std::mutex cache_mutex_;
  mutable std::map<InstanceId, CachedFeature> feature_cache_;
  mutable std::optional<std::pair<std::uint64_t, ClassStats>> stats_cache_;

  void load();
  std::mutex& image_lock(ImageId id);
  std::shared_ptr<const Projection> projection_snapshot() const;
  nlohmann::json snapshot_json() const;
  void persist_snapshot_locked();
  nlohmann::json commit_edit(InstanceId id, EditKind kind, const std::string& actor);
  ImageId image_of(InstanceId id) const;

  // Callers hold `state_` (shared or exclusive).
  std::optional<FeatureVector> features_locked(const ToothInstance& instance) const;
  ClassStats stats_locked() const;
  std::vector<LabeledFeature> reviewed_pool_locked() const;
  nlohmann::json instance_json_locked(const ToothInstance& instance) const;
};

}  // namespace toothloop
