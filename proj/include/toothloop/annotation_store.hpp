#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "toothloop/mask_core.hpp"
#include "toothloop/tooth_class.hpp"

namespace toothloop {

using ImageId = std::uint64_t;
using InstanceId = std::uint64_t;

/// Version stamped into snapshots, edit-log lines and exported documents.
inline constexpr int kFormatVersion = 1;

enum class Source { ground_truth, model, corrected };

std::string_view to_string(Source s);
std::optional<Source> parse_source(std::string_view name);

struct PanoramicImage {
  ImageId id = 0;
  std::string file_name;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  /// Display-only view state; never used by feature math.
  double contrast = 1.0;

  friend bool operator==(const PanoramicImage&, const PanoramicImage&) = default;
};

/// What the segmentation backend originally said about an instance that an
/// expert later corrected.
struct ModelOrigin {
  ToothClass cls = ToothClass::incisor;
  Polygon polygon;
  std::optional<double> confidence;

  friend bool operator==(const ModelOrigin&, const ModelOrigin&) = default;
};

struct ToothInstance {
  InstanceId id = 0;
  ImageId image_id = 0;
  ToothClass cls = ToothClass::incisor;
  Polygon polygon;
  Source source = Source::ground_truth;
  std::optional<double> confidence;
  bool selected_for_training = false;
  /// Training round that consumed this sample; 0 when never fed back.
  std::uint32_t created_round = 0;
  std::optional<ModelOrigin> origin;

  /// Reviewed instances are the ones an expert vouches for.
  bool reviewed() const { return source != Source::model; }

  friend bool operator==(const ToothInstance&, const ToothInstance&) = default;
};

struct MoveVertex {
  std::size_t index = 0;
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const MoveVertex&, const MoveVertex&) = default;
};
struct SetLabel {
  ToothClass cls = ToothClass::incisor;
  friend bool operator==(const SetLabel&, const SetLabel&) = default;
};
struct ReplacePolygon {
  Polygon polygon;
  friend bool operator==(const ReplacePolygon&, const ReplacePolygon&) = default;
};
struct SelectForTraining {
  bool selected = true;
  friend bool operator==(const SelectForTraining&, const SelectForTraining&) = default;
};

using EditKind = std::variant<MoveVertex, SetLabel, ReplacePolygon, SelectForTraining>;

struct EditRecord {
  std::uint64_t sequence = 0;
  InstanceId instance_id = 0;
  EditKind kind;
  std::string actor;
  std::string timestamp;

  friend bool operator==(const EditRecord&, const EditRecord&) = default;
};

struct IngestIssue {
  std::optional<std::uint64_t> annotation_id;
  std::string reason;
};

struct IngestReport {
  std::vector<ImageId> images_added;
  std::vector<InstanceId> instances_added;
  std::vector<IngestIssue> issues;
};

using InstanceFilter = std::function<bool(const ToothInstance&)>;

namespace filters {
InstanceFilter all();
InstanceFilter selected();
InstanceFilter reviewed();
InstanceFilter source(Source s);
/// Parses "all", "selected", "reviewed", "ground_truth", "model",
/// "corrected"; nullopt otherwise.
std::optional<InstanceFilter> parse(std::string_view name);
}  // namespace filters

/// In-memory dataset with an append-only edit log.
///
/// Not internally synchronized: callers serialize writers (the service does
/// this per image) and keep readers off while a write commits.
class AnnotationStore {
 public:
  /// Parses `text` as JSON first; malformed input throws
  /// Error{parse_error} naming line and column.
  IngestReport ingest_text(std::string_view text);
  IngestReport ingest(const nlohmann::json& document);

  /// Deterministic interchange document: images and annotations ordered by
  /// id, all five categories listed. With the `all` filter every image is
  /// emitted, otherwise only images referenced by exported annotations.
  nlohmann::json export_annotations(const InstanceFilter& filter,
                                    bool include_all_images = false) const;

  ImageId add_image(PanoramicImage image);
  /// Assigns a fresh id (ignores `instance.id`).
  InstanceId add_instance(ToothInstance instance);
  void remove_instance(InstanceId id);
  void set_contrast(ImageId id, double contrast);

  /// Validates and applies one edit, appending it to the log with the next
  /// sequence number. Throws without changing state when the edit is
  /// invalid.
  const ToothInstance& apply_edit(InstanceId id, EditKind kind,
                                  std::string actor = {},
                                  std::string timestamp = {});

  /// Records that a training round consumed the given samples.
  void mark_round(const std::vector<InstanceId>& ids, std::uint32_t round);

  const PanoramicImage& image(ImageId id) const;
  const ToothInstance& instance(InstanceId id) const;
  bool has_image(ImageId id) const { return images_.contains(id); }
  bool has_instance(InstanceId id) const { return instances_.contains(id); }

  const std::map<ImageId, PanoramicImage>& images() const { return images_; }
  const std::map<InstanceId, ToothInstance>& instances() const { return instances_; }
  std::vector<InstanceId> instances_of(ImageId image) const;

  const std::vector<EditRecord>& log() const { return log_; }
  std::uint64_t revision() const { return revision_; }
  std::uint64_t last_sequence() const { return last_sequence_; }

  /// Full state, including revision and id counters, without the log.
  nlohmann::json snapshot() const;
  static AnnotationStore from_snapshot(const nlohmann::json& snapshot);

  /// Re-applies a logged edit. Records at or below `last_sequence()` are
  /// skipped, gaps are an error.
  void replay(const EditRecord& record);

  /// Dataset content equality (images and instances), ignoring revision,
  /// id counters and the log.
  bool same_dataset(const AnnotationStore& other) const;

 private:
  std::map<ImageId, PanoramicImage> images_;
  std::map<InstanceId, ToothInstance> instances_;
  std::vector<EditRecord> log_;
  std::uint64_t revision_ = 0;
  std::uint64_t last_sequence_ = 0;
  ImageId next_image_id_ = 1;
  InstanceId next_instance_id_ = 1;

  ToothInstance edited_copy(const ToothInstance& current, const EditKind& kind) const;
};

// JSON forms shared by snapshots, the edit log and the service.
nlohmann::json polygon_to_json(const Polygon& polygon);
/// Accepts a flat [x0, y0, x1, y1, ...] list or a list of such lists (the
/// first ring is used).
Polygon polygon_from_json(const nlohmann::json& j);

nlohmann::json instance_to_json(const ToothInstance& instance);
ToothInstance instance_from_json(const nlohmann::json& j);
nlohmann::json image_to_json(const PanoramicImage& image);
PanoramicImage image_from_json(const nlohmann::json& j);

nlohmann::json edit_to_json(const EditRecord& record);
EditRecord edit_from_json(const nlohmann::json& j);

/// Parses JSON text, converting library errors to Error{parse_error} with a
/// "line L, column C" location.
nlohmann::json parse_json(std::string_view text);

}  // namespace toothloop
