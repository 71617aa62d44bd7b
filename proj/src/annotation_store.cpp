#include "toothloop/annotation_store.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace toothloop {

using nlohmann::json;

std::string_view to_string(Source s) {
  switch (s) {
    case Source::ground_truth: return "ground_truth";
    case Source::model: return "model";
    case Source::corrected: return "corrected";
  }
  return "ground_truth";
}

std::optional<Source> parse_source(std::string_view name) {
  for (Source s : {Source::ground_truth, Source::model, Source::corrected}) {
    if (to_string(s) == name) return s;
  }
  return std::nullopt;
}

namespace filters {
InstanceFilter all() {
  return [](const ToothInstance&) { return true; };
}
InstanceFilter selected() {
  return [](const ToothInstance& i) { return i.selected_for_training; };
}
InstanceFilter reviewed() {
  return [](const ToothInstance& i) { return i.reviewed(); };
}
InstanceFilter source(Source s) {
  return [s](const ToothInstance& i) { return i.source == s; };
}
std::optional<InstanceFilter> parse(std::string_view name) {
  if (name == "all") return all();
  if (name == "selected") return selected();
  if (name == "reviewed") return reviewed();
  if (auto s = parse_source(name)) return source(*s);
  return std::nullopt;
}
}  // namespace filters

// ---------------------------------------------------------------------------
// JSON forms

json parse_json(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    // e.byte is 1-based and points just past the offending character.
    std::size_t line = 1, column = 1;
    const std::size_t stop = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < stop; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw Error(ErrorCode::parse_error, "line " + std::to_string(line) +
                                            ", column " + std::to_string(column) +
                                            ": " + e.what());
  }
}

json polygon_to_json(const Polygon& polygon) {
  json flat = json::array();
  for (const Point& p : polygon.vertices()) {
    flat.push_back(p.x);
    flat.push_back(p.y);
  }
  return flat;
}

Polygon polygon_from_json(const json& j) {
  const json* ring = &j;
  if (j.is_array() && !j.empty() && j.front().is_array()) ring = &j.front();
  if (!ring->is_array() || ring->size() % 2 != 0) {
    throw Error(ErrorCode::invalid_argument,
                "segmentation must be a flat list of x,y pairs");
  }
  std::vector<Point> vertices;
  for (std::size_t i = 0; i < ring->size(); i += 2) {
    const json& x = (*ring)[i];
    const json& y = (*ring)[i + 1];
    if (!x.is_number() || !y.is_number()) {
      throw Error(ErrorCode::invalid_argument, "segmentation coordinates must be numbers");
    }
    vertices.push_back({x.get<double>(), y.get<double>()});
  }
  return Polygon(std::move(vertices));
}

namespace {

template <typename T>
T require(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    throw Error(ErrorCode::invalid_argument, std::string("missing field '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::invalid_argument, std::string("field '") + key + "' has the wrong type");
  }
}

ToothClass require_class(const json& j, const char* key) {
  const auto name = require<std::string>(j, key);
  auto cls = parse_class(name);
  if (!cls) throw Error(ErrorCode::invalid_argument, "unknown class '" + name + "'");
  return *cls;
}

std::optional<double> optional_confidence(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  const json& v = j.at(key);
  if (!v.is_number()) {
    throw Error(ErrorCode::invalid_argument, std::string("field '") + key + "' must be a number");
  }
  const double c = v.get<double>();
  if (!(c >= 0.0 && c <= 1.0)) {
    throw Error(ErrorCode::invalid_argument, std::string("field '") + key + "' must lie in [0, 1]");
  }
  return c;
}

json origin_to_json(const ModelOrigin& o) {
  json j{{"class", to_string(o.cls)}, {"polygon", polygon_to_json(o.polygon)}};
  if (o.confidence) j["confidence"] = *o.confidence;
  return j;
}

ModelOrigin origin_from_json(const json& j) {
  ModelOrigin o;
  o.cls = require_class(j, "class");
  o.polygon = polygon_from_json(require<json>(j, "polygon"));
  o.confidence = optional_confidence(j, "confidence");
  return o;
}

std::uint64_t category_id(ToothClass c) { return index_of(c) + 1; }

}  // namespace

json instance_to_json(const ToothInstance& i) {
  json j{{"id", i.id},
         {"image_id", i.image_id},
         {"class", to_string(i.cls)},
         {"polygon", polygon_to_json(i.polygon)},
         {"source", to_string(i.source)},
         {"selected_for_training", i.selected_for_training},
         {"created_round", i.created_round}};
  if (i.confidence) j["confidence"] = *i.confidence;
  if (i.origin) j["origin"] = origin_to_json(*i.origin);
  return j;
}

ToothInstance instance_from_json(const json& j) {
  ToothInstance i;
  i.id = require<std::uint64_t>(j, "id");
  i.image_id = require<std::uint64_t>(j, "image_id");
  i.cls = require_class(j, "class");
  i.polygon = polygon_from_json(require<json>(j, "polygon"));
  const auto source = require<std::string>(j, "source");
  auto parsed = parse_source(source);
  if (!parsed) throw Error(ErrorCode::invalid_argument, "unknown source '" + source + "'");
  i.source = *parsed;
  i.selected_for_training = require<bool>(j, "selected_for_training");
  i.created_round = require<std::uint32_t>(j, "created_round");
  i.confidence = optional_confidence(j, "confidence");
  if (j.contains("origin")) i.origin = origin_from_json(j.at("origin"));
  return i;
}

json image_to_json(const PanoramicImage& image) {
  return {{"id", image.id},
          {"file_name", image.file_name},
          {"width", image.width},
          {"height", image.height},
          {"contrast", image.contrast}};
}

PanoramicImage image_from_json(const json& j) {
  PanoramicImage image;
  image.id = require<std::uint64_t>(j, "id");
  image.file_name = j.contains("file_name") ? require<std::string>(j, "file_name") : "";
  image.width = require<std::uint32_t>(j, "width");
  image.height = require<std::uint32_t>(j, "height");
  if (image.width < 1 || image.height < 1 || image.width > BinaryMask::kMaxSide ||
      image.height > BinaryMask::kMaxSide) {
    throw Error(ErrorCode::invalid_argument,
                "image dimensions must be within 1.." + std::to_string(BinaryMask::kMaxSide));
  }
  if (j.contains("contrast")) {
    image.contrast = require<double>(j, "contrast");
    if (!(image.contrast >= 0.25 && image.contrast <= 4.0)) {
      throw Error(ErrorCode::invalid_argument, "contrast must lie in [0.25, 4]");
    }
  }
  return image;
}

json edit_to_json(const EditRecord& r) {
  json j{{"format_version", kFormatVersion},
         {"sequence", r.sequence},
         {"instance_id", r.instance_id},
         {"actor", r.actor},
         {"timestamp", r.timestamp}};
  std::visit(
      [&j](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, MoveVertex>) {
          j["kind"] = "move_vertex";
          j["index"] = k.index;
          j["x"] = k.x;
          j["y"] = k.y;
        } else if constexpr (std::is_same_v<K, SetLabel>) {
          j["kind"] = "set_label";
          j["class"] = to_string(k.cls);
        } else if constexpr (std::is_same_v<K, ReplacePolygon>) {
          j["kind"] = "replace_polygon";
          j["polygon"] = polygon_to_json(k.polygon);
        } else {
          j["kind"] = "select";
          j["selected"] = k.selected;
        }
      },
      r.kind);
  return j;
}

EditRecord edit_from_json(const json& j) {
  const int version = require<int>(j, "format_version");
  if (version != kFormatVersion) {
    throw Error(ErrorCode::parse_error, "unsupported edit-log format version " +
                                            std::to_string(version));
  }
  EditRecord r;
  r.sequence = require<std::uint64_t>(j, "sequence");
  r.instance_id = require<std::uint64_t>(j, "instance_id");
  r.actor = require<std::string>(j, "actor");
  r.timestamp = require<std::string>(j, "timestamp");
  const auto kind = require<std::string>(j, "kind");
  if (kind == "move_vertex") {
    r.kind = MoveVertex{require<std::size_t>(j, "index"), require<double>(j, "x"),
                        require<double>(j, "y")};
  } else if (kind == "set_label") {
    r.kind = SetLabel{require_class(j, "class")};
  } else if (kind == "replace_polygon") {
    r.kind = ReplacePolygon{polygon_from_json(require<json>(j, "polygon"))};
  } else if (kind == "select") {
    r.kind = SelectForTraining{require<bool>(j, "selected")};
  } else {
    throw Error(ErrorCode::parse_error, "unknown edit kind '" + kind + "'");
  }
  return r;
}

// ---------------------------------------------------------------------------
// Ingest / export

IngestReport AnnotationStore::ingest_text(std::string_view text) {
  return ingest(parse_json(text));
}

IngestReport AnnotationStore::ingest(const json& doc) {
  if (!doc.is_object()) {
    throw Error(ErrorCode::parse_error, "annotation document must be a JSON object");
  }
  for (const char* key : {"images", "annotations", "categories"}) {
    if (!doc.contains(key) || !doc.at(key).is_array()) {
      throw Error(ErrorCode::parse_error, std::string("document needs a '") + key + "' array");
    }
  }

  IngestReport report;

  std::map<std::uint64_t, std::string> category_names;
  for (const json& c : doc.at("categories")) {
    try {
      category_names[require<std::uint64_t>(c, "id")] = require<std::string>(c, "name");
    } catch (const Error& e) {
      report.issues.push_back({std::nullopt, std::string("category skipped: ") + e.what()});
    }
  }

  for (const json& j : doc.at("images")) {
    try {
      PanoramicImage image = image_from_json(j);
      if (auto it = images_.find(image.id); it != images_.end()) {
        if (it->second.width != image.width || it->second.height != image.height) {
          report.issues.push_back({std::nullopt, "image " + std::to_string(image.id) +
                                                     " conflicts with an existing image"});
        }
        continue;
      }
      next_image_id_ = std::max(next_image_id_, image.id + 1);
      report.images_added.push_back(image.id);
      images_.emplace(image.id, std::move(image));
    } catch (const Error& e) {
      report.issues.push_back({std::nullopt, std::string("image skipped: ") + e.what()});
    }
  }

  for (const json& a : doc.at("annotations")) {
    std::optional<std::uint64_t> ann_id;
    if (a.is_object() && a.contains("id") && a.at("id").is_number_unsigned()) {
      ann_id = a.at("id").get<std::uint64_t>();
    }
    try {
      ToothInstance inst;
      inst.image_id = require<std::uint64_t>(a, "image_id");
      if (!images_.contains(inst.image_id)) {
        throw Error(ErrorCode::not_found,
                    "references missing image " + std::to_string(inst.image_id));
      }
      const auto cat = require<std::uint64_t>(a, "category_id");
      auto name = category_names.find(cat);
      if (name == category_names.end()) {
        throw Error(ErrorCode::invalid_argument, "unknown category id " + std::to_string(cat));
      }
      auto cls = map_class_name(name->second);
      if (!cls) {
        throw Error(ErrorCode::invalid_argument,
                    "unmapped category '" + name->second + "'");
      }
      inst.cls = *cls;
      inst.polygon = polygon_from_json(require<json>(a, "segmentation"));
      inst.confidence = optional_confidence(a, "score");
      if (a.contains("source")) {
        const auto s = require<std::string>(a, "source");
        auto parsed = parse_source(s);
        if (!parsed) throw Error(ErrorCode::invalid_argument, "unknown source '" + s + "'");
        inst.source = *parsed;
      } else {
        inst.source = inst.confidence ? Source::model : Source::ground_truth;
      }
      if (a.contains("created_round")) inst.created_round = require<std::uint32_t>(a, "created_round");
      if (a.contains("origin")) inst.origin = origin_from_json(a.at("origin"));
      if (a.contains("selected_for_training")) {
        inst.selected_for_training = require<bool>(a, "selected_for_training");
        if (inst.selected_for_training && !inst.reviewed()) {
          inst.selected_for_training = false;
          report.issues.push_back(
              {ann_id, "selection flag dropped: model output cannot be selected for training"});
        }
      }
      if (ann_id) {
        if (instances_.contains(*ann_id)) {
          throw Error(ErrorCode::conflict, "duplicate annotation id");
        }
        inst.id = *ann_id;
      } else {
        inst.id = next_instance_id_;
      }
      next_instance_id_ = std::max(next_instance_id_, inst.id + 1);
      report.instances_added.push_back(inst.id);
      instances_.emplace(inst.id, std::move(inst));
    } catch (const Error& e) {
      report.issues.push_back({ann_id, e.what()});
    }
  }

  if (!report.images_added.empty() || !report.instances_added.empty()) ++revision_;
  return report;
}

json AnnotationStore::export_annotations(const InstanceFilter& filter,
                                         bool include_all_images) const {
  json doc;
  doc["info"] = {{"format_version", kFormatVersion}};
  json categories = json::array();
  for (ToothClass c : kAllClasses) {
    categories.push_back({{"id", category_id(c)}, {"name", to_string(c)}});
  }
  std::set<ImageId> referenced;
  json annotations = json::array();
  for (const auto& [id, inst] : instances_) {
    if (!filter(inst)) continue;
    referenced.insert(inst.image_id);
    json a{{"id", id},
           {"image_id", inst.image_id},
           {"category_id", category_id(inst.cls)},
           {"segmentation", polygon_to_json(inst.polygon)},
           {"source", to_string(inst.source)},
           {"selected_for_training", inst.selected_for_training},
           {"created_round", inst.created_round}};
    if (inst.confidence) a["score"] = *inst.confidence;
    if (inst.origin) a["origin"] = origin_to_json(*inst.origin);
    annotations.push_back(std::move(a));
  }
  json images = json::array();
  for (const auto& [id, image] : images_) {
    if (include_all_images || referenced.contains(id)) images.push_back(image_to_json(image));
  }
  doc["images"] = std::move(images);
  doc["categories"] = std::move(categories);
  doc["annotations"] = std::move(annotations);
  return doc;
}

// ---------------------------------------------------------------------------
// Mutations

ImageId AnnotationStore::add_image(PanoramicImage image) {
  if (image.id == 0) image.id = next_image_id_;
  if (images_.contains(image.id)) {
    throw Error(ErrorCode::conflict, "image " + std::to_string(image.id) + " already exists");
  }
  image_from_json(image_to_json(image));  // validates dimensions and contrast
  next_image_id_ = std::max(next_image_id_, image.id + 1);
  const ImageId id = image.id;
  images_.emplace(id, std::move(image));
  ++revision_;
  return id;
}

InstanceId AnnotationStore::add_instance(ToothInstance instance) {
  if (!images_.contains(instance.image_id)) {
    throw Error(ErrorCode::not_found, "image " + std::to_string(instance.image_id) + " not found");
  }
  if (instance.selected_for_training && !instance.reviewed()) {
    throw Error(ErrorCode::invalid_argument, "model output cannot be selected for training");
  }
  instance.id = next_instance_id_++;
  const InstanceId id = instance.id;
  instances_.emplace(id, std::move(instance));
  ++revision_;
  return id;
}

void AnnotationStore::remove_instance(InstanceId id) {
  if (instances_.erase(id) == 0) {
    throw Error(ErrorCode::not_found, "instance " + std::to_string(id) + " not found");
  }
  ++revision_;
}

void AnnotationStore::set_contrast(ImageId id, double contrast) {
  auto it = images_.find(id);
  if (it == images_.end()) {
    throw Error(ErrorCode::not_found, "image " + std::to_string(id) + " not found");
  }
  if (!(contrast >= 0.25 && contrast <= 4.0)) {
    throw Error(ErrorCode::invalid_argument, "contrast must lie in [0.25, 4]");
  }
  it->second.contrast = contrast;
  ++revision_;
}

ToothInstance AnnotationStore::edited_copy(const ToothInstance& current,
                                           const EditKind& kind) const {
  ToothInstance next = current;
  bool content_edit = false;
  std::visit(
      [&](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, MoveVertex>) {
          if (k.index >= current.polygon.size()) {
            throw Error(ErrorCode::invalid_argument,
                        "vertex index " + std::to_string(k.index) + " out of range");
          }
          auto vertices = current.polygon.vertices();
          vertices[k.index] = {k.x, k.y};
          if (auto problem = Polygon::validate(vertices); !problem.empty()) {
            throw Error(ErrorCode::invalid_argument, "edit rejected: " + problem);
          }
          next.polygon = Polygon(std::move(vertices));
          content_edit = true;
        } else if constexpr (std::is_same_v<K, SetLabel>) {
          next.cls = k.cls;
          content_edit = true;
        } else if constexpr (std::is_same_v<K, ReplacePolygon>) {
          next.polygon = k.polygon;
          content_edit = true;
        } else {
          if (k.selected && !current.reviewed()) {
            throw Error(ErrorCode::invalid_argument,
                        "model output must be reviewed before it can be selected for training");
          }
          next.selected_for_training = k.selected;
        }
      },
      kind);
  if (content_edit && current.source == Source::model) {
    next.origin = ModelOrigin{current.cls, current.polygon, current.confidence};
    next.source = Source::corrected;
    next.confidence.reset();
  }
  return next;
}

const ToothInstance& AnnotationStore::apply_edit(InstanceId id, EditKind kind,
                                                 std::string actor,
                                                 std::string timestamp) {
  auto it = instances_.find(id);
  if (it == instances_.end()) {
    throw Error(ErrorCode::not_found, "instance " + std::to_string(id) + " not found");
  }
  ToothInstance next = edited_copy(it->second, kind);
  it->second = std::move(next);
  log_.push_back({++last_sequence_, id, std::move(kind), std::move(actor), std::move(timestamp)});
  ++revision_;
  return it->second;
}

void AnnotationStore::replay(const EditRecord& record) {
  if (record.sequence <= last_sequence_) return;
  if (record.sequence != last_sequence_ + 1) {
    throw Error(ErrorCode::parse_error, "edit log gap: expected sequence " +
                                            std::to_string(last_sequence_ + 1) + ", found " +
                                            std::to_string(record.sequence));
  }
  apply_edit(record.instance_id, record.kind, record.actor, record.timestamp);
}

void AnnotationStore::mark_round(const std::vector<InstanceId>& ids, std::uint32_t round) {
  for (InstanceId id : ids) {
    if (!instances_.contains(id)) {
      throw Error(ErrorCode::not_found, "instance " + std::to_string(id) + " not found");
    }
  }
  for (InstanceId id : ids) instances_.at(id).created_round = round;
  ++revision_;
}

// ---------------------------------------------------------------------------
// Queries and persistence

const PanoramicImage& AnnotationStore::image(ImageId id) const {
  auto it = images_.find(id);
  if (it == images_.end()) {
    throw Error(ErrorCode::not_found, "image " + std::to_string(id) + " not found");
  }
  return it->second;
}

const ToothInstance& AnnotationStore::instance(InstanceId id) const {
  auto it = instances_.find(id);
  if (it == instances_.end()) {
    throw Error(ErrorCode::not_found, "instance " + std::to_string(id) + " not found");
  }
  return it->second;
}

std::vector<InstanceId> AnnotationStore::instances_of(ImageId image) const {
  std::vector<InstanceId> out;
  for (const auto& [id, inst] : instances_) {
    if (inst.image_id == image) out.push_back(id);
  }
  return out;
}

json AnnotationStore::snapshot() const {
  json images = json::array();
  for (const auto& [id, image] : images_) images.push_back(image_to_json(image));
  json instances = json::array();
  for (const auto& [id, inst] : instances_) instances.push_back(instance_to_json(inst));
  return {{"format_version", kFormatVersion},
          {"revision", revision_},
          {"last_sequence", last_sequence_},
          {"next_image_id", next_image_id_},
          {"next_instance_id", next_instance_id_},
          {"images", std::move(images)},
          {"instances", std::move(instances)}};
}

AnnotationStore AnnotationStore::from_snapshot(const json& snapshot) {
  try {
    const int version = require<int>(snapshot, "format_version");
    if (version != kFormatVersion) {
      throw Error(ErrorCode::parse_error,
                  "unsupported snapshot format version " + std::to_string(version));
    }
    AnnotationStore store;
    store.revision_ = require<std::uint64_t>(snapshot, "revision");
    store.last_sequence_ = require<std::uint64_t>(snapshot, "last_sequence");
    store.next_image_id_ = require<std::uint64_t>(snapshot, "next_image_id");
    store.next_instance_id_ = require<std::uint64_t>(snapshot, "next_instance_id");
    for (const json& j : require<json>(snapshot, "images")) {
      auto image = image_from_json(j);
      store.images_.emplace(image.id, std::move(image));
    }
    for (const json& j : require<json>(snapshot, "instances")) {
      auto inst = instance_from_json(j);
      store.instances_.emplace(inst.id, std::move(inst));
    }
    return store;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::parse_error) throw;
    throw Error(ErrorCode::parse_error, std::string("invalid snapshot: ") + e.what());
  }
}

bool AnnotationStore::same_dataset(const AnnotationStore& other) const {
  return images_ == other.images_ && instances_ == other.instances_;
}

}  // namespace toothloop
