#include "toothloop/workspace.hpp"

#include <algorithm>
#include <ctime>
#include <thread>

#include "toothloop/feature_json.hpp"

namespace toothloop {

using nlohmann::json;

std::string_view to_string(MarkerKind k) {
  switch (k) {
    case MarkerKind::train: return "train";
    case MarkerKind::new_: return "new";
    case MarkerKind::expert: return "expert";
  }
  return "unknown";
}

MarkerKind marker_kind(const ToothInstance& instance) {
  if (instance.selected_for_training) return MarkerKind::expert;
  if (instance.source == Source::model) return MarkerKind::new_;
  return MarkerKind::train;
}

std::vector<AnomalyEntry> rank_anomalies(std::vector<AnomalyEntry> entries) {
  std::sort(entries.begin(), entries.end(), [](const AnomalyEntry& a, const AnomalyEntry& b) {
    const auto na = a.deviation.non_near_count(), nb = b.deviation.non_near_count();
    if (na != nb) return na > nb;
    return a.id < b.id;
  });
  return entries;
}

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::unique_ptr<ModelBackend> make_backend(const WorkspaceConfig& config) {
  if (config.backend == "mock") return std::make_unique<MockBackend>(config.mock);
  if (config.backend.starts_with("http://") || config.backend.starts_with("https://")) {
    return std::make_unique<RemoteBackend>(
        RemoteConfig{.base_url = config.backend, .timeout = config.backend_timeout});
  }
  throw Error(ErrorCode::invalid_argument,
              "backend must be 'mock' or an http(s) URL, got '" + config.backend + "'");
}

json bbox_json(const std::array<std::uint32_t, 4>& b) {
  return {{"x0", b[0]}, {"y0", b[1]}, {"x1", b[2]}, {"y1", b[3]}};
}

}  // namespace

Workspace::Workspace(WorkspaceConfig config)
    : Workspace(config, make_backend(config)) {}

Workspace::Workspace(WorkspaceConfig config, std::unique_ptr<ModelBackend> backend)
    : config_(std::move(config)), backend_(std::move(backend)) {
  config_.arrangement.validate();
  if (!(config_.z_threshold > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "z threshold must be positive");
  }
  load();
}

Workspace::~Workspace() = default;

void Workspace::load() {
  std::unique_lock lock(state_);
  std::optional<json> snapshot;
  if (!config_.data_dir.empty()) {
    data_.emplace(config_.data_dir);
    snapshot = data_->read_snapshot();
  }
  if (snapshot) {
    try {
      store_ = AnnotationStore::from_snapshot(snapshot->at("store"));
      training_ = TrainingCoordinator::from_json(snapshot->at("training"));
      projection_counter_ = snapshot->at("projection_counter").get<std::uint64_t>();
      const json& p = snapshot->at("projection");
      if (!p.is_null()) {
        projection_ = std::make_shared<const Projection>(
            Projection{p.at("id").get<std::uint64_t>(), projection_from_json(p.at("model"))});
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::parse_error, std::string("invalid workspace snapshot: ") + e.what());
    }
    for (const EditRecord& record : data_->read_edits()) store_.replay(record);
  } else if (auto* mock = dynamic_cast<MockBackend*>(backend_.get())) {
    training_.record_baseline(mock->baseline());
  }
  if (auto* mock = dynamic_cast<MockBackend*>(backend_.get())) {
    mock->set_consumed(training_.samples_consumed());
  }
  if (data_ && !snapshot) persist_snapshot_locked();
}

std::mutex& Workspace::image_lock(ImageId id) {
  std::lock_guard lock(image_locks_mutex_);
  auto& slot = image_locks_[id];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

std::shared_ptr<const Workspace::Projection> Workspace::projection_snapshot() const {
  std::lock_guard lock(projection_mutex_);
  return projection_;
}

json Workspace::snapshot_json() const {
  auto p = projection_snapshot();
  std::uint64_t counter;
  {
    std::lock_guard lock(projection_mutex_);
    counter = projection_counter_;
  }
  return {{"format_version", kFormatVersion},
          {"store", store_.snapshot()},
          {"training", training_.to_json()},
          {"projection",
           p ? json{{"id", p->id}, {"model", projection_to_json(p->model)}} : json(nullptr)},
          {"projection_counter", counter}};
}

void Workspace::persist_snapshot_locked() {
  if (!data_) return;
  std::lock_guard lock(persist_mutex_);
  data_->write_snapshot(snapshot_json());
}

void Workspace::checkpoint() {
  std::shared_lock lock(state_);
  persist_snapshot_locked();
}

ImageId Workspace::image_of(InstanceId id) const {
  std::shared_lock lock(state_);
  return store_.instance(id).image_id;
}

// ---------------------------------------------------------------------------
// Features and statistics

std::optional<FeatureVector> Workspace::features_locked(const ToothInstance& instance) const {
  const PanoramicImage& image = store_.image(instance.image_id);
  {
    std::lock_guard lock(cache_mutex_);
    auto it = feature_cache_.find(instance.id);
    if (it != feature_cache_.end() && it->second.polygon == instance.polygon &&
        it->second.width == image.width && it->second.height == image.height) {
      return it->second.features;
    }
  }
  const BinaryMask mask = rasterize(instance.polygon, image.width, image.height);
  if (mask.empty()) return std::nullopt;
  FeatureVector v = extract_features(mask, image.width, image.height);
  std::lock_guard lock(cache_mutex_);
  feature_cache_[instance.id] = CachedFeature{instance.polygon, image.width, image.height, v};
  return v;
}

std::vector<LabeledFeature> Workspace::reviewed_pool_locked() const {
  std::vector<LabeledFeature> pool;
  for (const auto& [id, inst] : store_.instances()) {
    if (!inst.reviewed()) continue;
    if (auto f = features_locked(inst)) pool.push_back({*f, inst.cls});
  }
  return pool;
}

ClassStats Workspace::stats_locked() const {
  const std::uint64_t rev = store_.revision();
  {
    std::lock_guard lock(cache_mutex_);
    if (stats_cache_ && stats_cache_->first == rev) return stats_cache_->second;
  }
  std::vector<LabeledFeature> pool = reviewed_pool_locked();
  if (pool.empty()) {
    for (const auto& [id, inst] : store_.instances()) {
      if (auto f = features_locked(inst)) pool.push_back({*f, inst.cls});
    }
  }
  ClassStats stats = fit_class_stats(pool);
  std::lock_guard lock(cache_mutex_);
  stats_cache_ = std::pair{rev, stats};
  return stats;
}

json Workspace::instance_json_locked(const ToothInstance& instance) const {
  json j = instance_to_json(instance);
  j["kind"] = to_string(marker_kind(instance));
  return j;
}

// ---------------------------------------------------------------------------
// Reads

json Workspace::session() const {
  std::shared_lock lock(state_);
  auto p = projection_snapshot();
  auto running = training_.in_flight();
  return {{"revision", store_.revision()},
          {"projection_id", p ? json(p->id) : json(nullptr)},
          {"running_round", running ? json(running->number) : json(nullptr)},
          {"backend", backend_->name()}};
}

json Workspace::list_images() const {
  std::shared_lock lock(state_);
  json images = json::array();
  for (const auto& [id, image] : store_.images()) {
    json j = image_to_json(image);
    j["instance_count"] = store_.instances_of(id).size();
    images.push_back(std::move(j));
  }
  return {{"revision", store_.revision()}, {"images", std::move(images)}};
}

json Workspace::get_image(ImageId id) const {
  std::shared_lock lock(state_);
  json j = image_to_json(store_.image(id));
  j["instance_count"] = store_.instances_of(id).size();
  j["revision"] = store_.revision();
  return j;
}

json Workspace::image_instances(ImageId id) const {
  std::shared_lock lock(state_);
  store_.image(id);
  json list = json::array();
  for (InstanceId iid : store_.instances_of(id)) {
    list.push_back(instance_json_locked(store_.instance(iid)));
  }
  return {{"revision", store_.revision()}, {"image_id", id}, {"instances", std::move(list)}};
}

json Workspace::instance_features(InstanceId id) const {
  std::shared_lock lock(state_);
  const ToothInstance& inst = store_.instance(id);
  auto f = features_locked(inst);
  if (!f) {
    throw Error(ErrorCode::degenerate,
                "instance " + std::to_string(id) + " covers no pixels inside its image");
  }
  const ClassStats stats = stats_locked();
  const ClassSummary& summary = stats.of(inst.cls);
  return {{"revision", store_.revision()},
          {"id", id},
          {"image_id", inst.image_id},
          {"class", to_string(inst.cls)},
          {"features", features_to_json(*f)},
          {"deviation", deviation_to_json(classify_deviation(*f, stats, inst.cls,
                                                             config_.z_threshold))},
          {"z_threshold", config_.z_threshold},
          {"class_summary",
           {{"count", summary.count},
            {"mean", feature_values_to_json(summary.mean)},
            {"stddev", feature_values_to_json(summary.stddev)}}}};
}

json Workspace::similar(InstanceId id, std::size_t k) const {
  if (k < 1) throw Error(ErrorCode::invalid_argument, "k must be at least 1");
  auto p = projection_snapshot();
  if (!p) throw Error(ErrorCode::conflict, "projection has not been fitted");
  std::shared_lock lock(state_);
  const ToothInstance& query = store_.instance(id);
  auto qf = features_locked(query);
  if (!qf) {
    throw Error(ErrorCode::degenerate,
                "instance " + std::to_string(id) + " covers no pixels inside its image");
  }
  std::vector<LabeledPoint> labeled;
  for (const auto& [iid, inst] : store_.instances()) {
    if (iid == id || !inst.reviewed()) continue;
    if (auto f = features_locked(inst)) labeled.push_back({iid, project(p->model, *f)});
  }
  json neighbors = json::array();
  if (!labeled.empty()) {
    for (const Neighbor& n : nearest_neighbors(project(p->model, *qf), labeled, k)) {
      const ToothInstance& inst = store_.instance(n.id);
      const PanoramicImage& image = store_.image(inst.image_id);
      const auto box = rasterize(inst.polygon, image.width, image.height).bounding_box();
      neighbors.push_back({{"id", n.id},
                           {"distance", n.distance},
                           {"class", to_string(inst.cls)},
                           {"image_id", inst.image_id},
                           {"file_name", image.file_name},
                           {"bbox", box ? bbox_json(*box) : json(nullptr)}});
    }
  }
  return {{"revision", store_.revision()},
          {"projection_id", p->id},
          {"id", id},
          {"k", k},
          {"neighbors", std::move(neighbors)}};
}

json Workspace::projection() const {
  auto p = projection_snapshot();
  if (!p) throw Error(ErrorCode::conflict, "projection has not been fitted");
  std::shared_lock lock(state_);
  json points = json::array();
  for (const auto& [id, inst] : store_.instances()) {
    auto f = features_locked(inst);
    if (!f) continue;
    const Point2 xy = project(p->model, *f);
    points.push_back({{"id", id},
                      {"image_id", inst.image_id},
                      {"class", to_string(inst.cls)},
                      {"kind", to_string(marker_kind(inst))},
                      {"x", xy.x},
                      {"y", xy.y}});
  }
  json model = projection_to_json(p->model);
  return {{"revision", store_.revision()},
          {"projection_id", p->id},
          {"class_means", model["class_means"]},
          {"eigenvalues", model["eigenvalues"]},
          {"sample_count", p->model.sample_count},
          {"points", std::move(points)}};
}

json Workspace::training_round(std::uint32_t number) {
  auto running = training_.in_flight();
  if (running && running->number == number && running->status == RoundStatus::running) {
    std::unique_lock lock(state_);
    auto done = training_.poll(store_, *backend_);
    if (done && done->status != RoundStatus::running) persist_snapshot_locked();
  }
  std::shared_lock lock(state_);
  try {
    return {{"revision", store_.revision()}, {"round", round_to_json(training_.round(number))}};
  } catch (const Error& e) {
    if (e.code() != ErrorCode::not_found) throw;
    const auto failed = training_.failed_attempts();
    for (auto it = failed.rbegin(); it != failed.rend(); ++it) {
      if (it->number == number) {
        return {{"revision", store_.revision()}, {"round", round_to_json(*it)}};
      }
    }
    throw;
  }
}

json Workspace::eval_history() const {
  const EvalHistory h = training_.history();
  json reports = json::array();
  for (const auto& e : h.entries()) reports.push_back(report_to_json(e));
  return {{"csv", h.to_csv()}, {"series", h.series()}, {"reports", std::move(reports)}};
}

json Workspace::class_stats() const {
  std::shared_lock lock(state_);
  return {{"revision", store_.revision()},
          {"z_threshold", config_.z_threshold},
          {"classes", class_stats_to_json(stats_locked())}};
}

// ---------------------------------------------------------------------------
// Mutations

json Workspace::ingest(const json& document) {
  std::unique_lock lock(state_);
  const IngestReport report = store_.ingest(document);
  persist_snapshot_locked();
  json issues = json::array();
  for (const auto& issue : report.issues) {
    issues.push_back({{"annotation_id", issue.annotation_id ? json(*issue.annotation_id)
                                                            : json(nullptr)},
                      {"reason", issue.reason}});
  }
  return {{"revision", store_.revision()},
          {"images_added", report.images_added},
          {"instances_added", report.instances_added},
          {"issues", std::move(issues)}};
}

json Workspace::segment(ImageId id) {
  PanoramicImage image;
  {
    std::shared_lock lock(state_);
    image = store_.image(id);
  }
  std::lock_guard image_guard(image_lock(id));
  std::vector<Prediction> predictions = backend_->segment(image);
  if (config_.relabel) {
    predictions = arrangement_relabel(std::move(predictions), image.width, config_.arrangement);
  }

  std::unique_lock lock(state_);
  json removed = json::array();
  for (InstanceId iid : store_.instances_of(id)) {
    if (store_.instance(iid).source != Source::model) continue;
    store_.remove_instance(iid);
    removed.push_back(iid);
  }
  json added = json::array();
  for (const Prediction& p : predictions) {
    ToothInstance inst;
    inst.image_id = id;
    inst.cls = p.cls;
    inst.polygon = p.polygon;
    inst.source = Source::model;
    inst.confidence = p.confidence;
    const InstanceId iid = store_.add_instance(std::move(inst));
    added.push_back(instance_json_locked(store_.instance(iid)));
  }
  {
    std::lock_guard cache(cache_mutex_);
    for (const auto& r : removed) feature_cache_.erase(r.get<InstanceId>());
  }
  persist_snapshot_locked();
  return {{"revision", store_.revision()},
          {"image_id", id},
          {"removed", std::move(removed)},
          {"instances", std::move(added)}};
}

json Workspace::commit_edit(InstanceId id, EditKind kind, const std::string& actor) {
  const ImageId image = image_of(id);
  std::lock_guard image_guard(image_lock(image));
  std::unique_lock lock(state_);
  const ToothInstance& inst = store_.apply_edit(id, std::move(kind), actor, utc_now());
  if (data_) data_->append_edit(store_.log().back());
  {
    std::lock_guard cache(cache_mutex_);
    feature_cache_.erase(id);
  }
  return {{"revision", store_.revision()}, {"instance", instance_json_locked(inst)}};
}

json Workspace::edit_contour(InstanceId id, const json& body) {
  if (!body.is_object()) throw Error(ErrorCode::invalid_argument, "body must be an object");
  const std::string actor = body.value("actor", "expert");
  if (body.contains("polygon")) {
    return commit_edit(id, ReplacePolygon{polygon_from_json(body["polygon"])}, actor);
  }
  if (!body.contains("edits") || !body["edits"].is_array() || body["edits"].empty()) {
    throw Error(ErrorCode::invalid_argument, "body needs 'polygon' or a non-empty 'edits' list");
  }
  std::vector<MoveVertex> moves;
  try {
    for (const json& e : body["edits"]) {
      moves.push_back({e.at("index").get<std::size_t>(), e.at("x").get<double>(),
                       e.at("y").get<double>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_argument, std::string("invalid vertex edit: ") + e.what());
  }
  if (moves.size() == 1) return commit_edit(id, moves.front(), actor);

  // Several moves commit as one polygon replacement so intermediate shapes
  // never have to be valid on their own.
  std::vector<Point> vertices;
  {
    std::shared_lock lock(state_);
    vertices = store_.instance(id).polygon.vertices();
  }
  for (const MoveVertex& m : moves) {
    if (m.index >= vertices.size()) {
      throw Error(ErrorCode::invalid_argument,
                  "vertex index " + std::to_string(m.index) + " out of range");
    }
    vertices[m.index] = {m.x, m.y};
  }
  return commit_edit(id, ReplacePolygon{Polygon(std::move(vertices))}, actor);
}

json Workspace::set_label(InstanceId id, const std::string& class_name, const std::string& actor) {
  auto cls = map_class_name(class_name);
  if (!cls) {
    throw DetailedError(ErrorCode::invalid_argument, "unknown tooth class '" + class_name + "'",
                        {{"classes", class_list()}});
  }
  return commit_edit(id, SetLabel{*cls}, actor);
}

json Workspace::select(InstanceId id, bool selected, const std::string& actor) {
  return commit_edit(id, SelectForTraining{selected}, actor);
}

json Workspace::refit_projection() {
  std::shared_lock lock(state_);
  const std::vector<LabeledFeature> pool = reviewed_pool_locked();
  ProjectionModel model = fit_projection(pool, config_.epsilon);
  std::uint64_t id;
  {
    std::lock_guard guard(projection_mutex_);
    id = ++projection_counter_;
    projection_ = std::make_shared<const Projection>(Projection{id, std::move(model)});
  }
  persist_snapshot_locked();
  return {{"revision", store_.revision()},
          {"projection_id", id},
          {"sample_count", pool.size()}};
}

json Workspace::train(std::vector<InstanceId> samples) {
  TrainingRound round;
  {
    std::shared_lock lock(state_);
    if (samples.empty()) {
      for (const auto& [id, inst] : store_.instances()) {
        if (inst.selected_for_training && inst.created_round == 0) samples.push_back(id);
      }
    }
    if (samples.empty()) {
      throw DetailedError(ErrorCode::invalid_argument, "no samples selected for training",
                          {{"selected", 0}});
    }
    try {
      round = training_.submit(store_, samples, *backend_);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::conflict) throw;
      auto running = training_.in_flight();
      throw DetailedError(ErrorCode::conflict, e.what(),
                          {{"running_round", running ? json(running->number) : json(nullptr)}});
    }
  }

  const auto deadline = std::chrono::steady_clock::now() + config_.train_wait;
  for (;;) {
    {
      std::unique_lock lock(state_);
      auto current = training_.poll(store_, *backend_);
      if (current) round = *current;
      if (round.status != RoundStatus::running) {
        persist_snapshot_locked();
        break;
      }
    }
    if (std::chrono::steady_clock::now() >= deadline) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  if (round.status == RoundStatus::failed) {
    throw DetailedError(ErrorCode::transport_error, "training round failed: " + round.message,
                        {{"round", round_to_json(round)}});
  }
  std::shared_lock lock(state_);
  return {{"revision", store_.revision()}, {"round", round_to_json(round)}};
}

// ---------------------------------------------------------------------------
// Batch helpers

json Workspace::export_annotations(const InstanceFilter& filter,
                                   bool include_all_images) const {
  std::shared_lock lock(state_);
  return store_.export_annotations(filter, include_all_images);
}

std::vector<std::pair<ToothInstance, FeatureVector>> Workspace::all_features() const {
  std::shared_lock lock(state_);
  std::vector<std::pair<ToothInstance, FeatureVector>> out;
  for (const auto& [id, inst] : store_.instances()) {
    if (auto f = features_locked(inst)) out.emplace_back(inst, *f);
  }
  return out;
}

std::vector<AnomalyEntry> Workspace::anomalies(double z_threshold) const {
  auto p = projection_snapshot();
  std::shared_lock lock(state_);
  const ClassStats stats = stats_locked();
  std::vector<AnomalyEntry> entries;
  for (const auto& [id, inst] : store_.instances()) {
    auto f = features_locked(inst);
    if (!f) continue;
    AnomalyEntry e;
    e.id = id;
    e.cls = inst.cls;
    e.deviation = classify_deviation(*f, stats, inst.cls, z_threshold);
    if (p) e.projected = project(p->model, *f);
    entries.push_back(std::move(e));
  }
  return rank_anomalies(std::move(entries));
}

std::uint64_t Workspace::revision() const {
  std::shared_lock lock(state_);
  return store_.revision();
}

std::optional<ProjectionModel> Workspace::current_projection() const {
  auto p = projection_snapshot();
  if (!p) return std::nullopt;
  return p->model;
}

}  // namespace toothloop
