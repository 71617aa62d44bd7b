#include "toothloop/model_gateway.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <thread>

namespace toothloop {

using nlohmann::json;

std::string_view to_string(RoundStatus s) {
  switch (s) {
    case RoundStatus::submitted: return "submitted";
    case RoundStatus::running: return "running";
    case RoundStatus::done: return "done";
    case RoundStatus::failed: return "failed";
  }
  return "unknown";
}

std::optional<RoundStatus> parse_round_status(std::string_view name) {
  for (auto s : {RoundStatus::submitted, RoundStatus::running, RoundStatus::done,
                 RoundStatus::failed}) {
    if (name == to_string(s)) return s;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Mock

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// std distributions are implementation-defined; this mapping is not.
double unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double jitter(std::mt19937_64& rng) { return 2.0 * unit(rng) - 1.0; }

double round_to(double v, double step) { return std::round(v / step) * step; }

struct ToothShape {
  double width;   // fraction of W
  double height;  // fraction of H
};

ToothShape shape_of(ToothClass c) {
  switch (c) {
    case ToothClass::incisor: return {0.028, 0.17};
    case ToothClass::canine: return {0.032, 0.19};
    case ToothClass::molar1: return {0.034, 0.15};
    case ToothClass::molar2: return {0.046, 0.14};
    case ToothClass::molar3: return {0.044, 0.13};
  }
  return {0.03, 0.15};
}

Polygon tooth_polygon(double cx, double cy, double w, double h, double tilt_deg,
                      double max_x, double max_y) {
  constexpr int kVertices = 16;
  const double t = tilt_deg * std::numbers::pi / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  std::vector<Point> v;
  for (int i = 0; i < kVertices; ++i) {
    const double a = 2.0 * std::numbers::pi * i / kVertices;
    const double ca = std::cos(a), sa = std::sin(a);
    // Superellipse: boxier than an ellipse, closer to a crown outline.
    const double x = 0.5 * w * std::copysign(std::pow(std::abs(ca), 0.6), ca);
    const double y = 0.5 * h * std::copysign(std::pow(std::abs(sa), 0.6), sa);
    const double px = std::clamp(cx + x * c + y * s, 0.0, max_x);
    const double py = std::clamp(cy - x * s + y * c, 0.0, max_y);
    v.push_back({round_to(px, 0.01), round_to(py, 0.01)});
  }
  return Polygon(std::move(v));
}

ToothClass neighbour_class(ToothClass c, std::mt19937_64& rng) {
  const auto i = static_cast<int>(index_of(c));
  int j = (rng() & 1) ? i + 1 : i - 1;
  if (j < 0) j = 1;
  if (j >= static_cast<int>(kClassCount)) j = static_cast<int>(kClassCount) - 2;
  return kAllClasses[static_cast<std::size_t>(j)];
}

}  // namespace

double mock_learning_curve(const MockConfig& config, std::uint64_t samples) {
  return config.iou_final - (config.iou_final - config.iou_initial) *
                                std::exp(-static_cast<double>(samples) / config.lambda);
}

MetricSet mock_metrics(double iou_fraction) {
  MetricSet m;
  m.iou = 100.0 * iou_fraction;
  // TP / (TP + FP) with FP = FN gives 2 IoU / (1 + IoU).
  m.precision = 100.0 * 2.0 * iou_fraction / (1.0 + iou_fraction);
  m.recall = m.precision;
  m.f1 = f1_score(m.precision, m.recall);
  return m;
}

MockBackend::MockBackend(MockConfig config) : config_(config) {
  if (!(config_.iou_initial >= 0 && config_.iou_initial <= 1 && config_.iou_final >= 0 &&
        config_.iou_final <= 1 && config_.lambda > 0 && config_.mislabel_rate >= 0 &&
        config_.mislabel_rate <= 1)) {
    throw Error(ErrorCode::invalid_argument, "invalid mock configuration");
  }
}

std::vector<Prediction> MockBackend::segment(const PanoramicImage& image) {
  std::mt19937_64 rng(splitmix64(config_.seed ^ splitmix64(image.id)));
  const double W = image.width, H = image.height;
  const double mid_x = W * (0.5 + 0.004 * jitter(rng));
  const double jaw_y[2] = {H * (0.38 + 0.01 * jitter(rng)), H * (0.62 + 0.01 * jitter(rng))};

  std::vector<Prediction> out;
  for (int jaw = 0; jaw < 2; ++jaw) {
    for (int side : {-1, 1}) {
      double offset = 0.002 * W;
      for (std::size_t k = 0; k < kMockQuadrantOrder.size(); ++k) {
        const ToothClass truth = kMockQuadrantOrder[k];
        const ToothShape shape = shape_of(truth);
        const double w = W * shape.width * (1.0 + 0.08 * jitter(rng));
        const double h = H * shape.height * (1.0 + 0.08 * jitter(rng));
        const double cx = mid_x + side * (offset + 0.5 * w);
        offset += w + 0.003 * W;
        // Posterior teeth sit a little higher (the occlusal curve).
        const double curve = 0.03 * H * std::pow(static_cast<double>(k) / 6.0, 2.0);
        const double cy = jaw_y[jaw] - curve + 0.005 * H * jitter(rng);
        const double tilt = side * (1.5 * static_cast<double>(k)) + 3.0 * jitter(rng);

        Prediction p;
        p.polygon = tooth_polygon(cx, cy, w, h, tilt, W, H);
        if (unit(rng) < config_.mislabel_rate) {
          p.cls = neighbour_class(truth, rng);
          p.confidence = round_to(0.2 + 0.29 * unit(rng), 0.0001);
        } else {
          p.cls = truth;
          p.confidence = round_to(0.6 + 0.39 * unit(rng), 0.0001);
        }
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

std::string MockBackend::submit_training(std::uint32_t round, const json& document) {
  std::size_t samples = 0;
  if (document.contains("annotations") && document["annotations"].is_array()) {
    samples = document["annotations"].size();
  }
  std::lock_guard lock(mutex_);
  const std::string id = "mock-" + std::to_string(round) + "-" + std::to_string(jobs_.size() + 1);
  JobStatus status;
  if (fail_next_) {
    fail_next_ = false;
    status.status = RoundStatus::failed;
    status.message = "mock training failure";
  } else {
    consumed_ += samples;
    status.status = RoundStatus::done;
    status.metrics = mock_metrics(mock_learning_curve(config_, consumed_));
  }
  jobs_.emplace(id, status);
  return id;
}

JobStatus MockBackend::poll_training(const std::string& job_id) {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) {
    throw Error(ErrorCode::not_found, "unknown training job '" + job_id + "'");
  }
  return it->second;
}

std::uint64_t MockBackend::consumed() const {
  std::lock_guard lock(mutex_);
  return consumed_;
}

void MockBackend::set_consumed(std::uint64_t samples) {
  std::lock_guard lock(mutex_);
  consumed_ = samples;
}

void MockBackend::fail_next_training() {
  std::lock_guard lock(mutex_);
  fail_next_ = true;
}

// ---------------------------------------------------------------------------
// Wire encoding

json prediction_to_json(const Prediction& p) {
  return {{"polygon", polygon_to_json(p.polygon)},
          {"class", to_string(p.cls)},
          {"confidence", p.confidence}};
}

json predictions_to_json(const std::vector<Prediction>& ps) {
  json arr = json::array();
  for (const auto& p : ps) arr.push_back(prediction_to_json(p));
  return arr;
}

namespace {

[[noreturn]] void protocol(const std::string& field, const std::string& why) {
  throw Error(ErrorCode::protocol_error, "invalid backend payload: " + field + " " + why);
}

void check_version(const json& payload) {
  if (!payload.is_object()) protocol("payload", "is not an object");
  if (!payload.contains("version")) protocol("version", "is missing");
  if (!payload["version"].is_number_integer() || payload["version"].get<int>() != kWireVersion) {
    protocol("version", "must be " + std::to_string(kWireVersion));
  }
}

}  // namespace

std::vector<Prediction> predictions_from_wire(const json& payload) {
  check_version(payload);
  if (!payload.contains("predictions") || !payload["predictions"].is_array()) {
    protocol("predictions", "must be an array");
  }
  std::vector<Prediction> out;
  const json& arr = payload["predictions"];
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string at = "predictions[" + std::to_string(i) + "]";
    const json& e = arr[i];
    if (!e.is_object()) protocol(at, "is not an object");
    Prediction p;
    if (!e.contains("confidence") || !e["confidence"].is_number()) {
      protocol(at + ".confidence", "must be a number");
    }
    p.confidence = e["confidence"].get<double>();
    if (!(p.confidence >= 0.0 && p.confidence <= 1.0)) {
      protocol(at + ".confidence", "must be in [0, 1]");
    }
    if (!e.contains("class") || !e["class"].is_string()) protocol(at + ".class", "must be a string");
    auto cls = map_class_name(e["class"].get<std::string>());
    if (!cls) protocol(at + ".class", "'" + e["class"].get<std::string>() + "' is not a tooth class");
    p.cls = *cls;
    if (!e.contains("polygon")) protocol(at + ".polygon", "is missing");
    try {
      p.polygon = polygon_from_json(e["polygon"]);
    } catch (const Error& err) {
      protocol(at + ".polygon", err.what());
    }
    out.push_back(std::move(p));
  }
  return out;
}

JobStatus job_status_from_wire(const json& payload) {
  check_version(payload);
  if (!payload.contains("status") || !payload["status"].is_string()) {
    protocol("status", "must be a string");
  }
  auto status = parse_round_status(payload["status"].get<std::string>());
  if (!status) protocol("status", "'" + payload["status"].get<std::string>() + "' is unknown");
  JobStatus out;
  out.status = *status;
  if (payload.contains("metrics") && !payload["metrics"].is_null()) {
    try {
      out.metrics = metrics_from_json(payload["metrics"]);
    } catch (const Error& err) {
      protocol("metrics", err.what());
    }
  }
  if (out.status == RoundStatus::done && !out.metrics) protocol("metrics", "required when done");
  if (payload.contains("message") && payload["message"].is_string()) {
    out.message = payload["message"].get<std::string>();
  }
  return out;
}

json job_status_to_wire(const JobStatus& status) {
  json j{{"version", kWireVersion}, {"status", to_string(status.status)}};
  if (status.metrics) j["metrics"] = metrics_to_json(*status.metrics);
  if (!status.message.empty()) j["message"] = status.message;
  return j;
}

// ---------------------------------------------------------------------------
// Arrangement

void ArrangementTemplate::validate() const {
  if (sequence.empty()) throw Error(ErrorCode::invalid_argument, "template sequence is empty");
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw Error(ErrorCode::invalid_argument, "template tau must be in [0, 1]");
  }
}

namespace {

Point polygon_centroid(const Polygon& poly) {
  const auto& v = poly.vertices();
  double a2 = 0, cx = 0, cy = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Point& p = v[i];
    const Point& q = v[(i + 1) % v.size()];
    const double cross = p.x * q.y - q.x * p.y;
    a2 += cross;
    cx += (p.x + q.x) * cross;
    cy += (p.y + q.y) * cross;
  }
  if (std::abs(a2) < 1e-12) {
    Point m{0, 0};
    for (const auto& p : v) {
      m.x += p.x;
      m.y += p.y;
    }
    return {m.x / static_cast<double>(v.size()), m.y / static_cast<double>(v.size())};
  }
  return {cx / (3.0 * a2), cy / (3.0 * a2)};
}

/// Threshold between the two jaws: 1-D two-means on centroid y.
double jaw_midline(const std::vector<double>& ys) {
  double lo = *std::min_element(ys.begin(), ys.end());
  double hi = *std::max_element(ys.begin(), ys.end());
  if (lo == hi) return hi + 1.0;
  double cut = 0.5 * (lo + hi);
  for (int iter = 0; iter < 100; ++iter) {
    double su = 0, sl = 0;
    std::size_t nu = 0, nl = 0;
    for (double y : ys) {
      if (y < cut) {
        su += y;
        ++nu;
      } else {
        sl += y;
        ++nl;
      }
    }
    if (nu == 0 || nl == 0) break;
    const double next = 0.5 * (su / static_cast<double>(nu) + sl / static_cast<double>(nl));
    if (next == cut) break;
    cut = next;
  }
  return cut;
}

}  // namespace

std::vector<Quadrant> arrange(const std::vector<Prediction>& predictions, double image_width) {
  std::vector<Quadrant> out(predictions.size());
  if (predictions.empty()) return out;
  std::vector<Point> centers;
  std::vector<double> ys;
  for (const auto& p : predictions) {
    centers.push_back(polygon_centroid(p.polygon));
    ys.push_back(centers.back().y);
  }
  const double cut = jaw_midline(ys);
  const double mid_x = 0.5 * image_width;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    out[i].upper = centers[i].y < cut;
    out[i].left = centers[i].x < mid_x;
  }
  for (int q = 0; q < 4; ++q) {
    const bool upper = q < 2, left = q % 2 == 0;
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (out[i].upper == upper && out[i].left == left) members.push_back(i);
    }
    std::stable_sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(centers[a].x - mid_x) < std::abs(centers[b].x - mid_x);
    });
    for (std::size_t k = 0; k < members.size(); ++k) out[members[k]].position = k;
  }
  return out;
}

std::vector<Prediction> arrangement_relabel(std::vector<Prediction> predictions,
                                            double image_width, const ArrangementTemplate& tmpl) {
  tmpl.validate();
  const auto places = arrange(predictions, image_width);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].confidence >= tmpl.tau) continue;
    if (places[i].position < tmpl.sequence.size()) {
      predictions[i].cls = tmpl.sequence[places[i].position];
    }
  }
  return predictions;
}

// ---------------------------------------------------------------------------
// Training rounds

json round_to_json(const TrainingRound& r) {
  json j{{"round", r.number},
         {"samples", r.samples},
         {"status", to_string(r.status)},
         {"job_id", r.job_id},
         {"message", r.message}};
  j["metrics"] = r.metrics ? metrics_to_json(*r.metrics) : json(nullptr);
  return j;
}

TrainingRound round_from_json(const json& j) {
  try {
    TrainingRound r;
    r.number = j.at("round").get<std::uint32_t>();
    r.samples = j.at("samples").get<std::vector<InstanceId>>();
    auto status = parse_round_status(j.at("status").get<std::string>());
    if (!status) throw Error(ErrorCode::parse_error, "unknown round status");
    r.status = *status;
    r.job_id = j.value("job_id", "");
    r.message = j.value("message", "");
    if (j.contains("metrics") && !j["metrics"].is_null()) r.metrics = metrics_from_json(j["metrics"]);
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("invalid training round: ") + e.what());
  }
}

TrainingCoordinator::TrainingCoordinator(const TrainingCoordinator& other) {
  std::lock_guard lock(other.mutex_);
  rounds_ = other.rounds_;
  failed_ = other.failed_;
  in_flight_ = other.in_flight_;
  history_ = other.history_;
}

TrainingCoordinator& TrainingCoordinator::operator=(const TrainingCoordinator& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mutex_, other.mutex_);
  rounds_ = other.rounds_;
  failed_ = other.failed_;
  in_flight_ = other.in_flight_;
  history_ = other.history_;
  return *this;
}

void TrainingCoordinator::record_baseline(const MetricSet& metrics) {
  std::lock_guard lock(mutex_);
  history_.record(summary_report(0, metrics));
}

TrainingRound TrainingCoordinator::submit(const AnnotationStore& store,
                                          std::vector<InstanceId> samples,
                                          ModelBackend& backend) {
  std::sort(samples.begin(), samples.end());
  samples.erase(std::unique(samples.begin(), samples.end()), samples.end());
  TrainingRound round;
  {
    std::lock_guard lock(mutex_);
    if (in_flight_) {
      throw Error(ErrorCode::conflict,
                  "training round " + std::to_string(in_flight_->number) + " is running");
    }
    if (samples.empty()) throw Error(ErrorCode::invalid_argument, "no samples selected for training");
    for (InstanceId id : samples) {
      if (!store.instance(id).selected_for_training) {
        throw Error(ErrorCode::invalid_argument,
                    "instance " + std::to_string(id) + " is not selected for training");
      }
    }
    round.number = static_cast<std::uint32_t>(rounds_.size() + 1);
    round.samples = samples;
    round.status = RoundStatus::submitted;
    in_flight_ = round;
  }

  const std::set<InstanceId> wanted(samples.begin(), samples.end());
  json document = store.export_annotations([&wanted](const ToothInstance& i) {
    return wanted.contains(i.id);
  });

  try {
    round.job_id = backend.submit_training(round.number, document);
  } catch (const Error& e) {
    std::lock_guard lock(mutex_);
    round.status = RoundStatus::failed;
    round.message = e.what();
    failed_.push_back(round);
    in_flight_.reset();
    throw;
  }
  std::lock_guard lock(mutex_);
  round.status = RoundStatus::running;
  in_flight_ = round;
  return round;
}

std::optional<TrainingRound> TrainingCoordinator::poll(AnnotationStore& store,
                                                       ModelBackend& backend) {
  std::optional<TrainingRound> current = in_flight();
  if (!current || current->status != RoundStatus::running) return current;

  JobStatus status;
  try {
    status = backend.poll_training(current->job_id);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::transport_error) throw;
    status.status = RoundStatus::failed;
    status.message = e.what();
  }

  std::lock_guard lock(mutex_);
  TrainingRound& round = *in_flight_;
  if (status.status == RoundStatus::done) {
    round.status = RoundStatus::done;
    round.metrics = status.metrics;
    round.message = status.message;
    std::vector<InstanceId> present;
    for (InstanceId id : round.samples) {
      if (store.has_instance(id)) present.push_back(id);
    }
    store.mark_round(present, round.number);
    history_.record(summary_report(round.number, *round.metrics));
    rounds_.push_back(round);
  } else if (status.status == RoundStatus::failed) {
    round.status = RoundStatus::failed;
    round.message = status.message;
    failed_.push_back(round);
  } else {
    return round;
  }
  TrainingRound finished = round;
  in_flight_.reset();
  return finished;
}

std::optional<TrainingRound> TrainingCoordinator::wait(AnnotationStore& store,
                                                       ModelBackend& backend,
                                                       std::chrono::milliseconds timeout,
                                                       std::chrono::milliseconds interval) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    auto r = poll(store, backend);
    if (!r || r->status == RoundStatus::done || r->status == RoundStatus::failed) return r;
    if (std::chrono::steady_clock::now() >= deadline) return r;
    std::this_thread::sleep_for(interval);
  }
}

std::optional<TrainingRound> TrainingCoordinator::in_flight() const {
  std::lock_guard lock(mutex_);
  return in_flight_;
}

std::vector<TrainingRound> TrainingCoordinator::rounds() const {
  std::lock_guard lock(mutex_);
  return rounds_;
}

std::vector<TrainingRound> TrainingCoordinator::failed_attempts() const {
  std::lock_guard lock(mutex_);
  return failed_;
}

TrainingRound TrainingCoordinator::round(std::uint32_t number) const {
  std::lock_guard lock(mutex_);
  if (number >= 1 && number <= rounds_.size()) return rounds_[number - 1];
  if (in_flight_ && in_flight_->number == number) return *in_flight_;
  throw Error(ErrorCode::not_found, "training round " + std::to_string(number) + " not found");
}

EvalHistory TrainingCoordinator::history() const {
  std::lock_guard lock(mutex_);
  return history_;
}

std::uint64_t TrainingCoordinator::samples_consumed() const {
  std::lock_guard lock(mutex_);
  std::uint64_t n = 0;
  for (const auto& r : rounds_) n += r.samples.size();
  return n;
}

json TrainingCoordinator::to_json() const {
  std::lock_guard lock(mutex_);
  json rounds = json::array(), failed = json::array(), history = json::array();
  for (const auto& r : rounds_) rounds.push_back(round_to_json(r));
  for (const auto& r : failed_) failed.push_back(round_to_json(r));
  for (const auto& e : history_.entries()) history.push_back(report_to_json(e));
  return {{"rounds", rounds},
          {"failed", failed},
          {"in_flight", in_flight_ ? round_to_json(*in_flight_) : json(nullptr)},
          {"history", history}};
}

TrainingCoordinator TrainingCoordinator::from_json(const json& j) {
  TrainingCoordinator c;
  try {
    for (const auto& r : j.at("rounds")) c.rounds_.push_back(round_from_json(r));
    for (const auto& r : j.at("failed")) c.failed_.push_back(round_from_json(r));
    if (!j.at("in_flight").is_null()) c.in_flight_ = round_from_json(j["in_flight"]);
    for (const auto& e : j.at("history")) c.history_.record(report_from_json(e));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("invalid training state: ") + e.what());
  }
  for (std::size_t i = 0; i < c.rounds_.size(); ++i) {
    if (c.rounds_[i].number != i + 1) {
      throw Error(ErrorCode::parse_error, "training rounds are not numbered 1..n");
    }
  }
  return c;
}

}  // namespace toothloop
