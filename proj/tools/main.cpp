#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "toothloop/config.hpp"
#include "toothloop/eval_metrics.hpp"
#include "toothloop/feature_json.hpp"
#include "toothloop/server.hpp"
#include "toothloop/workspace.hpp"

namespace {

using namespace toothloop;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::transport_error:
    case ErrorCode::io_error:
      return kExitIo;
    default:
      return kExitValidation;
  }
}

void emit(const std::string& out_path, const std::string& content) {
  if (out_path.empty() || out_path == "-") {
    std::fwrite(content.data(), 1, content.size(), stdout);
  } else {
    write_file_atomic(out_path, content);
  }
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json read_json_file(const std::string& path) { return parse_json(read_file(path)); }

struct Options {
  std::string config_file;
  std::string data_dir;
  std::optional<std::uint64_t> seed;
  std::string backend;
  std::optional<double> z;
};

ConfigMap load_config(const Options& o) {
  ConfigMap map;
  if (!o.config_file.empty()) map = parse_config(read_file(o.config_file));
  apply_env(map, current_environment());
  if (!o.data_dir.empty()) map["data_dir"] = o.data_dir;
  if (o.seed) map["mock_seed"] = std::to_string(*o.seed);
  if (!o.backend.empty()) map["backend"] = o.backend;
  return map;
}

WorkspaceConfig workspace_config_for(const Options& o) {
  WorkspaceConfig cfg = workspace_config(load_config(o));
  if (cfg.data_dir.empty()) {
    throw Error(ErrorCode::invalid_argument,
                "no data directory: pass --data-dir or set data_dir / TOOTHLOOP_DATA_DIR");
  }
  return cfg;
}

int run_ingest(const Options& o, const std::string& file) {
  Workspace ws(workspace_config_for(o));
  const json report = ws.ingest(read_json_file(file));
  emit("", report.dump(2) + "\n");
  return report["issues"].empty() ? kExitOk : kExitValidation;
}

int run_segment(const Options& o, std::optional<ImageId> image) {
  Workspace ws(workspace_config_for(o));
  std::vector<ImageId> ids;
  if (image) {
    ids.push_back(*image);
  } else {
    const json listing = ws.list_images();
    for (const auto& img : listing["images"]) ids.push_back(img["id"]);
  }
  std::string out;
  for (ImageId id : ids) {
    const json r = ws.segment(id);
    out += "image " + std::to_string(id) + ": " + std::to_string(r["instances"].size()) +
           " predictions, " + std::to_string(r["removed"].size()) + " replaced\n";
  }
  emit("", out);
  return kExitOk;
}

int run_features(const Options& o, const std::string& out_path) {
  Workspace ws(workspace_config_for(o));
  std::string csv = "id,image_id,class";
  for (auto name : kFeatureNames) csv += "," + std::string(name);
  csv += "\n";
  for (const auto& [inst, f] : ws.all_features()) {
    csv += std::to_string(inst.id) + "," + std::to_string(inst.image_id) + "," +
           std::string(to_string(inst.cls));
    for (double v : f.values) csv += "," + format_double(v);
    csv += "\n";
  }
  emit(out_path, csv);
  return kExitOk;
}

int run_fit_projection(const Options& o, const std::string& out_path) {
  Workspace ws(workspace_config_for(o));
  const json r = ws.refit_projection();
  json out{{"projection_id", r["projection_id"]}, {"sample_count", r["sample_count"]},
           {"model", projection_to_json(*ws.current_projection())}};
  emit(out_path, out.dump(2) + "\n");
  return kExitOk;
}

int run_anomalies(const Options& o, std::size_t top, const std::string& out_path) {
  const WorkspaceConfig cfg = workspace_config_for(o);
  Workspace ws(cfg);
  const double z = o.z.value_or(cfg.z_threshold);
  if (!(z > 0)) throw Error(ErrorCode::invalid_argument, "--z must be positive");
  json entries = json::array();
  for (const AnomalyEntry& e : ws.anomalies(z)) {
    if (top > 0 && entries.size() >= top) break;
    entries.push_back({{"id", e.id},
                       {"class", to_string(e.cls)},
                       {"non_near_count", e.deviation.non_near_count()},
                       {"flags", deviation_to_json(e.deviation)["flags"]},
                       {"projected", e.projected ? json{{"x", e.projected->x},
                                                        {"y", e.projected->y}}
                                                 : json(nullptr)}});
  }
  emit(out_path, json{{"z", z}, {"entries", entries}}.dump(2) + "\n");
  return kExitOk;
}

int run_eval(const std::string& pred_path, const std::string& gt_path, double threshold,
             const std::string& out_path) {
  AnnotationStore pred, gt;
  const IngestReport gt_report = gt.ingest(read_json_file(gt_path));
  const IngestReport pred_report = pred.ingest(read_json_file(pred_path));
  if (!gt_report.issues.empty() || !pred_report.issues.empty()) {
    json issues = json::array();
    for (const auto& [name, rep] : {std::pair{"gt", &gt_report}, std::pair{"pred", &pred_report}}) {
      for (const auto& issue : rep->issues) {
        issues.push_back({{"file", name},
                          {"annotation_id", issue.annotation_id ? json(*issue.annotation_id)
                                                                : json(nullptr)},
                          {"reason", issue.reason}});
      }
    }
    std::cerr << json{{"issues", issues}}.dump(2) << "\n";
    return kExitValidation;
  }

  EvalAccumulator acc;
  for (const auto& [image_id, image] : gt.images()) {
    auto collect = [&](const AnnotationStore& store) {
      std::vector<EvalInstance> out;
      if (!store.has_image(image_id)) return out;
      for (InstanceId id : store.instances_of(image_id)) {
        const ToothInstance& inst = store.instance(id);
        out.push_back({rasterize(inst.polygon, image.width, image.height), inst.cls});
      }
      return out;
    };
    const auto truths = collect(gt);
    const auto preds = collect(pred);
    std::vector<BinaryMask> pm, tm;
    for (const auto& p : preds) pm.push_back(p.mask);
    for (const auto& t : truths) tm.push_back(t.mask);
    acc.add(match_instances(pm, tm, threshold), preds, truths);
  }
  emit(out_path, report_to_json(acc.finish()).dump(2) + "\n");
  return kExitOk;
}

int run_export(const Options& o, const std::string& filter_name, const std::string& out_path) {
  auto filter = filters::parse(filter_name);
  if (!filter) {
    throw Error(ErrorCode::invalid_argument,
                "unknown filter '" + filter_name +
                    "' (all, selected, reviewed, ground_truth, model, corrected)");
  }
  Workspace ws(workspace_config_for(o));
  emit(out_path, ws.export_annotations(*filter, filter_name == "all").dump(2) + "\n");
  return kExitOk;
}

int run_serve(const Options& o, const std::string& host, std::optional<int> port_flag) {
  const ConfigMap map = load_config(o);
  Workspace ws(workspace_config_for(o));
  ApiServer server(ws);
  const int port = server.bind(host, port_flag.value_or(config_port(map, 8080)));
  std::cout << "listening on http://" << host << ":" << port << std::endl;
  server.run();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toothloop: dental segmentation correction loop"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config_file, "key = value configuration file");
  app.add_option("--data-dir", o.data_dir, "Workspace directory (snapshot and edit log)");
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Mock backend seed");

  std::string file;
  auto* ingest = app.add_subcommand("ingest", "Import an annotation document");
  ingest->add_option("FILE", file, "COCO-style JSON document")->required();

  auto* segment = app.add_subcommand("segment", "Run the segmentation backend on images");
  segment->add_option("--backend", o.backend, "mock or a backend URL");
  std::uint64_t image_id = 0;
  auto* image_opt = segment->add_option("--image", image_id, "Only this image");

  std::string out;
  auto* features = app.add_subcommand("features", "Write the feature table as CSV");
  features->add_option("--out", out, "Output file (default stdout)");

  auto* fit = app.add_subcommand("fit-projection", "Fit the 2D discriminant projection");
  fit->add_option("--out", out, "Write the model as JSON");

  double z = 0;
  std::size_t top = 0;
  auto* anomalies = app.add_subcommand("anomalies", "Rank instances by deviation");
  auto* z_opt = anomalies->add_option("--z", z, "Deviation threshold in standard deviations");
  anomalies->add_option("--top", top, "Only the first N entries");
  anomalies->add_option("--out", out, "Output file (default stdout)");

  std::string pred_path, gt_path;
  double threshold = 0.5;
  auto* eval = app.add_subcommand("eval", "Compare predictions with ground truth");
  eval->add_option("--pred", pred_path, "Predicted annotation document")->required();
  eval->add_option("--gt", gt_path, "Ground-truth annotation document")->required();
  eval->add_option("--threshold", threshold, "IoU threshold for instance matching");
  eval->add_option("--out", out, "Output file (default stdout)");

  std::string filter = "all";
  auto* exp = app.add_subcommand("export", "Write the dataset as an annotation document");
  exp->add_option("--filter", filter,
                  "all, selected, reviewed, ground_truth, model or corrected");
  exp->add_option("--out", out, "Output file (default stdout)");

  std::string host = "127.0.0.1";
  int port = 0;
  auto* serve = app.add_subcommand("serve", "Start the HTTP service");
  serve->add_option("--host", host, "Bind address");
  auto* port_opt = serve->add_option("--port", port, "Port (0 picks a free one)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitValidation;
  }
  if (seed_opt->count() > 0) o.seed = seed;
  if (z_opt->count() > 0) o.z = z;

  try {
    if (*ingest) return run_ingest(o, file);
    if (*segment) {
      return run_segment(o, image_opt->count() ? std::optional<ImageId>(image_id) : std::nullopt);
    }
    if (*features) return run_features(o, out);
    if (*fit) return run_fit_projection(o, out);
    if (*anomalies) return run_anomalies(o, top, out);
    if (*eval) return run_eval(pred_path, gt_path, threshold, out);
    if (*exp) return run_export(o, filter, out);
    if (*serve) {
      return run_serve(o, host, port_opt->count() ? std::optional<int>(port) : std::nullopt);
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitValidation;
}
