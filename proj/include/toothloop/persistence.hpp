#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "toothloop/annotation_store.hpp"

namespace toothloop {

/// On-disk layout of a workspace:
///
///   <dir>/snapshot.json   full state, rewritten atomically on compaction
///   <dir>/edits.ndjson    one edit record per line, appended after the
///                         snapshot was taken
///
/// Both carry `format_version`.
class DataDirectory {
 public:
  explicit DataDirectory(std::filesystem::path dir);

  const std::filesystem::path& path() const { return dir_; }
  std::filesystem::path snapshot_path() const { return dir_ / "snapshot.json"; }
  std::filesystem::path log_path() const { return dir_ / "edits.ndjson"; }

  /// nullopt when no snapshot has been written yet.
  std::optional<nlohmann::json> read_snapshot() const;

  /// Writes the snapshot and empties the edit log.
  void write_snapshot(const nlohmann::json& snapshot) const;

  void append_edit(const EditRecord& record) const;
  std::vector<EditRecord> read_edits() const;

 private:
  std::filesystem::path dir_;
};

/// Writes via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

}  // namespace toothloop
