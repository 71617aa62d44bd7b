#include "toothloop/persistence.hpp"

#include <fstream>
#include <sstream>

namespace toothloop {

namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error(ErrorCode::io_error, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::io_error, "cannot replace " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

DataDirectory::DataDirectory(fs::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec || !fs::is_directory(dir_)) {
    throw Error(ErrorCode::io_error, "data directory " + dir_.string() + " is unusable");
  }
}

std::optional<nlohmann::json> DataDirectory::read_snapshot() const {
  if (!fs::exists(snapshot_path())) return std::nullopt;
  return parse_json(read_file(snapshot_path()));
}

void DataDirectory::write_snapshot(const nlohmann::json& snapshot) const {
  write_file_atomic(snapshot_path(), snapshot.dump(2) + "\n");
  write_file_atomic(log_path(), "");
}

void DataDirectory::append_edit(const EditRecord& record) const {
  std::ofstream out(log_path(), std::ios::binary | std::ios::app);
  if (!out) throw Error(ErrorCode::io_error, "cannot append to " + log_path().string());
  out << edit_to_json(record).dump() << '\n';
  out.flush();
  if (!out) throw Error(ErrorCode::io_error, "append failed for " + log_path().string());
}

std::vector<EditRecord> DataDirectory::read_edits() const {
  std::vector<EditRecord> out;
  if (!fs::exists(log_path())) return out;
  std::istringstream in(read_file(log_path()));
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      out.push_back(edit_from_json(parse_json(line)));
    } catch (const Error& e) {
      throw Error(ErrorCode::parse_error, log_path().string() + " line " +
                                              std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace toothloop
