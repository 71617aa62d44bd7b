#include <gtest/gtest.h>

#include <sys/wait.h>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dataset_support.hpp"
#include "toothloop/config.hpp"

namespace toothloop {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- config ----

TEST(Config, ParsesKeysCommentsAndBlankLines) {
  const ConfigMap m = parse_config("# workspace\n\ndata_dir = /tmp/x  # trailing\n z=2.5\n");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.at("data_dir"), "/tmp/x");
  EXPECT_EQ(m.at("z"), "2.5");
}

TEST(Config, UnknownKeyAndMalformedLineNameTheLine) {
  try {
    parse_config("z = 1\ncolour = red\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::parse_error);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("colour"), std::string::npos);
  }
  EXPECT_THROW(parse_config("just words\n"), Error);
}

TEST(Config, EnvironmentOverridesFile) {
  ConfigMap m = parse_config("z = 1\nbackend = mock\n");
  apply_env(m, {"TOOTHLOOP_Z=4", "TOOTHLOOP_NOT_A_KEY=1", "PATH=/bin", "TOOTHLOOP_TAU"});
  EXPECT_EQ(m.at("z"), "4");
  EXPECT_EQ(m.at("backend"), "mock");
  EXPECT_FALSE(m.contains("not_a_key"));
}

TEST(Config, BuildsWorkspaceConfig) {
  const WorkspaceConfig c = workspace_config(parse_config(
      "mock_seed = 7\nmock_lambda = 120\nrelabel = false\n"
      "template = incisor, incisor, canine, 1st molar, molar1, molar2, molar2, molar3\n"
      "backend_timeout_ms = 2500\n"));
  EXPECT_EQ(c.mock.seed, 7u);
  EXPECT_DOUBLE_EQ(c.mock.lambda, 120.0);
  EXPECT_FALSE(c.relabel);
  EXPECT_EQ(c.backend_timeout, std::chrono::milliseconds(2500));
  ASSERT_EQ(c.arrangement.sequence.size(), 8u);
  EXPECT_EQ(c.arrangement.sequence[2], ToothClass::canine);
  EXPECT_EQ(c.arrangement.sequence[7], ToothClass::molar3);
}

TEST(Config, BadValuesNameTheKey) {
  for (const char* text : {"z = abc\n", "z = -1\n", "relabel = maybe\n", "mock_seed = 1.5\n",
                           "template = incisor, premolar\n"}) {
    try {
      workspace_config(parse_config(text));
      FAIL() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::invalid_argument) << text;
      const std::string key = std::string(text).substr(0, std::string(text).find(' '));
      EXPECT_NE(std::string(e.what()).find(key), std::string::npos) << e.what();
    }
  }
  EXPECT_EQ(config_port({}, 8080), 8080);
  EXPECT_EQ(config_port({{"port", "9000"}}, 8080), 9000);
  EXPECT_THROW(config_port({{"port", "70000"}}, 8080), Error);
}

// ---- command line ----

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " TOOTHLOOP_CLI " " + args + " 2>/dev/null";
  CliRun r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    static std::atomic<int> counter{0};
    root_ = fs::temp_directory_path() /
            ("toothloop_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(root_);
    fs::create_directories(root_);
    gt_ = write("gt.json", testing::mock_ground_truth_document(2, 11).dump());
  }
  void TearDown() override { fs::remove_all(root_); }

  std::string write(const std::string& name, const std::string& content) {
    const fs::path p = root_ / name;
    std::ofstream(p) << content;
    return p.string();
  }
  std::string dir(const std::string& name) const { return (root_ / name).string(); }

  fs::path root_;
  std::string gt_;
};

TEST_F(CliTest, IngestReportsAndPersists) {
  const CliRun r = run("--data-dir " + dir("ws") + " ingest " + gt_);
  ASSERT_EQ(r.code, 0) << r.out;
  const json report = json::parse(r.out);
  EXPECT_EQ(report["images_added"].size(), 2u);
  EXPECT_EQ(report["instances_added"].size(), 56u);
  EXPECT_TRUE(fs::exists(fs::path(dir("ws")) / "snapshot.json"));

  const CliRun exported = run("--data-dir " + dir("ws") + " export --filter ground_truth");
  ASSERT_EQ(exported.code, 0);
  EXPECT_EQ(json::parse(exported.out)["annotations"].size(), 56u);
}

TEST_F(CliTest, ExitCodes) {
  const std::string bad_json = write("bad.json", "{\"images\": [");
  EXPECT_EQ(run("--data-dir " + dir("a") + " ingest " + bad_json).code, 1);
  EXPECT_EQ(run("--data-dir " + dir("b") + " ingest " + dir("missing.json")).code, 2);
  EXPECT_EQ(run("ingest " + gt_).code, 1);  // no data directory anywhere
  EXPECT_EQ(run("--data-dir " + dir("c") + " export --filter nonsense").code, 1);
  EXPECT_EQ(run("--data-dir " + dir("c") + " no-such-command").code, 1);
  EXPECT_EQ(run("--data-dir " + dir("d") + " segment --backend http://127.0.0.1:1 --image 1")
                .code,
            1);  // image does not exist yet
  ASSERT_EQ(run("--data-dir " + dir("d") + " ingest " + gt_).code, 0);
  EXPECT_EQ(run("--data-dir " + dir("d") + " segment --backend http://127.0.0.1:1 --image 1")
                .code,
            2);

  json doc = json::parse(std::ifstream(gt_));
  doc["categories"][0]["name"] = "wisdom";
  const std::string unknown = write("unknown.json", doc.dump());
  EXPECT_EQ(run("--data-dir " + dir("e") + " ingest " + unknown).code, 1);
  EXPECT_EQ(run("eval --pred " + unknown + " --gt " + gt_).code, 1);
}

TEST_F(CliTest, EvalAgainstItselfIsPerfect) {
  const CliRun r = run("eval --pred " + gt_ + " --gt " + gt_);
  ASSERT_EQ(r.code, 0);
  const json report = json::parse(r.out);
  EXPECT_DOUBLE_EQ(report["aggregate"]["f1"].get<double>(), 100.0);
  EXPECT_EQ(report["matched"], 56);
}

TEST_F(CliTest, LoopIsByteReproducible) {
  auto pipeline = [&](const std::string& ws) {
    const std::string d = "--data-dir " + dir(ws) + " --seed 3 ";
    std::string all;
    for (const std::string& step :
         {"ingest " + gt_, std::string("segment"), std::string("features"),
          std::string("fit-projection"), std::string("anomalies --z 1 --top 5"),
          std::string("export --filter all")}) {
      const CliRun r = run(d + step);
      EXPECT_EQ(r.code, 0) << step;
      all += r.out;
    }
    return all;
  };
  const std::string first = pipeline("one");
  const std::string second = pipeline("two");
  EXPECT_EQ(first, second);

  const CliRun features = run("--data-dir " + dir("one") + " features");
  const auto header = features.out.substr(0, features.out.find('\n'));
  EXPECT_EQ(header.rfind("id,image_id,class,", 0), 0u);
  EXPECT_NE(header.find(",angle"), std::string::npos);
  // 56 ground-truth rows plus 56 model predictions, plus the header
  EXPECT_EQ(std::count(features.out.begin(), features.out.end(), '\n'), 113);
}

TEST_F(CliTest, PrecedenceDefaultsFileEnvFlags) {
  const std::string cfg = write("tl.conf", "data_dir = " + dir("from_file") + "\nz = 2\n");
  ASSERT_EQ(run("--config " + cfg + " ingest " + gt_).code, 0);
  EXPECT_TRUE(fs::exists(dir("from_file")));

  ASSERT_EQ(run("--config " + cfg + " ingest " + gt_, "TOOTHLOOP_DATA_DIR=" + dir("from_env"))
                .code,
            0);
  EXPECT_TRUE(fs::exists(dir("from_env")));

  ASSERT_EQ(run("--config " + cfg + " --data-dir " + dir("from_flag") + " ingest " + gt_,
                "TOOTHLOOP_DATA_DIR=" + dir("from_env2"))
                .code,
            0);
  EXPECT_TRUE(fs::exists(dir("from_flag")));
  EXPECT_FALSE(fs::exists(dir("from_env2")));

  const CliRun z_file = run("--config " + cfg + " anomalies");
  ASSERT_EQ(z_file.code, 0);
  EXPECT_EQ(json::parse(z_file.out)["z"], 2.0);
  const CliRun z_env = run("--config " + cfg + " anomalies", "TOOTHLOOP_Z=3");
  EXPECT_EQ(json::parse(z_env.out)["z"], 3.0);
  const CliRun z_flag = run("--config " + cfg + " anomalies --z 1.5", "TOOTHLOOP_Z=3");
  EXPECT_EQ(json::parse(z_flag.out)["z"], 1.5);

  const std::string broken = write("broken.conf", "colour = red\n");
  EXPECT_EQ(run("--config " + broken + " ingest " + gt_).code, 1);
}

}  // namespace
}  // namespace toothloop
