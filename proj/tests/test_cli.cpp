#include "commands.hpp"
#include "run_config.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using sstl::cli::run;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result call(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("sstl_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const char* kSmallConfig = R"({
  "synth": {
    "subjects_per_site": [3, 3],
    "timepoints_per_site": [36, 36],
    "num_voxels": 60,
    "latent_dim": 4,
    "num_classes": 3,
    "block_length": 4
  }
})";

const char* kSmallGrid = R"({"epsilons": [0.01], "alphas": [0.5, 1.0]})";

fs::path simulate_small(const fs::path& dir, int seed = 0) {
  write_text(dir / "config.json", kSmallConfig);
  const auto r = call({"simulate", "--config", (dir / "config.json").string(), "--out", (dir / "bundle").string(),
                       "--seed", std::to_string(seed)});
  REQUIRE(r.code == 0);
  return dir / "bundle";
}

}  // namespace

TEST_CASE("config dump-defaults prints the default grid") {
  const auto r = call({"config", "dump-defaults"});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["grid"]["epsilons"] == nlohmann::json({1e-2, 1e-4, 1e-6, 1e-8}));
  CHECK(j["grid"]["alphas"] == nlohmann::json({0.1, 0.5, 1.0, 1.1, 1.5, 2.0}));
  CHECK(j["grid"]["iterations"] == 1);
  CHECK(j["synth"]["num_voxels"] == 400);
  // The dump reads back as a valid configuration.
  CHECK_NOTHROW(sstl::cli::parse_run_config(r.out, "defaults"));
}

TEST_CASE("simulate writes a reproducible bundle") {
  const auto dir = scratch("simulate");
  const auto r = call({"simulate", "--out", (dir / "a").string(), "--seed", "4"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("sites 2, subjects 10, V 400") != std::string::npos);
  CHECK(fs::exists(dir / "a" / "manifest.json"));
  int scans = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir / "a"))
    if (entry.path().extension() == ".bin" && entry.path().parent_path().filename() != "truth") ++scans;
  CHECK(scans >= 10);
  REQUIRE(call({"simulate", "--out", (dir / "b").string(), "--seed", "4"}).code == 0);
  for (const auto& entry : fs::recursive_directory_iterator(dir / "a")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dir / "a");
    CHECK_MESSAGE(read_bytes(entry.path()) == read_bytes(dir / "b" / rel), rel.string());
  }
}

TEST_CASE("bad configuration exits 2 naming the field and line") {
  const auto dir = scratch("badconfig");
  write_text(dir / "bad.json", "{\n  \"synth\": {\n    \"num_voxels\": 50,\n    \"num_classes\": 1\n  }\n}\n");
  auto r = call({"simulate", "--config", (dir / "bad.json").string(), "--out", (dir / "x").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("bad.json:4: synth.num_classes") != std::string::npos);

  write_text(dir / "unknown.json", "{\n  \"grid\": {\n    \"foo\": 1\n  }\n}\n");
  r = call({"simulate", "--config", (dir / "unknown.json").string(), "--out", (dir / "x").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("unknown.json:3: unknown key 'grid.foo'") != std::string::npos);

  write_text(dir / "type.json", "{\"synth\": {\"latent_dim\": \"ten\"}}");
  r = call({"simulate", "--config", (dir / "type.json").string(), "--out", (dir / "x").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("synth.latent_dim") != std::string::npos);
}

TEST_CASE("unknown subcommand or option is a configuration error") {
  CHECK(call({"frobnicate"}).code == 2);
  CHECK(call({"simulate", "--bogus"}).code == 2);
}

TEST_CASE("align writes one model per site and respects the k limit") {
  const auto dir = scratch("align");
  const auto bundle = simulate_small(dir);
  auto r = call({"align", bundle.string(), "--k", "50", "--out", (dir / "m").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("--clamp") != std::string::npos);

  r = call({"align", bundle.string(), "--k", "50", "--clamp", "--out", (dir / "clamped").string()});
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "clamped" / "A.sstg"));

  REQUIRE(call({"align", bundle.string(), "--k", "6", "--out", (dir / "m1").string()}).code == 0);
  REQUIRE(call({"align", (bundle / "manifest.json").string(), "--k", "6", "--out", (dir / "m2").string()}).code == 0);
  for (const char* site : {"A.sstg", "B.sstg"}) {
    REQUIRE(fs::exists(dir / "m1" / site));
    CHECK(read_bytes(dir / "m1" / site) == read_bytes(dir / "m2" / site));
  }

  r = call({"fit-shared", (dir / "m1" / "A.sstg").string(), (dir / "m1" / "B.sstg").string(), "--out",
            (dir / "shared.sstw").string()});
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "shared.sstw"));
  r = call({"fit-shared", (dir / "m1" / "A.sstg").string(), (dir / "m1" / "A.sstg").string(), "--out",
            (dir / "dup.sstw").string()});
  CHECK(r.code != 0);
}

TEST_CASE("evaluate writes reports and models") {
  const auto dir = scratch("evaluate");
  const auto bundle = simulate_small(dir, 2);
  write_text(dir / "grid.json", kSmallGrid);
  const auto r = call({"evaluate", bundle.string(), "--grid", (dir / "grid.json").string(), "--baseline", "raw",
                       "--out", (dir / "out").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("A->B") != std::string::npos);
  const auto report = nlohmann::json::parse(read_bytes(dir / "out" / "report.json"));
  CHECK(report["grid"].size() == 2);
  CHECK(report.contains("raw_baseline"));
  CHECK(report["leakage"]["test_label_reads_before_scoring"] == 0);
  CHECK(fs::exists(dir / "out" / "report.csv"));
  CHECK(fs::exists(dir / "out" / "models" / "shared.sstw"));
  CHECK(fs::exists(dir / "out" / "models" / "B.sstg"));

  const auto bad = call({"evaluate", bundle.string(), "--grid", (dir / "grid.json").string(), "--train-sites", "A",
                         "--test-sites", "A,B", "--out", (dir / "bad").string()});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("sites must be disjoint") != std::string::npos);
}

TEST_CASE("evaluate on a damaged bundle exits 3") {
  const auto dir = scratch("damaged");
  const auto bundle = simulate_small(dir);
  for (const auto& entry : fs::recursive_directory_iterator(bundle)) {
    if (entry.path().extension() == ".bin" && entry.path().parent_path().filename() != "truth") {
      fs::resize_file(entry.path(), 40);
      break;
    }
  }
  write_text(dir / "grid.json", kSmallGrid);
  const auto r = call({"evaluate", bundle.string(), "--grid", (dir / "grid.json").string(), "--out",
                       (dir / "out").string()});
  CHECK(r.code == 3);
}

TEST_CASE("bench prints one row per stage and size") {
  const auto dir = scratch("bench");
  write_text(dir / "config.json",
             R"({"synth": {"subjects_per_site": [4, 4], "timepoints_per_site": [36, 36], "num_voxels": 60,
                 "latent_dim": 4, "num_classes": 3, "block_length": 4}})");
  REQUIRE(call({"simulate", "--config", (dir / "config.json").string(), "--out", (dir / "bundle").string()}).code == 0);
  write_text(dir / "grid.json", kSmallGrid);
  const auto r = call({"bench", (dir / "bundle").string(), "--grid", (dir / "grid.json").string(),
                       "--scale-subjects", "2,4", "--repeats", "1"});
  REQUIRE(r.code == 0);
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  CHECK(line == "stage,subjects,seconds");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 14);
  CHECK(call({"bench", (dir / "bundle").string(), "--scale-subjects", "9"}).code == 2);
}
