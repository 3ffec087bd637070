#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <map>

#include "cli/pipeline.hpp"
#include "cli/run_config.hpp"
#include "support/helpers.hpp"

using namespace cvtnet;
using namespace cvtnet::cli;
using nlohmann::json;

namespace {

// `train` starts from the seed; later stages read the checkpoint it wrote.
std::vector<std::string> small_run(const std::string& out, bool with_checkpoint) {
  return {"preset=\"tiny\"",      "seed=5",
          "world.num_scans=30",   "world.num_revisits=6",
          "training.epochs=1",    "bench.database_rows=300",
          "bench.repetitions=2",  "paths.out=\"" + out + "\"",
          "paths.dataset=\"" + out + "/dataset\"",
          "paths.checkpoint=\"" + (with_checkpoint ? out + "/checkpoint.cvtp" : "") + "\"",
          "paths.descriptors=\"" + out + "/descriptors.cvtd\"",
          "paths.index=\"" + out + "/index.cvtd\"",
          "paths.queries=\"" + out + "/descriptors.cvtd\""};
}

// Runs the whole pipeline and maps every untimed output path to its hash.
std::map<std::string, std::string> run_pipeline(const std::string& out, std::map<std::string, json>* reports = nullptr) {
  const auto fresh = resolve_config({}, small_run(out, false));
  const auto trained = resolve_config({}, small_run(out, true));
  std::map<std::string, std::string> hashes;
  for (const auto& cmd : command_names()) {
    if (cmd == "selftest") continue;
    const auto& rc = cmd == "train" ? fresh : trained;
    const auto manifest = run_command(cmd, rc, 2);
    if (reports) (*reports)[cmd] = manifest["report"];
    CHECK(std::filesystem::exists(out + "/" + cmd + "_manifest.json"));
    CHECK(std::filesystem::exists(out + "/" + cmd + "_config.json"));
    CHECK(manifest["config_hash"] == rc.hash());
    for (const auto& o : manifest["outputs"]) {
      if (o.value("timed", false)) continue;
      hashes[cmd + ":" + o["path"].get<std::string>()] = o["fnv1a"];
    }
  }
  return hashes;
}

}  // namespace

TEST_CASE("unknown keys and wrong types are rejected") {
  CHECK_CVT_ERROR(resolve_config({}, {"training.epochz=3"}), ErrorCode::Config);
  CHECK_CVT_ERROR(resolve_config(json{{"encoder", {{"d_model", "wide"}}}}, {}), ErrorCode::Config);
  CHECK_CVT_ERROR(resolve_config({}, {"no_equals_sign"}), ErrorCode::Config);
  CHECK_CVT_ERROR(resolve_config({}, {"preset=\"giant\""}), ErrorCode::Config);
  try {
    resolve_config({}, {"training.epochz=3"});
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("training.epochz") != std::string::npos);
  }
}

TEST_CASE("override values parse as JSON with a string fallback") {
  CHECK(parse_override("a.b=3") == json{{"a", {{"b", 3}}}});
  CHECK(parse_override("a=[1,2]") == json{{"a", {1, 2}}});
  CHECK(parse_override("a=hello") == json{{"a", "hello"}});
  CHECK(parse_override("a.b.c=true") == json{{"a", {{"b", {{"c", true}}}}}});
}

TEST_CASE("resolved values reach the typed config") {
  const auto rc = resolve_config(json{{"training", {{"epochs", 4}}}}, {"training.epochs=6", "seed=9", "query.k=3"});
  CHECK(rc.training.epochs == 6);
  CHECK(rc.seed == 9);
  CHECK(rc.training.seed == 9);
  CHECK(rc.query_k == 3);
  CHECK(rc.tree["training"]["epochs"] == 6);
}

TEST_CASE("presets select model sizes") {
  CHECK(resolve_config({}, {}).model.descriptor_dim() == 768);
  const auto tiny = resolve_config({}, {"preset=tiny"});
  CHECK(tiny.preset == "tiny");
  CHECK(tiny.model.projection.width == 128);
  CHECK(tiny.model.descriptor_dim() == 24);
  CHECK(resolve_config(json{{"preset", "kitti"}}, {}).model.projection.height == 64);
}

TEST_CASE("config hash ignores paths and tracks everything else") {
  const auto a = resolve_config({}, {"paths.out=/tmp/a"});
  const auto b = resolve_config({}, {"paths.out=/tmp/b"});
  const auto c = resolve_config({}, {"training.alpha=0.7"});
  CHECK(a.hash() == b.hash());
  CHECK(a.hash() != c.hash());
  CHECK(a.hash().size() == 16);
  CHECK(decode(a.tree).hash() == a.hash());
}

TEST_CASE("row selections") {
  CHECK(select_rows(RowSelection::All, 100, 0.2) == std::pair<std::size_t, std::size_t>{0, 100});
  CHECK(select_rows(RowSelection::Train, 100, 0.2) == std::pair<std::size_t, std::size_t>{0, 80});
  CHECK(select_rows(RowSelection::Validation, 100, 0.2) == std::pair<std::size_t, std::size_t>{80, 100});
  CHECK(parse_rows("validation") == RowSelection::Validation);
  CHECK_CVT_ERROR(parse_rows("some"), ErrorCode::Config);
}

TEST_CASE("missing inputs are reported") {
  testing::TempDir dir("cli_missing");
  const auto rc = resolve_config({}, {"preset=tiny", "paths.out=\"" + dir.path().string() + "\""});
  CHECK_CVT_ERROR(run_command("gen-views", rc, 1), ErrorCode::InvalidArgument);
  CHECK_CVT_ERROR(run_command("launch", rc, 1), ErrorCode::InvalidArgument);
}

TEST_CASE("pipeline is reproducible end to end") {
  testing::TempDir a("cli_a"), b("cli_b");
  std::map<std::string, json> reports;
  const auto ha = run_pipeline(a.path().string(), &reports);
  const auto hb = run_pipeline(b.path().string());
  CHECK(ha.size() > 100);
  CHECK(ha == hb);
  for (const char* key : {"gen-views:views/riv/000000.cvtv", "describe:descriptors.cvtd", "index:index.cvtd",
                          "train:checkpoint.cvtp", "query:results.csv", "eval:eval_report.json"})
    CHECK_MESSAGE(ha.count(key) == 1, key);

  {
    // bench names its stages
    const auto& stages = reports["bench"]["stages"];
    CHECK(stages.contains("gen_views"));
    CHECK(stages.contains("describe"));
    CHECK(stages.contains("query_top20"));
  }
  {
    // each indexed scan retrieves itself first
    std::ifstream in(a.file("results.csv"));
    std::string line;
    std::getline(in, line);
    std::size_t self_hits = 0;
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string q, rank, db, dist;
      std::getline(ss, q, ',');
      std::getline(ss, rank, ',');
      std::getline(ss, db, ',');
      std::getline(ss, dist, ',');
      if (rank == "1" && q == db) {
        CHECK(std::stod(dist) == 0.0);
        ++self_hits;
      }
    }
    CHECK(self_hits == reports["index"]["count"].get<std::size_t>());
  }
}

TEST_CASE("selftest passes on the tiny preset") {
  testing::TempDir dir("cli_selftest");
  const auto rc = resolve_config({}, {"preset=tiny", "paths.out=\"" + dir.path().string() + "\""});
  const auto manifest = run_command("selftest", rc, 0);
  CHECK(manifest["report"]["passed"] == true);
}
