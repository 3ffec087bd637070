// Exercises the shared library through its public header only.

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "cvtnet/cvtnet.h"

namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path dir;
  explicit Scratch(const char* tag)
      : dir(fs::temp_directory_path() / (std::string("cvtnet_capi_") + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string file(const char* name) const { return (dir / name).string(); }
};

std::string take(char* s) {
  std::string out = s ? s : "";
  cvt_string_free(s);
  return out;
}

cvt_config* make(std::vector<std::string> overrides) {
  std::vector<const char*> argv;
  for (const auto& s : overrides) argv.push_back(s.c_str());
  cvt_config* cfg = nullptr;
  REQUIRE(cvt_config_create(nullptr, argv.data(), argv.size(), &cfg) == CVT_OK);
  return cfg;
}

std::vector<float> ring_cloud(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> az(-3.14159f, 3.14159f), r(3.0f, 25.0f), z(-1.5f, 3.0f);
  std::vector<float> xyzi;
  for (std::size_t i = 0; i < n; ++i) {
    const float a = az(rng), d = r(rng);
    xyzi.insert(xyzi.end(), {d * std::cos(a), d * std::sin(a), z(rng), 0.5f});
  }
  return xyzi;
}

}  // namespace

TEST_CASE("version and status names") {
  CHECK(std::strlen(cvt_version()) > 0);
  CHECK(std::string(cvt_status_name(CVT_OK)) == "ok");
  CHECK(std::string(cvt_status_name(CVT_ERR_CHECK_FAILED)) == "check failed");
  CHECK(std::string(cvt_command_names()).find("gen-views") != std::string::npos);
  cvt_string_free(nullptr);
  cvt_config_free(nullptr);
  cvt_model_free(nullptr);
  cvt_index_free(nullptr);
}

TEST_CASE("config errors surface as statuses") {
  cvt_config* cfg = nullptr;
  CHECK(cvt_config_create("{not json", nullptr, 0, &cfg) == CVT_ERR_CONFIG);
  CHECK(cfg == nullptr);
  const char* bad[] = {"encoder.d_modle=3"};
  CHECK(cvt_config_create(nullptr, bad, 1, &cfg) == CVT_ERR_CONFIG);
  CHECK(std::string(cvt_last_error()).find("d_modle") != std::string::npos);
  CHECK(cvt_config_create(nullptr, nullptr, 0, nullptr) == CVT_ERR_INVALID_ARGUMENT);
  CHECK(cvt_config_from_file("/nonexistent/cfg.json", nullptr, 0, &cfg) == CVT_ERR_NOT_FOUND);
}

TEST_CASE("config round trips through JSON text") {
  cvt_config* a = make({"preset=tiny", "training.epochs=2"});
  char* text = nullptr;
  REQUIRE(cvt_config_to_json(a, &text) == CVT_OK);
  const std::string json_text = take(text);
  CHECK(nlohmann::json::parse(json_text)["training"]["epochs"] == 2);
  cvt_config* b = nullptr;
  REQUIRE(cvt_config_create(json_text.c_str(), nullptr, 0, &b) == CVT_OK);
  char *ha = nullptr, *hb = nullptr;
  REQUIRE(cvt_config_hash(a, &ha) == CVT_OK);
  REQUIRE(cvt_config_hash(b, &hb) == CVT_OK);
  CHECK(take(ha) == take(hb));
  cvt_config_free(a);
  cvt_config_free(b);
}

TEST_CASE("model describes raw points") {
  cvt_config* cfg = make({"preset=tiny", "seed=3"});
  cvt_model* model = nullptr;
  REQUIRE(cvt_model_create(cfg, &model) == CVT_OK);
  size_t dim = 0;
  REQUIRE(cvt_model_descriptor_dim(model, &dim) == CVT_OK);
  CHECK(dim == 24);
  const auto cloud = ring_cloud(5000, 1);
  std::vector<float> d1(dim), d2(dim);
  REQUIRE(cvt_model_describe_points(model, cloud.data(), cloud.size() / 4, d1.data(), d1.size()) == CVT_OK);
  REQUIRE(cvt_model_describe_points(model, cloud.data(), cloud.size() / 4, d2.data(), d2.size()) == CVT_OK);
  CHECK(d1 == d2);
  double n = 0.0;
  for (std::size_t i = 0; i < 8; ++i) n += double(d1[i]) * d1[i];
  CHECK(n == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(cvt_model_describe_points(model, cloud.data(), cloud.size() / 4, d1.data(), dim - 1) == CVT_ERR_SHAPE);
  CHECK(cvt_model_describe_points(model, nullptr, 0, d1.data(), dim) == CVT_ERR_FORMAT);
  CHECK(cvt_model_describe_file(model, "/nonexistent.bin", d1.data(), dim) == CVT_ERR_IO);
  cvt_model_free(model);
  cvt_config_free(cfg);

  cvt_config* missing = make({"preset=tiny", "paths.checkpoint=/nonexistent.cvtp"});
  CHECK(cvt_model_create(missing, &model) == CVT_ERR_NOT_FOUND);
  CHECK(model == nullptr);
  cvt_config_free(missing);
}

TEST_CASE("index lifecycle") {
  Scratch s("index");
  cvt_index* idx = nullptr;
  CHECK(cvt_index_create(0, &idx) == CVT_ERR_INVALID_ARGUMENT);
  REQUIRE(cvt_index_create(3, &idx) == CVT_OK);
  const float a[] = {1, 0, 0}, b[] = {0, 1, 0}, c[] = {0, 0, 5};
  REQUIRE(cvt_index_insert(idx, "a", a, 3) == CVT_OK);
  REQUIRE(cvt_index_insert(idx, "b", b, 3) == CVT_OK);
  REQUIRE(cvt_index_insert(idx, "c", c, 3) == CVT_OK);
  CHECK(cvt_index_insert(idx, "a", b, 3) == CVT_ERR_DUPLICATE);
  CHECK(cvt_index_insert(idx, "d", b, 2) == CVT_ERR_SHAPE);

  cvt_hit hits[3];
  size_t n = 0;
  REQUIRE(cvt_index_query(idx, b, 3, 2, hits, 3, &n) == CVT_OK);
  REQUIRE(n == 2);
  CHECK(hits[0].row == 1);
  CHECK(hits[0].distance == 0.0);
  CHECK(hits[1].row == 0);
  CHECK(hits[1].distance == doctest::Approx(2.0));
  CHECK(cvt_index_query(idx, b, 3, 3, hits, 2, &n) == CVT_ERR_SHAPE);
  CHECK(n == 0);

  REQUIRE(cvt_index_save(idx, s.file("i.cvtd").c_str()) == CVT_OK);
  cvt_index* back = nullptr;
  REQUIRE(cvt_index_load(s.file("i.cvtd").c_str(), &back) == CVT_OK);
  size_t size = 0, dim = 0;
  REQUIRE(cvt_index_size(back, &size) == CVT_OK);
  REQUIRE(cvt_index_dim(back, &dim) == CVT_OK);
  CHECK(size == 3);
  CHECK(dim == 3);
  char* id = nullptr;
  REQUIRE(cvt_index_id(back, 2, &id) == CVT_OK);
  CHECK(take(id) == "c");
  CHECK(cvt_index_id(back, 3, &id) == CVT_ERR_INVALID_ARGUMENT);
  CHECK(cvt_index_load(s.file("missing.cvtd").c_str(), &back) == CVT_ERR_NOT_FOUND);
  cvt_index_free(idx);
  cvt_index_free(back);
}

namespace {

void count_lines(const char*, void* user) { ++*static_cast<int*>(user); }

}  // namespace

TEST_CASE("run synth through the C API") {
  Scratch s("run");
  const std::string out = s.dir.string();
  cvt_config* cfg = make({"preset=tiny", "world.num_scans=12", "world.num_revisits=2", "paths.out=\"" + out + "\""});
  int lines = 0;
  char* manifest = nullptr;
  REQUIRE(cvt_run(cfg, "synth", 1, count_lines, &lines, &manifest) == CVT_OK);
  const auto m = nlohmann::json::parse(take(manifest));
  CHECK(m["command"] == "synth");
  CHECK(m["outputs"].size() == 14);
  CHECK(lines > 0);
  CHECK(fs::exists(s.dir / "dataset" / "manifest.json"));
  CHECK(cvt_run(cfg, "nope", 1, nullptr, nullptr, &manifest) == CVT_ERR_INVALID_ARGUMENT);
  CHECK(manifest == nullptr);
  CHECK(cvt_run(cfg, "describe", 1, nullptr, nullptr, nullptr) == CVT_ERR_INVALID_ARGUMENT);
  cvt_config_free(cfg);
}
