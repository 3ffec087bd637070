// cvtnet command-line front end. Everything goes through the C API.

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cvtnet/cvtnet.h"

namespace {

struct Options {
  std::string config_file;
  std::vector<std::string> sets;
  std::string preset;
  long long seed = -1;
  std::string out;
  unsigned jobs = 0;
  bool print_config = false;
  bool quiet = false;
  std::string dataset, checkpoint, descriptors, index, queries, rows;
  long long k = -1;
};

std::string assign(const std::string& key, const std::string& value) {
  return key + "=" + nlohmann::json(value).dump();
}

int exit_code(cvt_status s) {
  switch (s) {
    case CVT_OK: return 0;
    case CVT_ERR_CONFIG:
    case CVT_ERR_INVALID_ARGUMENT: return 2;
    case CVT_ERR_CHECK_FAILED: return 3;
    default: return 1;
  }
}

void on_progress(const char* line, void* user) {
  if (!*static_cast<bool*>(user)) std::fprintf(stderr, "%s\n", line);
}

int run(const std::string& command, Options& o) {
  std::vector<std::string> overrides;
  if (!o.preset.empty()) overrides.push_back(assign("preset", o.preset));
  overrides.insert(overrides.end(), o.sets.begin(), o.sets.end());
  if (o.seed >= 0) overrides.push_back("seed=" + std::to_string(o.seed));
  if (!o.out.empty()) overrides.push_back(assign("paths.out", o.out));
  if (!o.dataset.empty()) overrides.push_back(assign("paths.dataset", o.dataset));
  if (!o.checkpoint.empty()) overrides.push_back(assign("paths.checkpoint", o.checkpoint));
  if (!o.descriptors.empty()) overrides.push_back(assign("paths.descriptors", o.descriptors));
  if (!o.index.empty()) overrides.push_back(assign("paths.index", o.index));
  if (!o.queries.empty()) overrides.push_back(assign("paths.queries", o.queries));
  if (!o.rows.empty()) {
    const char* key = command == "describe" ? "describe.rows" : command == "index" ? "index.rows" : "evaluation.query_rows";
    overrides.push_back(assign(key, o.rows));
  }
  if (o.k > 0) overrides.push_back("query.k=" + std::to_string(o.k));

  std::vector<const char*> argv;
  for (const auto& s : overrides) argv.push_back(s.c_str());
  cvt_config* cfg = nullptr;
  cvt_status st = o.config_file.empty() ? cvt_config_create(nullptr, argv.data(), argv.size(), &cfg)
                                        : cvt_config_from_file(o.config_file.c_str(), argv.data(), argv.size(), &cfg);
  if (st != CVT_OK) {
    std::fprintf(stderr, "cvtnet: %s: %s\n", cvt_status_name(st), cvt_last_error());
    return exit_code(st);
  }
  if (o.print_config) {
    char* text = nullptr;
    if (cvt_config_to_json(cfg, &text) == CVT_OK) {
      std::printf("%s\n", text);
      cvt_string_free(text);
    }
  }

  char* manifest = nullptr;
  st = cvt_run(cfg, command.c_str(), o.jobs, on_progress, &o.quiet, &manifest);
  if (manifest) {
    const auto m = nlohmann::json::parse(manifest, nullptr, false);
    if (!m.is_discarded()) {
      std::printf("%s\n", m["report"].dump(2).c_str());
      std::fprintf(stderr, "config %s, %.1f ms, %zu outputs in %s\n", m["config_hash"].get<std::string>().c_str(),
                   m["timings_ms"].value("total", 0.0), m["outputs"].size(), o.out.c_str());
    }
    cvt_string_free(manifest);
  }
  cvt_config_free(cfg);
  if (st != CVT_OK) {
    std::fprintf(stderr, "cvtnet %s failed: %s: %s\n", command.c_str(), cvt_status_name(st), cvt_last_error());
  }
  return exit_code(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cvtnet: multi-view LiDAR place recognition (views, training, descriptors, retrieval)"};
  app.set_version_flag("--version", std::string(cvt_version()));
  app.require_subcommand(1);
  app.fallthrough();

  Options o;
  app.add_option("--config", o.config_file, "JSON config file (unknown keys are rejected)")->check(CLI::ExistingFile);
  app.add_option("--set", o.sets, "Override a config key, e.g. --set training.epochs=5 (repeatable)");
  app.add_option("--preset", o.preset, "Model preset: nclt, kitti, small, tiny");
  app.add_option("--seed", o.seed, "Seed for world generation, initialization and training")->check(CLI::NonNegativeNumber);
  app.add_option("--out", o.out, "Run directory for every output")->required();
  app.add_option("--jobs", o.jobs, "Worker threads for per-scan stages (0 = all hardware threads)");
  app.add_flag("--print-config", o.print_config, "Print the resolved config before running");
  app.add_flag("-q,--quiet", o.quiet, "No progress lines on stderr");

  struct Sub {
    const char* name;
    const char* help;
    bool dataset, checkpoint, descriptors, index, queries, rows, k;
  };
  const std::vector<Sub> subs{
      {"synth", "Generate the synthetic trajectory world (scans, poses, revisits)", false, false, false, false, false, false, false},
      {"gen-views", "Project every scan into multi-layer RIV and BEV dumps", true, false, false, false, false, false, false},
      {"train", "Overlap-supervised triplet training; keeps the best checkpoint", true, true, false, false, false, false, false},
      {"describe", "Compute global descriptors for dataset scans", true, true, false, false, false, true, false},
      {"index", "Build a descriptor index from a descriptor file", false, false, true, false, false, true, false},
      {"query", "Top-k retrieval of query descriptors against an index", false, false, false, true, true, false, true},
      {"eval", "AR@N, AUC, F1max and PR curve against pose ground truth", true, false, false, true, true, true, false},
      {"bench", "Per-stage latency: gen_views, describe, query_top20", true, true, false, false, false, false, false},
      {"selftest", "Run the invariance and equivariance property suites", false, false, false, false, false, false, false},
  };
  std::string chosen;
  for (const auto& s : subs) {
    auto* sc = app.add_subcommand(s.name, s.help);
    if (s.dataset) sc->add_option("--dataset", o.dataset, "Dataset directory or manifest.json");
    if (s.checkpoint) sc->add_option("--checkpoint", o.checkpoint, "Model checkpoint (default: seed-initialized)");
    if (s.descriptors) sc->add_option("--descriptors", o.descriptors, "Descriptor file from `describe`");
    if (s.index) sc->add_option("--index", o.index, "Index file from `index`");
    if (s.queries) sc->add_option("--queries", o.queries, "Query descriptor file");
    if (s.rows) sc->add_option("--rows", o.rows, "Row selection: all, train, validation");
    if (s.k) sc->add_option("-k", o.k, "Results per query")->check(CLI::PositiveNumber);
    sc->callback([&chosen, name = std::string(s.name)] { chosen = name; });
  }

  CLI11_PARSE(app, argc, argv);
  return run(chosen, o);
}
