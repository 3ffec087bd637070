#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvf/cvtnet.hpp"
#include "retrieval_db/evaluation.hpp"
#include "scan_io/synthetic_world.hpp"
#include "training/mining.hpp"

namespace cvtnet::cli {

/// Which rows of a descriptor file a command works on, by trajectory order.
enum class RowSelection { All, Train, Validation };

RowSelection parse_rows(const std::string& name);
const char* rows_name(RowSelection rows);

struct EvalSettings {
  db::EvalConfig metrics;
  // "overlap": overlap above overlap_threshold; "distance": pose distance below distance_threshold.
  std::string positive = "overlap";
  double overlap_threshold = 0.3;
  double distance_threshold = 5.0;
  RowSelection query_rows = RowSelection::Validation;
};

struct BenchSettings {
  std::size_t database_rows = 28127;
  std::size_t repetitions = 10;
  std::size_t top_k = 20;
};

struct Paths {
  std::string out;
  std::string dataset;     // dataset directory or its manifest.json
  std::string checkpoint;  // empty = freshly initialized model from the seed
  std::string descriptors;
  std::string index;
  std::string queries;
};

/// Fully resolved run configuration. `tree` is the merged JSON that every other
/// field was decoded from; it is what gets echoed into the run directory.
struct RunConfig {
  nlohmann::json tree;
  std::string preset;
  std::uint64_t seed = 1;
  mvf::ModelConfig model;
  scan::WorldConfig world;
  train::TrainConfig training;
  EvalSettings evaluation;
  BenchSettings bench;
  RowSelection describe_rows = RowSelection::All;
  RowSelection index_rows = RowSelection::Train;
  std::size_t query_k = 20;
  Paths paths;

  /// FNV-1a of the canonical tree without "paths", as 16 hex digits.
  std::string hash() const;
};

/// Complete defaults tree for a model preset ("nclt", "kitti", "small", "tiny").
nlohmann::json default_tree(const std::string& preset);

/// Merges `overlay` into `base`. Every key must already exist in `base` with a
/// compatible type; anything else is a config error naming the dotted path.
void merge_strict(nlohmann::json& base, const nlohmann::json& overlay, const std::string& path = "");

/// Parses "a.b.c=value" into a nested overlay. The value is read as JSON when it
/// parses, otherwise as a plain string.
nlohmann::json parse_override(const std::string& assignment);

/// defaults(preset) <- file overlay <- overrides, in that order. The preset is taken
/// from the last place that names one.
RunConfig resolve_config(const nlohmann::json& file_overlay, const std::vector<std::string>& overrides);

RunConfig decode(const nlohmann::json& tree);

std::string fnv1a_hex(const std::string& bytes);

}  // namespace cvtnet::cli
