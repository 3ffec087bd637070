#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cli/run_config.hpp"

namespace cvtnet::cli {

/// Subcommand names accepted by run_command, in pipeline order.
const std::vector<std::string>& command_names();

/// Runs one subcommand against the resolved config. Outputs land in config.paths.out,
/// together with `<command>_config.json` (the merged tree) and `<command>_manifest.json`
/// (config hash, versions, per-stage timings, output files with sizes and hashes).
/// Every primary output is read back and compared before the call returns.
/// `jobs` = 0 means one worker per hardware thread. `progress`, when set, receives
/// human-readable lines while the command runs.
nlohmann::json run_command(const std::string& command, const RunConfig& config, unsigned jobs,
                           const std::function<void(const std::string&)>& progress = {});

/// Loads `path` as a dataset manifest, or `path`/manifest.json for a directory.
scan::TrajectoryDataset load_dataset_path(const std::string& path);

/// Rows [begin, end) of an n-row trajectory-ordered file for a selection.
std::pair<std::size_t, std::size_t> select_rows(RowSelection rows, std::size_t n, double validation_fraction);

/// FNV-1a of a file's bytes, 16 hex digits.
std::string file_hash(const std::string& path);

}  // namespace cvtnet::cli
