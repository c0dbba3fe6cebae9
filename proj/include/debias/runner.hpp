#pragma once

// Experiment orchestration behind the `debias` command line tool.
//
// A run directory holds
//   config.json                       parsed config snapshot
//   cells/<method>_seed<seed>/        checkpoint.json, trajectory.jsonl, cell.json
//   run_record.json                   rewritten (atomically) after every cell
//   summary.csv                       one row per cell, written last
//
// The summary and the record are derived from the cell.json files only.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "debias/config.hpp"

namespace debias {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitPartial = 2 };

/// Environment variable naming the directory that run directories are created in.
inline constexpr const char* kOutputRootEnv = "DEBIAS_OUTPUT_ROOT";

/// output_dir as given (relative to the working directory), or, when the
/// environment variable is set, its last path component under that root.
std::string resolve_output_dir(const RunConfig& cfg);

/// Everything one (method, seed) cell produces. No timestamps, so repeated
/// evaluation of the same cell is byte-identical.
struct CellArtifacts {
  bool ok = false;
  std::string error;
  std::string checkpoint;  // empty for failed cells
  std::string trajectory;
  std::string cell_json;
};

/// Trains and evaluates one cell in memory.
CellArtifacts run_cell(const RunConfig& cfg, const MethodEntry& method, std::uint64_t seed);

/// Identity of a cell's inputs; a stored cell is reused only if it matches.
std::string cell_fingerprint(const RunConfig& cfg, const MethodEntry& method, std::uint64_t seed);

/// Flat metric row of a cell document: ordered (column, value) pairs, value
/// empty when not applicable.
std::vector<std::pair<std::string, std::string>> summary_row(const std::string& cell_json);

struct RunReport {
  std::size_t cells = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
  std::string output_dir;
};

/// Runs every (method, seed) cell, skipping completed ones.
RunReport run_experiment(const RunConfig& cfg, std::ostream& log);

/// `run` verb: load, validate, run. Returns an ExitCode.
int run_command(const std::string& config_path, std::ostream& out, std::ostream& err);

/// Merged CSV with one row per (record, method), aggregate means, and a `best`
/// column listing the metric columns in which the row is best.
std::string compare_records(const std::vector<std::string>& record_paths);

/// Epoch-indexed series (weights, losses, domain_acc) or the SOM grid (som) as JSON.
/// `record_path` may be a run_record.json or its directory.
std::string plot_data(const std::string& record_path, const std::string& kind,
                      const std::optional<std::string>& method = std::nullopt,
                      const std::optional<std::uint64_t>& seed = std::nullopt);

}  // namespace debias
