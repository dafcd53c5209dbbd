#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "specpool/manifest.hpp"

namespace specpool {

enum class Stage {
  Laplacian,
  Descriptors,
  Fmap,
  Zoomout,
  Network,
  Cclb,
  Encode,
  Decode,
  Interp,
  Embed,
  Eval,
};

Stage stage_from_name(const std::string& name);
std::string stage_name(Stage stage);
std::vector<Stage> all_stages();

struct RunOptions {
  std::filesystem::path out_dir = "out";
  int jobs = 0;  // 0 = hardware concurrency
  bool force = false;
};

struct StageReport {
  Stage stage = Stage::Laplacian;
  std::filesystem::path run_dir;           // out/<config hash>
  std::vector<std::filesystem::path> artifacts;
  bool skipped = false;                    // artifacts were already up to date
  std::string eval_csv;                    // filled by the eval stage
};

// Executes one pipeline stage against the manifest (plus --set overrides).
// Artifacts land under out_dir keyed by the resolved-config hash; re-runs
// skip up-to-date stages unless `force`. Missing or stale upstream stages
// raise MissingPrerequisite / StalePrerequisite.
StageReport run_stage(Stage stage, const std::filesystem::path& manifest_path,
                      const std::vector<std::string>& overrides = {},
                      const RunOptions& options = {});

// Reads a plain-text p2p file: one 0-based target index per line.
std::vector<int> read_p2p_text(const std::filesystem::path& path);
std::string p2p_to_text(const std::vector<int>& assignment);

}  // namespace specpool
