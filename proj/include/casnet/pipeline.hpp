#pragma once

// End-to-end experiment: generate → train-casnet → convert → train-classifier
// (raw and converted arms) → evaluate → report, plus the optional CycleGAN
// baseline. Stage outputs live in <cache>/<stage>-<hash>/ and are reused when
// their hash matches and a DONE marker exists.

#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "casnet/config.hpp"
#include "casnet/evalkit.hpp"

namespace casnet::pipeline {

inline constexpr const char* kCacheEnv = "CASNET_CACHE_DIR";

std::string git_describe();

struct Context {
  ExperimentConfig cfg;
  std::filesystem::path out_dir;
  std::filesystem::path cache_dir;  // empty: $CASNET_CACHE_DIR, else <out_dir>/cache
  bool force = false;
  std::ostream* log = nullptr;  // progress lines; may be null

  std::filesystem::path resolved_cache() const;
};

struct StageInfo {
  std::string name;
  std::string hash;
  std::filesystem::path dir;
  bool reused = false;
};

struct PipelineResult {
  std::map<std::string, StageInfo> stages;
  std::map<std::string, eval::MetricsReport> reports;  // by table condition
  double gap_synthetic_real = 0.0;
  double gap_converted_real = 0.0;
  std::filesystem::path table_csv;
  std::filesystem::path pca_png;
};

// Runs (or reuses) one content-addressed stage. `body` fills the directory;
// the DONE marker is written after it returns.
StageInfo run_stage(const Context& ctx, const std::string& name, const std::string& hash,
                    const std::function<void(const std::filesystem::path&)>& body);

PipelineResult run_pipeline(const Context& ctx);

// Rebuilds the table, confusion figures and PCA figure from a finished
// pipeline output directory. MissingArtifactError names the absent file.
PipelineResult build_report(const Context& ctx);

// run.json: config snapshot, seed, git describe, wall time.
void write_run_manifest(const std::filesystem::path& dir, const ExperimentConfig& cfg, const std::string& command,
                        double wall_seconds, const std::vector<std::string>& argv = {});

}  // namespace casnet::pipeline
