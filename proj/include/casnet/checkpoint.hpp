#pragma once

// Training checkpoints. One torch archive per file; see docs/checkpoint_format.md.

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace casnet {

inline constexpr const char* kCheckpointFormat = "casnet-ckpt-1";

struct CheckpointMeta {
  std::string kind;  // "casnet", "cyclegan" or "classifier"
  long step = 0;
  std::string config_hash;
  std::map<std::string, std::string> values;  // architecture and bookkeeping strings

  const std::string& value(const std::string& key) const;  // MissingArtifactError if absent
};

struct NamedModule {
  std::string name;
  torch::nn::Module* module;
};

struct NamedOptimizer {
  std::string name;
  torch::optim::Optimizer* optimizer;
};

// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& file, const CheckpointMeta& meta,
                     const std::vector<NamedModule>& nets, const std::vector<NamedOptimizer>& optimizers,
                     const std::map<std::string, std::string>& rng_state);

struct LoadedCheckpoint {
  CheckpointMeta meta;
  std::map<std::string, std::string> rng_state;
};

// Reads only the metadata.
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& file);

// Restores every listed module and optimizer; each must be present.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& file, const std::vector<NamedModule>& nets,
                                 const std::vector<NamedOptimizer>& optimizers);

// Global torch CPU generator state as bytes, and back.
std::string torch_rng_state();
void set_torch_rng_state(const std::string& bytes);

}  // namespace casnet
