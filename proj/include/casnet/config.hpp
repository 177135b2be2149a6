#pragma once

// Experiment configuration. Files use INI sections (`[casnet]` + `steps=500`)
// and every value is addressable as `section.key` for command-line overrides.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "casnet/losses.hpp"
#include "casnet/networks.hpp"
#include "casnet/synthgen.hpp"

namespace casnet {

enum class OptimizerKind { Adam, Sgd };

struct TrainConfig {
  long steps = 1;  // optimizer steps (GANs) or epochs (classifier)
  double lr = 1e-3;
  int batch_size = 1;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;
  int gen_updates_per_step = 1;
  int image_size = 64;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double momentum = 0.9;
  long checkpoint_every = 0;  // 0 = final checkpoint only

  void validate() const;
};

struct CycleGanConfig {
  TrainConfig train{.steps = 200, .lr = 1e-3, .batch_size = 32, .gen_updates_per_step = 2};
  double cycle_weight = 10.0;
  int residual_blocks = 9;
  int width_divisor = 1;
};

struct CasnetConfig {
  TrainConfig train{.steps = 2000, .lr = 1e-3, .batch_size = 2};
  losses::LossWeights weights;
  bool cadt = true;
  nets::PerceptualOptions perceptual;
  std::vector<std::size_t> content_taps{3};
  std::vector<std::size_t> style_taps{0, 1, 2, 3, 4};
  std::string perceptual_weights;  // optional pretrained archive
  std::string style_loss = "gram";  // "swd" is reserved, not implemented
};

struct ClassifierConfig {
  TrainConfig train{.steps = 15, .lr = 0.005, .batch_size = 32, .optimizer = OptimizerKind::Sgd};
  nets::ClassifierOptions net;
  bool freeze_backbone = true;
  std::string pretrained_weights;  // optional archive for the backbone
};

struct ExperimentConfig {
  std::string preset = "desk";
  std::uint64_t seed = 1;
  int image_size = 64;
  unsigned threads = 0;

  // Dataset sizes, per class.
  int x_train_per_class = 500;
  int x_test_per_class = 100;
  int y_unlabeled_per_class = 100;
  int y_eval_per_class = 100;
  synthgen::DeformationConfig deformation;

  CycleGanConfig cyclegan;
  CasnetConfig casnet;
  ClassifierConfig classifier;

  int convert_batch = 8;
  double threshold = 0.5;
  std::string pca_mode = "pixels";  // or "features"
  int pca_k = 2;
  bool run_cyclegan = true;
  int cyclegan_samples = 16;

  // Named presets: "desk" (small, CPU friendly) and "paper".
  static ExperimentConfig from_preset(std::string_view name);

  // Applies section.key=value; throws ConfigError for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  static const std::vector<std::string>& keys();

  // Sorted key=value lines; stable input for hashing and snapshots.
  std::string canonical_text() const;
  std::string hash() const;
  // Hash over a subset of keys (prefix match on `section.`).
  std::string hash_of(const std::vector<std::string>& prefixes) const;

  // Copies the seed and image size into the nested trainer configs.
  void propagate();
};

// Reads an INI file over the given preset. All unknown keys are reported
// together in one ConfigError.
ExperimentConfig load_config(const std::filesystem::path& file, std::string_view preset = "desk");

// Parses "key=value" override strings and applies them in order.
void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& overrides);

std::string hex64(std::uint64_t v);

}  // namespace casnet
