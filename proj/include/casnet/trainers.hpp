#pragma once

// Training loops for the CycleGAN baseline, CASNet and the deformation
// classifier, plus dataset conversion with a trained CASNet.
//
// Every trainer writes `checkpoint.pt` and `train_log.csv` (step,term,value)
// into its output directory. A run stopped early with `stop_after` and then
// resumed from its checkpoint continues bit-identically.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "casnet/checkpoint.hpp"
#include "casnet/config.hpp"
#include "casnet/dataset.hpp"
#include "casnet/networks.hpp"

namespace casnet::train {

// Images of one manifest as a float tensor N×3×H×W in [-1, 1]; label 1 = deformed.
struct ImageSet {
  torch::Tensor images;
  torch::Tensor labels;
  std::vector<std::string> ids;
  Domain domain = Domain::Synthetic;

  int64_t size() const { return images.defined() ? images.size(0) : 0; }
};

ImageSet load_image_set(const DatasetManifest& manifest, unsigned threads = 0);
ImageSet make_image_set(const std::vector<LabeledImage>& images);

// Seeded shuffling sampler. next() always returns `batch` indices, crossing
// epoch boundaries with a fresh permutation; epoch() partitions one fresh
// permutation into batches (the last may be short).
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed);
  std::vector<int64_t> next();
  std::vector<std::vector<int64_t>> epoch();
  std::string state() const;
  void restore(const std::string& state);

 private:
  void reshuffle();
  std::size_t n_, batch_;
  std::mt19937_64 rng_;
  std::vector<int64_t> perm_;
  std::size_t cursor_ = 0;
};

class TrainLog {
 public:
  // Opens `file`; when resuming, rows after `keep_through_step` are dropped.
  TrainLog(const std::filesystem::path& file, long keep_through_step = -1);
  void write(long step, const std::string& term, double value);

 private:
  std::ofstream out_;
};

struct RunOptions {
  std::filesystem::path out_dir;
  std::string config_hash;
  std::filesystem::path resume_from;  // empty = fresh run
  long stop_after = -1;               // stop (with checkpoint) once this step completes
  bool log_wall_time = true;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  long steps_done = 0;
  // Unweighted loss terms per completed step of this invocation.
  std::vector<std::map<std::string, double>> history;
};

// ---------------------------------------------------------------------------

struct CycleGanModel {
  nets::CycleGenerator g_xy{nullptr}, g_yx{nullptr};
  nets::CycleDiscriminator d_x{nullptr}, d_y{nullptr};

  CycleGanModel(const CycleGanConfig& cfg, std::uint64_t seed);
  std::vector<NamedModule> named();
};

TrainResult train_cyclegan(const ImageSet& x, const ImageSet& y, const CycleGanConfig& cfg, const RunOptions& run);

struct CasnetModel {
  nets::CasEncoder encoder{nullptr};
  nets::CasSeparator separator{nullptr};
  nets::CasGenerator generator{nullptr};
  nets::PatchDiscriminator d_x{nullptr}, d_y{nullptr};

  CasnetModel(int image_size, std::uint64_t seed);
  std::vector<NamedModule> named();
  void train(bool on);
};

nets::PerceptualNet make_perceptual(const CasnetConfig& cfg);

// X→Y and Y→X conversions of one pair of batches (CADT or plain swap).
struct CasnetTranslation {
  torch::Tensor x_to_y, y_to_x;
};
CasnetTranslation casnet_translate(CasnetModel& model, const torch::Tensor& x, const torch::Tensor& y, bool cadt);

TrainResult train_casnet(const ImageSet& x, const ImageSet& y, const CasnetConfig& cfg, const RunOptions& run);

// Restores a CASNet from a checkpoint written by train_casnet.
CasnetModel load_casnet(const std::filesystem::path& checkpoint);

struct ConvertOptions {
  int batch = 8;
  std::uint64_t seed = 0;  // target-batch sampling
  bool cadt = true;
  unsigned threads = 0;
};

// Converts every X image into the Y style, writing PNGs and manifest.json to
// out_dir. Converted ids are "XY-<source id>", labels are copied.
DatasetManifest convert_dataset(const std::filesystem::path& checkpoint, const DatasetManifest& x,
                                const ImageSet& y, const std::filesystem::path& out_dir,
                                const ConvertOptions& opts);

// Converts a single batch with a trained model; returns B×3×H×W.
torch::Tensor convert_batch(CasnetModel& model, const torch::Tensor& x, const torch::Tensor& y, bool cadt);

// ---------------------------------------------------------------------------

// Trains the classifier; `steps` in the config counts epochs. Throws
// ParameterError when the set lacks one of the classes.
TrainResult train_classifier(const ImageSet& data, const ClassifierConfig& cfg, const RunOptions& run);

nets::Classifier load_classifier(const std::filesystem::path& checkpoint);

// Eval-mode probabilities of "deformed", shape N.
torch::Tensor predict(nets::Classifier& model, const torch::Tensor& images, int batch = 64);

std::string to_string(const nets::ClassifierOptions& o);

}  // namespace casnet::train
