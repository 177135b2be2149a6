#pragma once

// Network definitions: CASNet encoder / separator / generator / patch
// discriminator, the CycleGAN baseline pair, the frozen perceptual network and
// the deformation classifier. Everything is a torch::nn::Module whose forward
// is a pure function of (parameters, input), except for the spectral-norm
// power iteration (training mode only) and classifier dropout.

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

namespace casnet::nets {

// ---------------------------------------------------------------------------
// Spectral normalization

// One power-iteration step on a 2-D weight view (out × rest), followed by
// division by the estimate sigma = uᵀ W v. u and v are updated in place (no
// autograd) when `update` is true; otherwise the stored vectors are used as is.
// A zero matrix yields sigma clamped to eps and the weight comes back unchanged.
struct SpectralResult {
  torch::Tensor weight;  // normalized, same shape as the input view
  torch::Tensor sigma;   // scalar
};
SpectralResult spectral_normalize(const torch::Tensor& weight2d, torch::Tensor& u, torch::Tensor& v, bool update,
                                  double eps = 1e-12);

// Largest singular value by full SVD; used by tests and diagnostics.
double top_singular_value(const torch::Tensor& weight2d);

// Convolution / transpose convolution / linear layers with optional spectral
// normalization. Weights are stored un-normalized in `weight_orig`.
struct SnConv2dOptions {
  int64_t in = 0, out = 0, kernel = 3, stride = 1, padding = 1;
  bool transposed = false;
  bool spectral = true;
  bool bias = true;
};

class SnConv2dImpl : public torch::nn::Module {
 public:
  explicit SnConv2dImpl(const SnConv2dOptions& opts);
  torch::Tensor forward(const torch::Tensor& x);
  // Weight actually applied by the next forward (normalized if spectral).
  torch::Tensor effective_weight();
  torch::Tensor weight_matrix() const;  // 2-D view of weight_orig (out × rest)
  const SnConv2dOptions& options() const { return opts_; }

  torch::Tensor weight_orig, bias, u, v;

 private:
  SnConv2dOptions opts_;
};
TORCH_MODULE(SnConv2d);

class SnLinearImpl : public torch::nn::Module {
 public:
  SnLinearImpl(int64_t in, int64_t out, bool spectral = true);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor effective_weight();

  torch::Tensor weight_orig, bias, u, v;

 private:
  bool spectral_;
};
TORCH_MODULE(SnLinear);

// conv3×3 → ReLU → conv3×3, plus identity, then ReLU.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(int64_t channels, bool spectral);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  SnConv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

// ---------------------------------------------------------------------------
// CASNet

struct FeatureBundle {
  torch::Tensor features;  // B×64×h×w
  torch::Tensor content;   // B×N
  torch::Tensor style;     // B×N, style = features − content
  int64_t channels = 0, height = 0, width = 0;

  int64_t batch() const { return content.size(0); }
  int64_t dim() const { return content.size(1); }
  // B×N flat vectors back to B×C×h×w.
  torch::Tensor unflatten(const torch::Tensor& flat) const;
};

inline constexpr int64_t kFeatureChannels = 64;
inline constexpr int64_t kEncoderChannels = 32;

class CasEncoderImpl : public torch::nn::Module {
 public:
  explicit CasEncoderImpl(int residual_blocks = 3);
  // B×3×H×W → B×64×H/4×W/4.
  torch::Tensor forward(const torch::Tensor& x);

 private:
  SnConv2d in_{nullptr}, out_{nullptr};
  torch::nn::Sequential blocks_{nullptr};
};
TORCH_MODULE(CasEncoder);

class CasSeparatorImpl : public torch::nn::Module {
 public:
  CasSeparatorImpl();
  FeatureBundle forward(const torch::Tensor& features);

  SnConv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
};
TORCH_MODULE(CasSeparator);

class CasGeneratorImpl : public torch::nn::Module {
 public:
  // feature_size = spatial side of the feature map (image_size / 4).
  explicit CasGeneratorImpl(int64_t feature_size, int residual_blocks = 3);
  // Decodes reshape(content + style); output B×3×4h×4w in [-1, 1].
  torch::Tensor forward(const torch::Tensor& content, const torch::Tensor& style);
  torch::Tensor decode(const torch::Tensor& features);
  int64_t feature_size() const { return feature_size_; }

 private:
  int64_t feature_size_;
  SnConv2d in_{nullptr}, out_{nullptr};
  torch::nn::Sequential blocks_{nullptr};
};
TORCH_MODULE(CasGenerator);

// 3→64→128→256→512 (stride 2) → 1 (stride 1), LeakyReLU(0.2), per-patch logits.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  PatchDiscriminatorImpl();
  torch::Tensor forward(const torch::Tensor& x);
  std::vector<SnConv2d> layers;
};
TORCH_MODULE(PatchDiscriminator);

// ---------------------------------------------------------------------------
// CycleGAN baseline

class CycleGeneratorImpl : public torch::nn::Module {
 public:
  // Channel widths 64/128/256 are divided by width_divisor.
  explicit CycleGeneratorImpl(int residual_blocks = 9, int width_divisor = 1);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential encoder_{nullptr}, blocks_{nullptr}, decoder_{nullptr};
};
TORCH_MODULE(CycleGenerator);

// Flattened width of the last conv map for a square input of `image_size`.
int64_t cyclegan_flatten_width(int64_t image_size);

class CycleDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit CycleDiscriminatorImpl(int64_t image_size);
  // Probability that each item is a real (not generated) image, shape B.
  torch::Tensor forward(const torch::Tensor& x);
  int64_t flatten_width() const { return flatten_width_; }
  std::vector<SnConv2d> layers;

 private:
  int64_t image_size_, flatten_width_;
  SnLinear fc_{nullptr};
};
TORCH_MODULE(CycleDiscriminator);

// ---------------------------------------------------------------------------
// VGG-topology networks

struct PerceptualOptions {
  // Taps named reluB_L (block B, layer L) of the VGG-19 layout.
  std::vector<std::string> taps{"relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1"};
  int width_divisor = 1;  // divides every channel count
  int input_size = 0;     // resize input to this side first; 0 keeps it
};

// Frozen VGG-19-topology feature extractor. Parameters never require grad.
class PerceptualNetImpl : public torch::nn::Module {
 public:
  explicit PerceptualNetImpl(PerceptualOptions opts = {});
  std::vector<torch::Tensor> forward(const torch::Tensor& x);
  std::size_t tap_count() const { return tap_layers_.size(); }
  const PerceptualOptions& options() const { return opts_; }

  torch::nn::Sequential features{nullptr};

 private:
  PerceptualOptions opts_;
  std::vector<std::size_t> tap_layers_;  // indices into `features` (ReLU outputs)
};
TORCH_MODULE(PerceptualNet);

struct ClassifierOptions {
  int width_divisor = 1;
  int input_size = 224;  // bilinear resize target; 0 keeps the input size
  int pool_size = 7;
  std::vector<int64_t> hidden{256, 64};
  double dropout = 0.5;
};

// VGG-16-topology backbone → adaptive average pool → FC×3 → sigmoid.
class ClassifierImpl : public torch::nn::Module {
 public:
  explicit ClassifierImpl(ClassifierOptions opts = {});
  torch::Tensor forward(const torch::Tensor& x);  // probability of "deformed", shape B
  torch::Tensor logits(const torch::Tensor& x);
  torch::Tensor penultimate(const torch::Tensor& x);  // last hidden layer activations
  // Split at the final conv: frozen_prefix() runs every layer before it and
  // logits_from_prefix() the rest. logits(x) == logits_from_prefix(frozen_prefix(x)).
  torch::Tensor frozen_prefix(const torch::Tensor& x);
  torch::Tensor logits_from_prefix(const torch::Tensor& h);
  // requires_grad=false on every conv except the final one.
  void freeze_backbone();
  std::vector<torch::Tensor> frozen_parameters();
  const ClassifierOptions& options() const { return opts_; }

  torch::nn::Sequential features{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr}, fc3{nullptr};
  torch::nn::Dropout dropout{nullptr};

 private:
  torch::Tensor prepare(const torch::Tensor& x) const;
  torch::Tensor head(torch::Tensor h);
  ClassifierOptions opts_;
  std::size_t split_ = 0;  // index of the final conv in `features`
};
TORCH_MODULE(Classifier);

// ---------------------------------------------------------------------------
// Construction helpers

// Seeds the global torch generator for the lifetime of the scope and restores
// the previous state afterwards, so module construction is reproducible.
class SeedScope {
 public:
  explicit SeedScope(std::uint64_t seed);
  ~SeedScope();
  SeedScope(const SeedScope&) = delete;
  SeedScope& operator=(const SeedScope&) = delete;

 private:
  torch::Tensor saved_;
};

template <typename Net, typename... Args>
Net make_seeded(std::uint64_t seed, Args&&... args) {
  SeedScope scope(seed);
  return Net(std::forward<Args>(args)...);
}

// Throws ShapeError unless x is B×3×H×W with H == W and B ≥ 1.
void check_image_batch(const torch::Tensor& x, const char* who);

// Bitwise copy of all parameters and buffers, keyed by name.
std::vector<std::pair<std::string, torch::Tensor>> snapshot(const torch::nn::Module& m);
bool bitwise_equal(const std::vector<std::pair<std::string, torch::Tensor>>& a,
                   const std::vector<std::pair<std::string, torch::Tensor>>& b);

// Copies matching entries (by name and shape) from an archive written with
// torch::save(module); returns the number of tensors loaded.
std::size_t load_weights(torch::nn::Module& m, const std::string& path);

}  // namespace casnet::nets
