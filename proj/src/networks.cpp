#include "casnet/networks.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <mutex>
#include <sstream>

#include "casnet/errors.hpp"

namespace casnet::nets {

namespace F = torch::nn::functional;

namespace {

torch::Tensor l2_normalize(const torch::Tensor& x, double eps) { return x / x.norm().clamp_min(eps); }

std::string shape_str(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

torch::Tensor leaky(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)); }

// Power-iterates until sigma settles so training starts from an accurate estimate.
void warm_up(const torch::Tensor& w2d, torch::Tensor& u, torch::Tensor& v) {
  torch::NoGradGuard guard;
  double last = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const double sigma = spectral_normalize(w2d, u, v, true).sigma.item<double>();
    if (i >= 15 && std::abs(sigma - last) <= 1e-6 * sigma) break;
    last = sigma;
  }
}

}  // namespace

SpectralResult spectral_normalize(const torch::Tensor& weight2d, torch::Tensor& u, torch::Tensor& v, bool update,
                                  double eps) {
  if (weight2d.dim() != 2) throw ShapeError("spectral_normalize expects a 2-D weight, got " + shape_str(weight2d));
  if (u.numel() != weight2d.size(0) || v.numel() != weight2d.size(1))
    throw ShapeError("power-iteration vectors " + shape_str(u) + "/" + shape_str(v) + " do not fit weight " +
                     shape_str(weight2d));
  if (update) {
    torch::NoGradGuard guard;
    const auto w = weight2d.detach();
    v.copy_(l2_normalize(w.t().mv(u), eps));
    u.copy_(l2_normalize(w.mv(v), eps));
  }
  // Clones keep the autograd graph valid if u/v are updated by a later forward.
  const auto sigma = torch::dot(u.clone(), weight2d.mv(v.clone())).clamp_min(eps);
  return {weight2d / sigma, sigma};
}

double top_singular_value(const torch::Tensor& weight2d) {
  return torch::linalg_svdvals(weight2d.detach().to(torch::kFloat64)).max().item<double>();
}

// ---------------------------------------------------------------------------

SnConv2dImpl::SnConv2dImpl(const SnConv2dOptions& opts) : opts_(opts) {
  const auto k = opts.kernel;
  auto w = opts.transposed ? torch::empty({opts.in, opts.out, k, k}) : torch::empty({opts.out, opts.in, k, k});
  torch::nn::init::kaiming_uniform_(w, std::sqrt(5.0));
  weight_orig = register_parameter("weight_orig", w);
  if (opts.bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.size(1) * k * k));
    bias = register_parameter("bias", torch::empty({opts.out}).uniform_(-bound, bound));
  }
  if (opts.spectral) {
    const auto w2d = weight_matrix();
    u = register_buffer("u", l2_normalize(torch::randn({w2d.size(0)}), 1e-12));
    v = register_buffer("v", l2_normalize(torch::randn({w2d.size(1)}), 1e-12));
    warm_up(w2d, u, v);
  }
}

torch::Tensor SnConv2dImpl::weight_matrix() const {
  return opts_.transposed ? weight_orig.transpose(0, 1).reshape({opts_.out, -1})
                          : weight_orig.reshape({opts_.out, -1});
}

torch::Tensor SnConv2dImpl::effective_weight() {
  if (!opts_.spectral) return weight_orig;
  auto w = spectral_normalize(weight_matrix(), u, v, is_training()).weight;
  const auto k = opts_.kernel;
  return opts_.transposed ? w.reshape({opts_.out, opts_.in, k, k}).transpose(0, 1) : w.reshape(weight_orig.sizes());
}

torch::Tensor SnConv2dImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != opts_.in)
    throw ShapeError("conv expects B×" + std::to_string(opts_.in) + "×H×W input, got " + shape_str(x));
  const auto w = effective_weight();
  const auto b = opts_.bias ? bias : torch::Tensor();
  if (opts_.transposed) return torch::conv_transpose2d(x, w, b, opts_.stride, opts_.padding);
  return torch::conv2d(x, w, b, opts_.stride, opts_.padding);
}

SnLinearImpl::SnLinearImpl(int64_t in, int64_t out, bool spectral) : spectral_(spectral) {
  auto w = torch::empty({out, in});
  torch::nn::init::kaiming_uniform_(w, std::sqrt(5.0));
  weight_orig = register_parameter("weight_orig", w);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  bias = register_parameter("bias", torch::empty({out}).uniform_(-bound, bound));
  if (spectral) {
    u = register_buffer("u", l2_normalize(torch::randn({out}), 1e-12));
    v = register_buffer("v", l2_normalize(torch::randn({in}), 1e-12));
    warm_up(weight_orig, u, v);
  }
}

torch::Tensor SnLinearImpl::effective_weight() {
  return spectral_ ? spectral_normalize(weight_orig, u, v, is_training()).weight : weight_orig;
}

torch::Tensor SnLinearImpl::forward(const torch::Tensor& x) { return torch::linear(x, effective_weight(), bias); }

ResidualBlockImpl::ResidualBlockImpl(int64_t channels, bool spectral) {
  const SnConv2dOptions o{.in = channels, .out = channels, .kernel = 3, .stride = 1, .padding = 1, .spectral = spectral};
  conv1_ = register_module("conv1", SnConv2d(o));
  conv2_ = register_module("conv2", SnConv2d(o));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  return torch::relu(x + conv2_(torch::relu(conv1_(x))));
}

// ---------------------------------------------------------------------------

torch::Tensor FeatureBundle::unflatten(const torch::Tensor& flat) const {
  if (flat.dim() != 2 || flat.size(1) != channels * height * width)
    throw ShapeError("cannot reshape " + shape_str(flat) + " to B×" + std::to_string(channels) + "×" +
                     std::to_string(height) + "×" + std::to_string(width));
  return flat.reshape({flat.size(0), channels, height, width});
}

void check_image_batch(const torch::Tensor& x, const char* who) {
  if (x.dim() != 4 || x.size(0) < 1 || x.size(1) != 3 || x.size(2) != x.size(3))
    throw ShapeError(std::string(who) + " expects a B×3×H×W batch with H == W, got " + shape_str(x));
}

CasEncoderImpl::CasEncoderImpl(int residual_blocks) {
  in_ = register_module("head", SnConv2d(SnConv2dOptions{.in = 3, .out = kEncoderChannels, .kernel = 4, .stride = 2}));
  blocks_ = torch::nn::Sequential();
  for (int i = 0; i < residual_blocks; ++i) blocks_->push_back(ResidualBlock(kEncoderChannels, true));
  register_module("blocks", blocks_);
  out_ = register_module(
      "tail", SnConv2d(SnConv2dOptions{.in = kEncoderChannels, .out = kFeatureChannels, .kernel = 4, .stride = 2}));
}

torch::Tensor CasEncoderImpl::forward(const torch::Tensor& x) {
  check_image_batch(x, "encoder");
  if (x.size(2) % 4 != 0) throw ShapeError("encoder input side must be divisible by 4, got " + shape_str(x));
  return torch::relu(out_(blocks_->forward(torch::relu(in_(x)))));
}

CasSeparatorImpl::CasSeparatorImpl() {
  const SnConv2dOptions o{.in = kFeatureChannels, .out = kFeatureChannels, .kernel = 3, .stride = 1, .padding = 1};
  conv1 = register_module("conv1", SnConv2d(o));
  conv2 = register_module("conv2", SnConv2d(o));
  conv3 = register_module("conv3", SnConv2d(o));
}

FeatureBundle CasSeparatorImpl::forward(const torch::Tensor& features) {
  if (features.dim() != 4 || features.size(1) != kFeatureChannels)
    throw ShapeError("separator expects B×64×h×w features, got " + shape_str(features));
  const auto content = torch::relu(conv3(torch::relu(conv2(torch::relu(conv1(features))))));
  FeatureBundle b;
  b.features = features;
  b.channels = features.size(1);
  b.height = features.size(2);
  b.width = features.size(3);
  b.content = content.flatten(1);
  b.style = (features - content).flatten(1);
  return b;
}

CasGeneratorImpl::CasGeneratorImpl(int64_t feature_size, int residual_blocks) : feature_size_(feature_size) {
  in_ = register_module("head", SnConv2d(SnConv2dOptions{.in = kFeatureChannels,
                                                       .out = kEncoderChannels,
                                                       .kernel = 4,
                                                       .stride = 2,
                                                       .padding = 1,
                                                       .transposed = true}));
  blocks_ = torch::nn::Sequential();
  for (int i = 0; i < residual_blocks; ++i) blocks_->push_back(ResidualBlock(kEncoderChannels, true));
  register_module("blocks", blocks_);
  out_ = register_module("tail", SnConv2d(SnConv2dOptions{.in = kEncoderChannels,
                                                         .out = 3,
                                                         .kernel = 4,
                                                         .stride = 2,
                                                         .padding = 1,
                                                         .transposed = true}));
}

torch::Tensor CasGeneratorImpl::decode(const torch::Tensor& features) {
  return torch::tanh(out_(blocks_->forward(torch::relu(in_(features)))));
}

torch::Tensor CasGeneratorImpl::forward(const torch::Tensor& content, const torch::Tensor& style) {
  const int64_t n = kFeatureChannels * feature_size_ * feature_size_;
  if (content.dim() != 2 || !content.sizes().equals(style.sizes()) || content.size(1) != n)
    throw ShapeError("generator expects content/style of shape B×" + std::to_string(n) + ", got " +
                     shape_str(content) + " and " + shape_str(style));
  return decode((content + style).reshape({content.size(0), kFeatureChannels, feature_size_, feature_size_}));
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl() {
  const int64_t ch[] = {3, 64, 128, 256, 512};
  for (int i = 0; i < 4; ++i)
    layers.push_back(register_module("conv" + std::to_string(i + 1),
                                     SnConv2d(SnConv2dOptions{.in = ch[i], .out = ch[i + 1], .kernel = 4, .stride = 2})));
  layers.push_back(register_module("conv5", SnConv2d(SnConv2dOptions{.in = 512, .out = 1, .kernel = 4, .stride = 1})));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) {
  check_image_batch(x, "patch discriminator");
  if (x.size(2) < 32) throw ShapeError("patch discriminator needs inputs of at least 32×32, got " + shape_str(x));
  auto h = x;
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) h = leaky(layers[i](h));
  return layers.back()(h);
}

// ---------------------------------------------------------------------------

CycleGeneratorImpl::CycleGeneratorImpl(int residual_blocks, int width_divisor) {
  if (residual_blocks < 0 || width_divisor < 1 || 64 % width_divisor != 0)
    throw ParameterError("cyclegan generator needs residual_blocks >= 0 and a width divisor of 64");
  const int64_t w1 = 64 / width_divisor, w2 = 128 / width_divisor, w3 = 256 / width_divisor;
  auto conv = [](int64_t in, int64_t out, bool transposed) {
    return SnConv2d(SnConv2dOptions{
        .in = in, .out = out, .kernel = 4, .stride = 2, .padding = 1, .transposed = transposed, .spectral = false});
  };
  encoder_ = torch::nn::Sequential(conv(3, w1, false), torch::nn::ReLU(), conv(w1, w2, false), torch::nn::ReLU(),
                                   conv(w2, w3, false), torch::nn::ReLU());
  blocks_ = torch::nn::Sequential();
  for (int i = 0; i < residual_blocks; ++i) blocks_->push_back(ResidualBlock(w3, false));
  decoder_ = torch::nn::Sequential(conv(w3, w2, true), torch::nn::ReLU(), conv(w2, w1, true), torch::nn::ReLU(),
                                   conv(w1, 3, true), torch::nn::Tanh());
  register_module("encoder", encoder_);
  register_module("blocks", blocks_);
  register_module("decoder", decoder_);
}

torch::Tensor CycleGeneratorImpl::forward(const torch::Tensor& x) {
  check_image_batch(x, "cyclegan generator");
  if (x.size(2) % 8 != 0) throw ShapeError("cyclegan generator input side must be divisible by 8, got " + shape_str(x));
  return decoder_->forward(blocks_->forward(encoder_->forward(x)));
}

int64_t cyclegan_flatten_width(int64_t image_size) {
  if (image_size < 32 || image_size % 32 != 0)
    throw ParameterError("cyclegan discriminator needs an image side divisible by 32, got " +
                         std::to_string(image_size));
  const int64_t side = image_size / 32;
  return 16 * side * side;
}

CycleDiscriminatorImpl::CycleDiscriminatorImpl(int64_t image_size)
    : image_size_(image_size), flatten_width_(cyclegan_flatten_width(image_size)) {
  // Five stride-2 reductions; the stride-1 512→512 layer is the sixth conv.
  const SnConv2dOptions specs[] = {
      {.in = 3, .out = 64, .kernel = 4, .stride = 2},     {.in = 64, .out = 128, .kernel = 4, .stride = 2},
      {.in = 128, .out = 256, .kernel = 4, .stride = 2},  {.in = 256, .out = 512, .kernel = 4, .stride = 2},
      {.in = 512, .out = 512, .kernel = 3, .stride = 1},  {.in = 512, .out = 16, .kernel = 4, .stride = 2},
  };
  for (std::size_t i = 0; i < std::size(specs); ++i)
    layers.push_back(register_module("conv" + std::to_string(i + 1), SnConv2d(specs[i])));
  fc_ = register_module("fc", SnLinear(flatten_width_, 1));
}

torch::Tensor CycleDiscriminatorImpl::forward(const torch::Tensor& x) {
  check_image_batch(x, "cyclegan discriminator");
  if (x.size(2) % 32 != 0 || x.size(2) < 32)
    throw ShapeError("cyclegan discriminator flatten mismatch: expected width " + std::to_string(flatten_width_) +
                     " (" + std::to_string(image_size_) + "px input), got input " + shape_str(x));
  auto h = x;
  for (auto& layer : layers) h = leaky(layer(h));
  h = h.flatten(1);
  if (h.size(1) != flatten_width_)
    throw ShapeError("cyclegan discriminator flatten mismatch: expected width " + std::to_string(flatten_width_) +
                     ", got " + std::to_string(h.size(1)));
  return torch::sigmoid(fc_(h)).squeeze(1);
}

// ---------------------------------------------------------------------------

namespace {

constexpr int kPool = -1;

torch::nn::Sequential build_vgg(const std::vector<int>& cfg, int width_divisor, std::vector<std::string>* relu_names) {
  torch::nn::Sequential seq;
  int64_t in = 3;
  int block = 1, layer = 1;
  for (int c : cfg) {
    if (c == kPool) {
      seq->push_back(torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(2).stride(2)));
      if (relu_names) relu_names->emplace_back();
      ++block;
      layer = 1;
      continue;
    }
    const int64_t out = std::max<int64_t>(1, c / width_divisor);
    auto conv = torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1));
    torch::nn::init::kaiming_normal_(conv->weight, 0.0, torch::kFanOut, torch::kReLU);
    torch::nn::init::zeros_(conv->bias);
    seq->push_back(conv);
    seq->push_back(torch::nn::ReLU());
    if (relu_names) {
      relu_names->emplace_back();
      relu_names->push_back("relu" + std::to_string(block) + "_" + std::to_string(layer));
    }
    ++layer;
    in = out;
  }
  return seq;
}

const std::vector<int> kVgg19 = {64,  64,  kPool, 128, 128, kPool, 256, 256, 256, 256, kPool, 512, 512,
                                 512, 512, kPool, 512, 512, 512, 512, kPool};
const std::vector<int> kVgg16 = {64,  64,  kPool, 128, 128, kPool, 256, 256, 256,
                                 kPool, 512, 512, 512, kPool, 512, 512, 512, kPool};

const double kImagenetMean[3] = {0.485, 0.456, 0.406};
const double kImagenetStd[3] = {0.229, 0.224, 0.225};

torch::Tensor imagenet_normalize(const torch::Tensor& x, int input_size) {
  auto h = x;
  if (input_size > 0 && (x.size(2) != input_size || x.size(3) != input_size)) {
    h = F::interpolate(h, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{input_size, input_size})
                              .mode(torch::kBilinear)
                              .align_corners(false));
  }
  const auto opts = torch::TensorOptions().dtype(x.dtype());
  const auto mean = torch::tensor({kImagenetMean[0], kImagenetMean[1], kImagenetMean[2]}, opts).view({1, 3, 1, 1});
  const auto stdev = torch::tensor({kImagenetStd[0], kImagenetStd[1], kImagenetStd[2]}, opts).view({1, 3, 1, 1});
  return ((h + 1.0) * 0.5 - mean) / stdev;
}

}  // namespace

PerceptualNetImpl::PerceptualNetImpl(PerceptualOptions opts) : opts_(std::move(opts)) {
  if (opts_.width_divisor < 1) throw ParameterError("perceptual width_divisor must be >= 1");
  std::vector<std::string> names;
  features = register_module("features", build_vgg(kVgg19, opts_.width_divisor, &names));
  for (const auto& tap : opts_.taps) {
    auto it = std::find(names.begin(), names.end(), tap);
    if (tap.empty() || it == names.end()) throw ParameterError("unknown perceptual tap '" + tap + "'");
    tap_layers_.push_back(static_cast<std::size_t>(it - names.begin()));
  }
  for (auto& p : parameters()) p.requires_grad_(false);
  eval();
}

std::vector<torch::Tensor> PerceptualNetImpl::forward(const torch::Tensor& x) {
  check_image_batch(x, "perceptual network");
  auto h = imagenet_normalize(x, opts_.input_size);
  const std::size_t last = *std::max_element(tap_layers_.begin(), tap_layers_.end());
  std::vector<torch::Tensor> outputs(tap_layers_.size());
  std::size_t index = 0;
  for (auto& layer : *features) {
    h = layer.forward(h);
    for (std::size_t t = 0; t < tap_layers_.size(); ++t)
      if (tap_layers_[t] == index) outputs[t] = h;
    if (index == last) break;
    ++index;
  }
  return outputs;
}

ClassifierImpl::ClassifierImpl(ClassifierOptions opts) : opts_(std::move(opts)) {
  if (opts_.width_divisor < 1) throw ParameterError("classifier width_divisor must be >= 1");
  if (opts_.hidden.size() != 2) throw ParameterError("classifier head needs exactly two hidden widths");
  features = register_module("features", build_vgg(kVgg16, opts_.width_divisor, nullptr));
  const int64_t channels = std::max(1, 512 / opts_.width_divisor);
  const int64_t flat = channels * opts_.pool_size * opts_.pool_size;
  fc1 = register_module("fc1", torch::nn::Linear(flat, opts_.hidden[0]));
  dropout = register_module("dropout", torch::nn::Dropout(opts_.dropout));
  fc2 = register_module("fc2", torch::nn::Linear(opts_.hidden[0], opts_.hidden[1]));
  fc3 = register_module("fc3", torch::nn::Linear(opts_.hidden[1], 1));
  std::size_t index = 0;
  for (const auto& child : features->children()) {
    if (std::dynamic_pointer_cast<torch::nn::Conv2dImpl>(child)) split_ = index;
    ++index;
  }
}

torch::Tensor ClassifierImpl::prepare(const torch::Tensor& x) const {
  check_image_batch(x, "classifier");
  if (x.size(2) < 32) throw ShapeError("classifier needs inputs of at least 32×32");
  return imagenet_normalize(x, opts_.input_size);
}

torch::Tensor ClassifierImpl::frozen_prefix(const torch::Tensor& x) {
  auto h = prepare(x);
  std::size_t index = 0;
  for (auto& layer : *features) {
    if (index++ == split_) break;
    h = layer.forward(h);
  }
  return h;
}

torch::Tensor ClassifierImpl::logits_from_prefix(const torch::Tensor& prefix) {
  auto h = prefix;
  std::size_t index = 0;
  for (auto& layer : *features)
    if (index++ >= split_) h = layer.forward(h);
  return fc3->forward(head(h)).squeeze(1);
}

torch::Tensor ClassifierImpl::head(torch::Tensor h) {
  h = F::adaptive_avg_pool2d(h, F::AdaptiveAvgPool2dFuncOptions(opts_.pool_size)).flatten(1);
  h = dropout->forward(torch::relu(fc1->forward(h)));
  return torch::relu(fc2->forward(h));
}

torch::Tensor ClassifierImpl::penultimate(const torch::Tensor& x) {
  return head(features->forward(prepare(x)));
}

torch::Tensor ClassifierImpl::logits(const torch::Tensor& x) { return fc3->forward(penultimate(x)).squeeze(1); }

torch::Tensor ClassifierImpl::forward(const torch::Tensor& x) { return torch::sigmoid(logits(x)); }

void ClassifierImpl::freeze_backbone() {
  for (auto& p : frozen_parameters()) p.requires_grad_(false);
}

std::vector<torch::Tensor> ClassifierImpl::frozen_parameters() {
  std::vector<torch::nn::Conv2d> convs;
  for (const auto& child : features->children())
    if (auto conv = std::dynamic_pointer_cast<torch::nn::Conv2dImpl>(child)) convs.emplace_back(conv);
  std::vector<torch::Tensor> out;
  for (std::size_t i = 0; i + 1 < convs.size(); ++i) {
    out.push_back(convs[i]->weight);
    out.push_back(convs[i]->bias);
  }
  return out;
}

// ---------------------------------------------------------------------------

SeedScope::SeedScope(std::uint64_t seed) {
  auto gen = at::detail::getDefaultCPUGenerator();
  std::lock_guard<std::mutex> lock(gen.mutex());
  saved_ = gen.get_state();
  gen.set_current_seed(seed);
}

SeedScope::~SeedScope() {
  auto gen = at::detail::getDefaultCPUGenerator();
  std::lock_guard<std::mutex> lock(gen.mutex());
  gen.set_state(saved_);
}

std::vector<std::pair<std::string, torch::Tensor>> snapshot(const torch::nn::Module& m) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : m.named_parameters()) out.emplace_back(p.key(), p.value().detach().clone());
  for (const auto& b : m.named_buffers()) out.emplace_back(b.key(), b.value().detach().clone());
  return out;
}

bool bitwise_equal(const std::vector<std::pair<std::string, torch::Tensor>>& a,
                   const std::vector<std::pair<std::string, torch::Tensor>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first || !a[i].second.sizes().equals(b[i].second.sizes())) return false;
    if (!torch::equal(a[i].second, b[i].second)) return false;
  }
  return true;
}

std::size_t load_weights(torch::nn::Module& m, const std::string& path) {
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path);
  } catch (const c10::Error& e) {
    throw IoError("cannot load weights from " + path + ": " + e.what_without_backtrace());
  }
  torch::NoGradGuard guard;
  std::size_t loaded = 0;
  auto take = [&](const std::string& name, torch::Tensor& target) {
    torch::Tensor t;
    if (archive.try_read(name, t) && t.sizes().equals(target.sizes())) {
      target.copy_(t);
      ++loaded;
    }
  };
  for (auto& p : m.named_parameters()) take(p.key(), p.value());
  for (auto& b : m.named_buffers()) take(b.key(), b.value());
  return loaded;
}

}  // namespace casnet::nets
