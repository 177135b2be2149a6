#pragma once

#include <torch/torch.h>

#include <map>
#include <string>
#include <vector>

namespace casnet::losses {

struct LossWeights {
  double adversarial = 1.0;
  double reconstruction = 10.0;
  double consistency = 1.0;
  double content = 1.0;
  double style = 1e3;

  // Throws ParameterError on negative or non-finite weights.
  void validate() const;
};

// Per-item Gram matrix G = F·Fᵀ / (C·h·w), F the C×(h·w) unfolding. B×C×C.
torch::Tensor gram(const torch::Tensor& features);

enum class AdversarialRole { Generator, Discriminator };

// Least-squares GAN objective on patch logits.
//   discriminator: mean((real − 1)²) + mean(fake²)
//   generator:     mean((fake − 1)²)          (real is ignored)
torch::Tensor adversarial_loss_casnet(const torch::Tensor& real_logits, const torch::Tensor& fake_logits,
                                      AdversarialRole role);

// Binary cross-entropy on discriminator probabilities (CycleGAN baseline).
//   discriminator: BCE(real, 1) + BCE(fake, 0);  generator: BCE(fake, 1)
torch::Tensor adversarial_loss_cyclegan(const torch::Tensor& real_prob, const torch::Tensor& fake_prob,
                                        AdversarialRole role);

// Mean absolute error; ShapeError on mismatched shapes.
torch::Tensor reconstruction_loss(const torch::Tensor& x, const torch::Tensor& x_rec);

// Mean squared error between re-separated content and the original content.
torch::Tensor consistency_loss(const torch::Tensor& content_converted, const torch::Tensor& content_original);

// Sum over `taps` of mean squared feature difference. ParameterError for an
// out-of-range tap, ShapeError for lists of different length.
torch::Tensor perceptual_content_loss(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b,
                                      const std::vector<std::size_t>& taps);

// Sum over `taps` of mean squared Gram difference.
torch::Tensor perceptual_style_loss(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b,
                                    const std::vector<std::size_t>& taps);

// Style loss against per-item target Grams given as a mixture of b's Grams:
// target_i = Σ_j mix[i, j]·gram(b_j). With mix = I it is perceptual_style_loss.
torch::Tensor mixed_style_loss(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b,
                               const torch::Tensor& mix, const std::vector<std::size_t>& taps);

struct LossTerms {
  torch::Tensor adversarial, reconstruction, consistency, content, style;
};

struct LossBreakdown {
  torch::Tensor total;
  std::map<std::string, double> terms;  // unweighted values, for logging
};

// Weighted sum. A non-finite term raises DivergenceError naming it.
LossBreakdown total_casnet_loss(const LossTerms& terms, const LossWeights& weights, long step = -1);

}  // namespace casnet::losses
