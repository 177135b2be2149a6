#include "casnet/losses.hpp"

#include <cmath>
#include <sstream>

#include "casnet/errors.hpp"

namespace casnet::losses {

namespace {

std::string shape_str(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

void check_taps(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b,
                const std::vector<std::size_t>& taps) {
  if (a.size() != b.size())
    throw ShapeError("feature lists differ in length: " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  for (auto t : taps)
    if (t >= a.size())
      throw ParameterError("tap index " + std::to_string(t) + " out of range for " + std::to_string(a.size()) +
                           " feature maps");
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {adversarial, reconstruction, consistency, content, style})
    if (!std::isfinite(w) || w < 0.0) throw ParameterError("loss weights must be finite and >= 0");
}

torch::Tensor gram(const torch::Tensor& features) {
  if (features.dim() != 4) throw ShapeError("gram expects B×C×h×w, got " + shape_str(features));
  const auto b = features.size(0), c = features.size(1), hw = features.size(2) * features.size(3);
  const auto f = features.reshape({b, c, hw});
  return f.bmm(f.transpose(1, 2)) / static_cast<double>(c * hw);
}

torch::Tensor adversarial_loss_casnet(const torch::Tensor& real_logits, const torch::Tensor& fake_logits,
                                      AdversarialRole role) {
  if (role == AdversarialRole::Generator) return (fake_logits - 1.0).pow(2).mean();
  return (real_logits - 1.0).pow(2).mean() + fake_logits.pow(2).mean();
}

torch::Tensor adversarial_loss_cyclegan(const torch::Tensor& real_prob, const torch::Tensor& fake_prob,
                                        AdversarialRole role) {
  namespace F = torch::nn::functional;
  const auto bce = [](const torch::Tensor& p, double target) {
    return F::binary_cross_entropy(p, torch::full_like(p, target));
  };
  if (role == AdversarialRole::Generator) return bce(fake_prob, 1.0);
  return bce(real_prob, 1.0) + bce(fake_prob, 0.0);
}

torch::Tensor reconstruction_loss(const torch::Tensor& x, const torch::Tensor& x_rec) {
  if (!x.sizes().equals(x_rec.sizes()))
    throw ShapeError("reconstruction shapes differ: " + shape_str(x) + " vs " + shape_str(x_rec));
  return (x - x_rec).abs().mean();
}

torch::Tensor consistency_loss(const torch::Tensor& content_converted, const torch::Tensor& content_original) {
  if (!content_converted.sizes().equals(content_original.sizes()))
    throw ShapeError("consistency shapes differ: " + shape_str(content_converted) + " vs " +
                     shape_str(content_original));
  return (content_converted - content_original).pow(2).mean();
}

torch::Tensor perceptual_content_loss(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b,
                                      const std::vector<std::size_t>& taps) {
  check_taps(a, b, taps);
  torch::Tensor total = torch::zeros({}, a.empty() ? torch::TensorOptions() : a.front().options());
  for (auto t : taps) total = total + (a[t] - b[t]).pow(2).mean();
  return total;
}

torch::Tensor perceptual_style_loss(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b,
                                    const std::vector<std::size_t>& taps) {
  check_taps(a, b, taps);
  torch::Tensor total = torch::zeros({}, a.empty() ? torch::TensorOptions() : a.front().options());
  for (auto t : taps) total = total + (gram(a[t]) - gram(b[t])).pow(2).mean();
  return total;
}

torch::Tensor mixed_style_loss(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b,
                               const torch::Tensor& mix, const std::vector<std::size_t>& taps) {
  check_taps(a, b, taps);
  torch::Tensor total = torch::zeros({}, a.empty() ? torch::TensorOptions() : a.front().options());
  for (auto t : taps) {
    const auto ga = gram(a[t]);
    const auto gb = gram(b[t]);
    const auto c = gb.size(1);
    if (mix.dim() != 2 || mix.size(0) != ga.size(0) || mix.size(1) != gb.size(0))
      throw ShapeError("style mixing matrix " + shape_str(mix) + " does not fit batches");
    const auto target = mix.mm(gb.reshape({gb.size(0), c * c})).reshape({ga.size(0), c, c});
    total = total + (ga - target).pow(2).mean();
  }
  return total;
}

LossBreakdown total_casnet_loss(const LossTerms& terms, const LossWeights& weights, long step) {
  weights.validate();
  const std::pair<const char*, const torch::Tensor*> named[] = {{"adversarial", &terms.adversarial},
                                                                {"reconstruction", &terms.reconstruction},
                                                                {"consistency", &terms.consistency},
                                                                {"content", &terms.content},
                                                                {"style", &terms.style}};
  const double w[] = {weights.adversarial, weights.reconstruction, weights.consistency, weights.content,
                      weights.style};
  LossBreakdown out;
  for (std::size_t i = 0; i < std::size(named); ++i) {
    const auto& [name, t] = named[i];
    if (!t->defined()) throw ParameterError(std::string("loss term '") + name + "' is missing");
    const double value = t->detach().item<double>();
    if (!std::isfinite(value))
      throw DivergenceError(name, step, std::string("non-finite loss term '") + name + "' at step " +
                                            std::to_string(step));
    out.terms[name] = value;
    const auto weighted = *t * w[i];
    out.total = out.total.defined() ? out.total + weighted : weighted;
  }
  return out;
}

}  // namespace casnet::losses
