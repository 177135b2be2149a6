#include <gtest/gtest.h>

#include "casnet/errors.hpp"
#include "casnet/networks.hpp"

using namespace casnet;
using namespace casnet::nets;

namespace {

torch::Tensor images(int64_t b, int64_t side, std::uint64_t seed = 0) {
  torch::manual_seed(seed);
  return torch::rand({b, 3, side, side}) * 2 - 1;
}

double max_abs(const torch::Tensor& t) { return t.abs().max().item<double>(); }

}  // namespace

TEST(Encoder, ShapeAt64) {
  auto e = make_seeded<CasEncoder>(1);
  EXPECT_EQ(e->forward(images(2, 64)).sizes(), (std::vector<int64_t>{2, 64, 16, 16}));
}

TEST(Encoder, ShapeAt512) {
  torch::NoGradGuard ng;
  auto e = make_seeded<CasEncoder>(1);
  EXPECT_EQ(e->forward(images(1, 512)).sizes(), (std::vector<int64_t>{1, 64, 128, 128}));
}

TEST(Encoder, PureGivenParamsAndInput) {
  auto e = make_seeded<CasEncoder>(2);
  e->eval();
  const auto x = images(2, 32);
  EXPECT_TRUE(torch::equal(e->forward(x), e->forward(x)));
}

TEST(Encoder, RejectsBadShapes) {
  auto e = make_seeded<CasEncoder>(1);
  EXPECT_THROW(e->forward(images(1, 66)), ShapeError);
  EXPECT_THROW(e->forward(torch::zeros({1, 3, 64, 32})), ShapeError);
  EXPECT_THROW(e->forward(torch::zeros({1, 1, 64, 64})), ShapeError);
}

TEST(Separator, AdditiveDisentanglementIsExact) {
  auto e = make_seeded<CasEncoder>(3);
  auto s = make_seeded<CasSeparator>(4);
  const auto f = e->forward(images(2, 64));
  const auto b = s->forward(f);
  EXPECT_EQ(b.content.sizes(), (std::vector<int64_t>{2, 16384}));
  EXPECT_EQ(b.style.sizes(), (std::vector<int64_t>{2, 16384}));
  // float addition of (f - c) + c can round, so compare against float eps
  const auto rebuilt = b.unflatten(b.content + b.style);
  EXPECT_LE(max_abs(rebuilt - f), 1e-6 * std::max(1.0, max_abs(f)));
  EXPECT_TRUE(torch::equal(b.unflatten(b.style), f - b.unflatten(b.content)));
}

TEST(Separator, ZeroParamsGiveZeroContent) {
  auto s = make_seeded<CasSeparator>(4);
  {
    torch::NoGradGuard ng;
    for (auto& p : s->parameters()) p.zero_();
  }
  const auto f = torch::rand({2, 64, 8, 8});
  const auto b = s->forward(f);
  EXPECT_EQ(max_abs(b.content), 0.0);
  EXPECT_TRUE(torch::equal(b.style, f.flatten(1)));
}

TEST(Separator, WrongChannelsIsShapeError) {
  auto s = make_seeded<CasSeparator>(4);
  EXPECT_THROW(s->forward(torch::zeros({1, 32, 8, 8})), ShapeError);
}

TEST(Generator, ShapeAndRange) {
  auto g = make_seeded<CasGenerator>(5, 16);
  torch::manual_seed(9);
  const auto c = torch::randn({2, 16384}) * 5;
  const auto s = torch::randn({2, 16384}) * 5;
  const auto y = g->forward(c, s);
  EXPECT_EQ(y.sizes(), (std::vector<int64_t>{2, 3, 64, 64}));
  EXPECT_LE(max_abs(y), 1.0);
}

TEST(Generator, MismatchedNIsShapeError) {
  auto g = make_seeded<CasGenerator>(5, 16);
  EXPECT_THROW(g->forward(torch::zeros({2, 100}), torch::zeros({2, 100})), ShapeError);
  EXPECT_THROW(g->forward(torch::zeros({2, 16384}), torch::zeros({1, 16384})), ShapeError);
}

class RoundTrip : public ::testing::TestWithParam<int> {};

TEST_P(RoundTrip, GeneratorOfSeparatorOfEncoderKeepsShape) {
  const int side = GetParam();
  torch::NoGradGuard ng;
  auto e = make_seeded<CasEncoder>(1);
  auto s = make_seeded<CasSeparator>(2);
  auto g = make_seeded<CasGenerator>(3, side / 4);
  const auto x = images(1, side, static_cast<std::uint64_t>(side));
  const auto b = s->forward(e->forward(x));
  const auto y = g->forward(b.content, b.style);
  EXPECT_EQ(y.sizes(), x.sizes());
  EXPECT_LE(max_abs(y), 1.0);
}

INSTANTIATE_TEST_SUITE_P(Sizes, RoundTrip, ::testing::Values(32, 48, 64, 96, 512));

TEST(PatchDiscriminator, ShapeAndFiniteOnConstantInput) {
  auto d = make_seeded<PatchDiscriminator>(6);
  const auto out = d->forward(images(2, 64));
  ASSERT_EQ(out.dim(), 4);
  EXPECT_EQ(out.size(0), 2);
  EXPECT_EQ(out.size(1), 1);
  EXPECT_GE(out.size(2), 1);
  EXPECT_GE(out.size(3), 1);
  EXPECT_TRUE(torch::isfinite(d->forward(torch::full({1, 3, 64, 64}, 0.7))).all().item<bool>());
  EXPECT_THROW(d->forward(images(1, 16)), ShapeError);
}

TEST(PatchDiscriminator, EveryLayerNormalizedAgainstSvdOracle) {
  auto d = make_seeded<PatchDiscriminator>(7);
  d->train();
  torch::NoGradGuard ng;
  for (auto& layer : d->layers) {
    for (int i = 0; i < 20; ++i) layer->effective_weight();
    auto w = spectral_normalize(layer->weight_matrix(), layer->u, layer->v, false).weight;
    const double s = top_singular_value(w);
    EXPECT_LE(s, 1.0 + 1e-3);
    EXPECT_GE(s, 1.0 - 1e-2);
  }
}

TEST(SpectralNorm, DiagonalThreeOne) {
  const auto w = torch::tensor({{3.0, 0.0}, {0.0, 1.0}}, torch::kFloat64);
  torch::manual_seed(1);
  auto u = torch::randn({2}, torch::kFloat64);
  auto v = torch::randn({2}, torch::kFloat64);
  SpectralResult r;
  for (int i = 0; i < 20; ++i) r = spectral_normalize(w, u, v, true);
  EXPECT_NEAR(top_singular_value(r.weight), 1.0, 1e-3);
  EXPECT_NEAR(r.sigma.item<double>(), 3.0, 1e-3);
}

TEST(SpectralNorm, OrthogonalMatrixComesBackUnchanged) {
  torch::manual_seed(2);
  const auto q = std::get<0>(torch::linalg_qr(torch::randn({5, 5}, torch::kFloat64)));
  auto u = torch::randn({5}, torch::kFloat64);
  auto v = torch::randn({5}, torch::kFloat64);
  SpectralResult r;
  for (int i = 0; i < 3; ++i) r = spectral_normalize(q, u, v, true);
  EXPECT_TRUE(torch::allclose(r.weight, q, 1e-9, 1e-9));
}

TEST(SpectralNorm, ScaleInvariant) {
  torch::manual_seed(3);
  const auto w = torch::randn({4, 6}, torch::kFloat64);
  auto u0 = torch::randn({4}, torch::kFloat64), v0 = torch::randn({6}, torch::kFloat64);
  auto u1 = u0.clone(), v1 = v0.clone();
  SpectralResult a, b;
  for (int i = 0; i < 5; ++i) {
    a = spectral_normalize(w, u0, v0, true);
    b = spectral_normalize(w * 7.5, u1, v1, true);
  }
  EXPECT_TRUE(torch::allclose(a.weight, b.weight, 1e-12, 1e-12));
}

TEST(SpectralNorm, ZeroMatrixUnchangedWithClampedSigma) {
  const auto w = torch::zeros({3, 3}, torch::kFloat64);
  auto u = torch::ones({3}, torch::kFloat64), v = torch::ones({3}, torch::kFloat64);
  const auto r = spectral_normalize(w, u, v, true);
  EXPECT_DOUBLE_EQ(r.sigma.item<double>(), 1e-12);
  EXPECT_TRUE(torch::equal(r.weight, w));
}

TEST(SpectralNorm, NonMatrixIsShapeError) {
  auto u = torch::ones({3}), v = torch::ones({3});
  EXPECT_THROW(spectral_normalize(torch::zeros({3, 3, 1}), u, v, true), ShapeError);
  EXPECT_THROW(spectral_normalize(torch::zeros({4, 3}), u, v, true), ShapeError);
}

TEST(CycleGenerator, ShapeRangePurity) {
  torch::NoGradGuard ng;
  auto g = make_seeded<CycleGenerator>(8);
  g->eval();
  const auto x = images(2, 64);
  const auto y = g->forward(x);
  EXPECT_EQ(y.sizes(), x.sizes());
  EXPECT_LE(max_abs(y), 1.0);
  EXPECT_TRUE(torch::equal(y, g->forward(x)));
  EXPECT_THROW(g->forward(images(1, 60)), ShapeError);
}

TEST(CycleDiscriminator, ProbabilitiesPerItem) {
  auto d = make_seeded<CycleDiscriminator>(9, 64);
  const auto p = d->forward(images(4, 64));
  EXPECT_EQ(p.sizes(), (std::vector<int64_t>{4}));
  EXPECT_GT(p.min().item<double>(), 0.0);
  EXPECT_LT(p.max().item<double>(), 1.0);
}

TEST(CycleDiscriminator, FlattenWidth3136At448) {
  EXPECT_EQ(cyclegan_flatten_width(448), 3136);
  torch::NoGradGuard ng;
  auto d = make_seeded<CycleDiscriminator>(9, 448);
  EXPECT_EQ(d->flatten_width(), 3136);
  EXPECT_EQ(d->forward(images(1, 448)).sizes(), (std::vector<int64_t>{1}));
}

TEST(CycleDiscriminator, SizeMismatchNamesBothWidths) {
  auto d = make_seeded<CycleDiscriminator>(9, 64);
  try {
    d->forward(images(1, 128));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("64"), std::string::npos);
    EXPECT_NE(msg.find("256"), std::string::npos);
  }
  EXPECT_THROW(cyclegan_flatten_width(100), ParameterError);
}

TEST(Perceptual, FiveTapsFrozenAndPure) {
  PerceptualOptions o;
  o.width_divisor = 4;
  auto p = make_seeded<PerceptualNet>(10, o);
  const auto x = images(2, 64);
  const auto a = p->forward(x);
  const auto b = p->forward(x);
  ASSERT_EQ(a.size(), 5u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(torch::equal(a[i], b[i]));
  for (const auto& param : p->parameters()) EXPECT_FALSE(param.requires_grad());
}

TEST(Perceptual, UnchangedByAnOptimizerStepThroughIt) {
  PerceptualOptions o;
  o.width_divisor = 4;
  auto p = make_seeded<PerceptualNet>(10, o);
  const auto before = snapshot(*p);
  auto x = images(1, 32).requires_grad_(true);
  torch::optim::Adam opt({x}, torch::optim::AdamOptions(0.1));
  auto loss = torch::zeros({});
  for (const auto& f : p->forward(x)) loss = loss + f.pow(2).mean();
  loss.backward();
  opt.step();
  EXPECT_TRUE(bitwise_equal(before, snapshot(*p)));
}

TEST(Perceptual, UnknownTapIsParameterError) {
  PerceptualOptions o;
  o.taps = {"relu9_9"};
  EXPECT_THROW(PerceptualNet{o}, ParameterError);
}

namespace {

ClassifierOptions small_classifier() {
  ClassifierOptions o;
  o.width_divisor = 4;
  o.input_size = 0;
  return o;
}

}  // namespace

TEST(Classifier, ProbabilitiesPerItemInOpenInterval) {
  torch::NoGradGuard ng;
  auto c = make_seeded<Classifier>(11, small_classifier());
  c->eval();
  const auto p = c->forward(images(32, 64));
  EXPECT_EQ(p.sizes(), (std::vector<int64_t>{32}));
  EXPECT_GT(p.min().item<double>(), 0.0);
  EXPECT_LT(p.max().item<double>(), 1.0);
}

TEST(Classifier, EvalDeterministicTrainStochastic) {
  auto c = make_seeded<Classifier>(11, small_classifier());
  const auto x = images(4, 64);
  c->eval();
  EXPECT_TRUE(torch::equal(c->forward(x), c->forward(x)));
  c->train();
  torch::manual_seed(1);
  const auto a = c->penultimate(x);
  const auto b = c->penultimate(x);
  EXPECT_FALSE(torch::equal(a, b));
}

TEST(Classifier, DefaultResizesTo224AndAcceptsAnySize) {
  torch::NoGradGuard ng;
  ClassifierOptions o;
  o.width_divisor = 16;
  auto c = make_seeded<Classifier>(12, o);
  c->eval();
  EXPECT_EQ(c->forward(images(1, 40)).sizes(), (std::vector<int64_t>{1}));
  EXPECT_THROW(c->forward(images(1, 16)), ShapeError);
}

TEST(Classifier, FrozenPrefixSplitMatchesFullForward) {
  torch::NoGradGuard ng;
  auto c = make_seeded<Classifier>(13, small_classifier());
  c->eval();
  const auto x = images(3, 64);
  EXPECT_TRUE(torch::equal(c->logits(x), c->logits_from_prefix(c->frozen_prefix(x))));
}

TEST(Classifier, FreezeLeavesOnlyFinalConvAndHeadTrainable) {
  auto c = make_seeded<Classifier>(13, small_classifier());
  c->freeze_backbone();
  const auto frozen = c->frozen_parameters();
  EXPECT_EQ(frozen.size(), 24u);  // 12 of the 13 convs, weight and bias each
  for (const auto& p : frozen) EXPECT_FALSE(p.requires_grad());
  std::size_t trainable = 0;
  for (const auto& p : c->parameters()) trainable += p.requires_grad();
  EXPECT_EQ(trainable, 2u + 6u);
}

TEST(Init, SameSeedBitIdenticalDifferentSeedNot) {
  EXPECT_TRUE(bitwise_equal(snapshot(*make_seeded<CasEncoder>(21)), snapshot(*make_seeded<CasEncoder>(21))));
  EXPECT_FALSE(bitwise_equal(snapshot(*make_seeded<CasEncoder>(21)), snapshot(*make_seeded<CasEncoder>(22))));
  EXPECT_TRUE(bitwise_equal(snapshot(*make_seeded<PatchDiscriminator>(5)),
                            snapshot(*make_seeded<PatchDiscriminator>(5))));
}

TEST(Init, SeedScopeRestoresGlobalGenerator) {
  torch::manual_seed(77);
  const auto expected = torch::rand({3});
  torch::manual_seed(77);
  { auto unused = make_seeded<CasSeparator>(1); }
  EXPECT_TRUE(torch::equal(torch::rand({3}), expected));
}

TEST(Init, AllParametersFinite) {
  auto check = [](const torch::nn::Module& m) {
    for (const auto& p : m.parameters()) EXPECT_TRUE(torch::isfinite(p).all().item<bool>());
  };
  check(*make_seeded<CasEncoder>(1));
  check(*make_seeded<CasSeparator>(1));
  check(*make_seeded<CasGenerator>(1, 16));
  check(*make_seeded<PatchDiscriminator>(1));
  check(*make_seeded<CycleGenerator>(1));
  check(*make_seeded<CycleDiscriminator>(1, 64));
}
