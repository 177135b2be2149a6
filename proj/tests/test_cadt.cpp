#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "casnet/cadt.hpp"
#include "casnet/errors.hpp"

using namespace casnet;
using namespace casnet::cadt;

namespace {

using Matrix = std::vector<std::vector<double>>;

Matrix to_matrix(const torch::Tensor& t) {
  const auto d = t.to(torch::kFloat64).contiguous();
  Matrix m(static_cast<std::size_t>(d.size(0)), std::vector<double>(static_cast<std::size_t>(d.size(1))));
  for (int64_t i = 0; i < d.size(0); ++i)
    for (int64_t j = 0; j < d.size(1); ++j) m[i][j] = d[i][j].item<double>();
  return m;
}

// softmax of each row of A·Bᵀ, computed with scalar loops
Matrix oracle_row(const Matrix& a, const Matrix& b) {
  Matrix out(a.size(), std::vector<double>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::vector<double> s(b.size());
    for (std::size_t j = 0; j < b.size(); ++j)
      for (std::size_t k = 0; k < a[i].size(); ++k) s[j] += a[i][k] * b[j][k];
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0;
    for (double& v : s) z += (v = std::exp(v - mx));
    for (std::size_t j = 0; j < b.size(); ++j) out[i][j] = s[j] / z;
  }
  return out;
}

nets::FeatureBundle bundle(const torch::Tensor& content, const torch::Tensor& style) {
  nets::FeatureBundle b;
  b.content = content;
  b.style = style;
  b.channels = content.size(1);
  b.height = b.width = 1;
  b.features = (content + style).view({content.size(0), content.size(1), 1, 1});
  return b;
}

torch::Tensor rand_d(int64_t r, int64_t c, double scale = 1.0) { return torch::randn({r, c}, torch::kFloat64) * scale; }

}  // namespace

TEST(Similarity, HandComputedTwoByTwo) {
  const auto eye = torch::eye(2, torch::kFloat64);
  const auto h = content_similarity_row(eye, eye);
  const double a = std::exp(1.0) / (std::exp(1.0) + 1.0), b = 1.0 / (std::exp(1.0) + 1.0);
  EXPECT_NEAR(h[0][0].item<double>(), 0.7311, 1e-4);
  EXPECT_NEAR(h[0][1].item<double>(), 0.2689, 1e-4);
  EXPECT_NEAR(h[1][0].item<double>(), 0.2689, 1e-4);
  EXPECT_NEAR(h[1][1].item<double>(), 0.7311, 1e-4);
  EXPECT_NEAR(h[0][0].item<double>(), a, 1e-15);
  EXPECT_NEAR(h[0][1].item<double>(), b, 1e-15);
}

TEST(Similarity, AdaptedStyleHandExample) {
  const auto h = torch::tensor({{0.7311, 0.2689}, {0.2689, 0.7311}}, torch::kFloat64);
  const auto s = adapt_style_row(h, torch::eye(2, torch::kFloat64));
  EXPECT_TRUE(torch::allclose(s, h, 0, 1e-15));
}

TEST(Similarity, SingletonBatchIsOne) {
  const auto c = torch::tensor({{123.0, -7.0, 1e3}}, torch::kFloat64);
  EXPECT_EQ(content_similarity_row(c, c * 3).item<double>(), 1.0);
  EXPECT_EQ(content_similarity_col(c, c * 3).item<double>(), 1.0);
}

TEST(Similarity, MatchesScalarOracleWithoutTemperature) {
  torch::manual_seed(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t b = 1 + trial % 5, n = 1 + trial % 7;
    const auto cx = rand_d(b, n, 2.0), cy = rand_d(b, n, 2.0);
    const auto expected = oracle_row(to_matrix(cx), to_matrix(cy));
    const auto got = to_matrix(content_similarity_row(cx, cy));
    // column direction: softmax over columns of CxCyᵀ, transposed, equals row softmax of CyCxᵀ
    const auto expected_col = oracle_row(to_matrix(cy), to_matrix(cx));
    const auto got_col = to_matrix(content_similarity_col(cx, cy));
    for (int64_t i = 0; i < b; ++i)
      for (int64_t j = 0; j < b; ++j) {
        EXPECT_NEAR(got[i][j], expected[i][j], 1e-12);
        EXPECT_NEAR(got_col[i][j], expected_col[i][j], 1e-12);
      }
  }
}

TEST(Similarity, RowStochasticOverTenThousandTrials) {
  torch::manual_seed(6);
  for (int trial = 0; trial < 10000; ++trial) {
    const int64_t b = 1 + trial % 6, n = 1 + (trial / 6) % 9;
    const double scale = trial % 3 == 0 ? 30.0 : 1.0;
    const auto cx = torch::randn({b, n}) * scale, cy = torch::randn({b, n}) * scale;
    const auto s = content_similarity(cx, cy);
    for (const auto& h : {s.h_row, s.h_col}) {
      ASSERT_GE(h.min().item<float>(), 0.0f);
      ASSERT_LE((h.sum(1) - 1).abs().max().item<float>(), 1e-6f) << "trial " << trial;
    }
  }
}

TEST(Similarity, LargeDotProductsStayFinite) {
  const auto cx = torch::full({3, 16384}, 4.0f);
  const auto cy = torch::full({3, 16384}, 5.0f);
  const auto h = content_similarity_row(cx, cy);
  EXPECT_TRUE(torch::isfinite(h).all().item<bool>());
  EXPECT_NEAR(h[0][0].item<float>(), 1.0f / 3.0f, 1e-6);
}

TEST(Similarity, RowShiftInvariance) {
  torch::manual_seed(7);
  const auto cx = rand_d(3, 4), cy = rand_d(3, 4);
  // an extra coordinate of 1 in every C_Y row adds k to row 1 of C_X·C_Yᵀ
  auto cx2 = torch::cat({cx, torch::zeros({3, 1}, torch::kFloat64)}, 1);
  cx2[1][4] = 11.5;
  const auto cy2 = torch::cat({cy, torch::ones({3, 1}, torch::kFloat64)}, 1);
  const auto a = content_similarity_row(cx, cy), b = content_similarity_row(cx2, cy2);
  EXPECT_TRUE(torch::allclose(a, b, 0, 1e-14));
  const auto scores = rand_d(2, 5);
  auto shifted = scores.clone();
  shifted[0] += 100.0;
  EXPECT_TRUE(torch::allclose(stable_row_softmax(scores), stable_row_softmax(shifted), 0, 1e-14));
}

TEST(Similarity, SymmetricScoresGiveEqualRowAndCol) {
  torch::manual_seed(8);
  const auto c = rand_d(4, 6);
  const auto s = content_similarity(c, c);
  EXPECT_TRUE(torch::allclose(s.h_row, s.h_col, 0, 1e-14));
}

TEST(Similarity, ShapeMismatchNamesBothShapes) {
  try {
    content_similarity_row(torch::zeros({2, 3}), torch::zeros({2, 4}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("[2, 3]"), std::string::npos);
    EXPECT_NE(m.find("[2, 4]"), std::string::npos);
  }
  EXPECT_THROW(adapt_style_row(torch::eye(3), torch::zeros({2, 4})), ShapeError);
}

TEST(AdaptStyle, IdentityAndUniformMixing) {
  torch::manual_seed(9);
  const auto s = rand_d(4, 5);
  EXPECT_TRUE(torch::equal(adapt_style_row(torch::eye(4, torch::kFloat64), s), s));
  const auto mean = adapt_style_row(torch::full({4, 4}, 0.25, torch::kFloat64), s);
  for (int64_t i = 0; i < 4; ++i) EXPECT_TRUE(torch::allclose(mean[i], s.mean(0), 0, 1e-14));
}

TEST(AdaptStyle, RowsStayInsideConvexHull) {
  torch::manual_seed(10);
  for (int trial = 0; trial < 500; ++trial) {
    const int64_t b = 1 + trial % 5, n = 1 + trial % 11;
    const auto h = content_similarity_row(rand_d(b, n, 3), rand_d(b, n, 3));
    const auto s = rand_d(b, n);
    const auto mixed = adapt_style_row(h, s);
    const auto lo = std::get<0>(s.min(0)), hi = std::get<0>(s.max(0));
    for (int64_t i = 0; i < b; ++i) {
      ASSERT_TRUE((mixed[i] >= lo - 1e-12).all().item<bool>());
      ASSERT_TRUE((mixed[i] <= hi + 1e-12).all().item<bool>());
    }
  }
}

TEST(Transfer, SingletonBatchEqualsPlainSwap) {
  torch::manual_seed(11);
  const auto x = bundle(rand_d(1, 6), rand_d(1, 6)), y = bundle(rand_d(1, 6), rand_d(1, 6));
  const auto on = transfer_styles(x, y, true), off = transfer_styles(x, y, false);
  EXPECT_TRUE(torch::equal(on.x_to_y, off.x_to_y));
  EXPECT_TRUE(torch::equal(on.y_to_x, off.y_to_x));
}

TEST(Transfer, PlainSwapIsAnInvolution) {
  torch::manual_seed(12);
  const auto cx = rand_d(3, 5), sx = rand_d(3, 5), cy = rand_d(3, 5), sy = rand_d(3, 5);
  const auto once = transfer_styles(bundle(cx, sx), bundle(cy, sy), false);
  EXPECT_TRUE(torch::equal(once.x_to_y, cx + sy));
  EXPECT_TRUE(torch::equal(once.y_to_x, cy + sx));
  const auto twice = transfer_styles(bundle(cx, once.x_to_y - cx), bundle(cy, once.y_to_x - cy), false);
  EXPECT_TRUE(torch::allclose(twice.x_to_y, cx + sx, 0, 1e-14));
  EXPECT_TRUE(torch::allclose(twice.y_to_x, cy + sy, 0, 1e-14));
}

TEST(Transfer, CadtUsesRowAndColumnMixing) {
  torch::manual_seed(13);
  const auto cx = rand_d(3, 4), sx = rand_d(3, 4), cy = rand_d(3, 4), sy = rand_d(3, 4);
  const auto r = transfer_styles(bundle(cx, sx), bundle(cy, sy), true);
  const auto h_row = oracle_row(to_matrix(cx), to_matrix(cy));
  const auto h_col = oracle_row(to_matrix(cy), to_matrix(cx));
  const auto sxm = to_matrix(sx), sym = to_matrix(sy), cxm = to_matrix(cx), cym = to_matrix(cy);
  const auto xy = to_matrix(r.x_to_y), yx = to_matrix(r.y_to_x);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 4; ++k) {
      double a = cxm[i][k], b = cym[i][k];
      for (int j = 0; j < 3; ++j) {
        a += h_row[i][j] * sym[j][k];
        b += h_col[i][j] * sxm[j][k];
      }
      EXPECT_NEAR(xy[i][k], a, 1e-12);
      EXPECT_NEAR(yx[i][k], b, 1e-12);
    }
}

TEST(Transfer, JointPermutationOfYBatch) {
  torch::manual_seed(14);
  for (int64_t b : {2, 3}) {
    const auto cx = rand_d(b, 5), sx = rand_d(b, 5), cy = rand_d(b, 5), sy = rand_d(b, 5);
    const auto base = transfer_styles(bundle(cx, sx), bundle(cy, sy), true);
    std::vector<int64_t> perm(static_cast<std::size_t>(b));
    std::iota(perm.begin(), perm.end(), 0);
    do {
      const auto idx = torch::tensor(perm);
      const auto r = transfer_styles(bundle(cx, sx), bundle(cy.index_select(0, idx), sy.index_select(0, idx)), true);
      EXPECT_TRUE(torch::allclose(r.x_to_y, base.x_to_y, 0, 1e-12));
      EXPECT_TRUE(torch::allclose(r.y_to_x, base.y_to_x.index_select(0, idx), 0, 1e-12));
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
}

TEST(Transfer, MismatchedBundlesRejected) {
  EXPECT_THROW(transfer_styles(bundle(torch::zeros({2, 3}), torch::zeros({2, 3})),
                               bundle(torch::zeros({2, 4}), torch::zeros({2, 4})), true),
               ShapeError);
  EXPECT_THROW(transfer_styles(bundle(torch::zeros({2, 3}), torch::zeros({2, 3})),
                               bundle(torch::zeros({3, 3}), torch::zeros({3, 3})), false),
               ShapeError);
}
