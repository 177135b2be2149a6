#pragma once

// Content-Adaptive Domain Transfer.
//
// For content factors C_X, C_Y (B×N) the raw similarity M = C_X·C_Yᵀ is turned
// into two mixing matrices:
//   h_row = softmax over each row of M        (X item i → weights over Y items)
//   h_col = (softmax over each column of M)ᵀ  (Y item j → weights over X items)
// Styles are mixed with them before the swap: X→Y uses h_row·S_Y and Y→X uses
// h_col·S_X. There is no temperature; the softmax sees the raw dot products
// (max-subtracted for stability).

#include <torch/torch.h>

#include <utility>

#include "casnet/networks.hpp"

namespace casnet::cadt {

struct ContentSimilarity {
  torch::Tensor h_row;  // B×B, rows sum to 1
  torch::Tensor h_col;  // B×B, rows sum to 1 (column softmax, transposed)
};

// Softmax along dim 1 with the row maximum subtracted first.
torch::Tensor stable_row_softmax(const torch::Tensor& scores);

torch::Tensor content_similarity_row(const torch::Tensor& c_x, const torch::Tensor& c_y);
torch::Tensor content_similarity_col(const torch::Tensor& c_x, const torch::Tensor& c_y);
ContentSimilarity content_similarity(const torch::Tensor& c_x, const torch::Tensor& c_y);

// h (B×B) times styles (B×N). Each output row is a convex combination of the
// style rows when h is row-stochastic.
torch::Tensor adapt_style_row(const torch::Tensor& h_row, const torch::Tensor& s_y);
torch::Tensor adapt_style_col(const torch::Tensor& h_col, const torch::Tensor& s_x);

struct TransferResult {
  torch::Tensor x_to_y;  // B×N features: content_X + adapted style of Y
  torch::Tensor y_to_x;  // B×N features: content_Y + adapted style of X
  // Mixing matrices actually used (identity for the plain swap).
  torch::Tensor mix_x_to_y, mix_y_to_x;
};

TransferResult transfer_styles(const nets::FeatureBundle& x, const nets::FeatureBundle& y, bool cadt_enabled);

}  // namespace casnet::cadt
