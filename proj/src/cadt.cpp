#include "casnet/cadt.hpp"

#include <sstream>

#include "casnet/errors.hpp"

namespace casnet::cadt {

namespace {

std::string shape_str(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

void check_pair(const torch::Tensor& c_x, const torch::Tensor& c_y) {
  if (c_x.dim() != 2 || c_y.dim() != 2 || !c_x.sizes().equals(c_y.sizes()))
    throw ShapeError("content factors must both be B×N, got C_X " + shape_str(c_x) + " and C_Y " + shape_str(c_y));
}

void check_mix(const torch::Tensor& h, const torch::Tensor& s) {
  if (h.dim() != 2 || h.size(0) != h.size(1) || s.dim() != 2 || s.size(0) != h.size(1))
    throw ShapeError("mixing matrix " + shape_str(h) + " does not fit styles " + shape_str(s));
}

}  // namespace

torch::Tensor stable_row_softmax(const torch::Tensor& scores) {
  const auto shifted = scores - std::get<0>(scores.max(1, /*keepdim=*/true)).detach();
  const auto e = shifted.exp();
  return e / e.sum(1, /*keepdim=*/true);
}

torch::Tensor content_similarity_row(const torch::Tensor& c_x, const torch::Tensor& c_y) {
  check_pair(c_x, c_y);
  return stable_row_softmax(c_x.mm(c_y.t()));
}

torch::Tensor content_similarity_col(const torch::Tensor& c_x, const torch::Tensor& c_y) {
  check_pair(c_x, c_y);
  // Column softmax of M, transposed, equals row softmax of Mᵀ.
  return stable_row_softmax(c_y.mm(c_x.t()));
}

ContentSimilarity content_similarity(const torch::Tensor& c_x, const torch::Tensor& c_y) {
  check_pair(c_x, c_y);
  const auto m = c_x.mm(c_y.t());
  return {stable_row_softmax(m), stable_row_softmax(m.t())};
}

torch::Tensor adapt_style_row(const torch::Tensor& h_row, const torch::Tensor& s_y) {
  check_mix(h_row, s_y);
  return h_row.mm(s_y);
}

torch::Tensor adapt_style_col(const torch::Tensor& h_col, const torch::Tensor& s_x) {
  check_mix(h_col, s_x);
  return h_col.mm(s_x);
}

TransferResult transfer_styles(const nets::FeatureBundle& x, const nets::FeatureBundle& y, bool cadt_enabled) {
  if (x.content.dim() != 2 || y.content.dim() != 2 || x.dim() != y.dim())
    throw ShapeError("feature bundles disagree on N: " + shape_str(x.content) + " vs " + shape_str(y.content));
  if (x.batch() != y.batch())
    throw ShapeError("feature bundles disagree on batch size: " + shape_str(x.content) + " vs " +
                     shape_str(y.content));
  TransferResult r;
  if (!cadt_enabled) {
    const auto eye = torch::eye(x.batch(), x.content.options());
    r.x_to_y = x.content + y.style;
    r.y_to_x = y.content + x.style;
    r.mix_x_to_y = eye;
    r.mix_y_to_x = eye;
    return r;
  }
  const auto sim = content_similarity(x.content, y.content);
  r.x_to_y = x.content + adapt_style_row(sim.h_row, y.style);
  r.y_to_x = y.content + adapt_style_col(sim.h_col, x.style);
  r.mix_x_to_y = sim.h_row;
  r.mix_y_to_x = sim.h_col;
  return r;
}

}  // namespace casnet::cadt
