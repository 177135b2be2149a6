#include "casnet/evalkit.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "casnet/errors.hpp"
#include "casnet/figures.hpp"

namespace casnet::eval {

namespace {

double ratio(int64_t num, int64_t den, bool& undefined) {
  undefined = den == 0;
  return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

MetricsReport metrics_from_counts(int64_t tp, int64_t fp, int64_t tn, int64_t fn, double threshold,
                                  std::string dataset_id) {
  if (tp < 0 || fp < 0 || tn < 0 || fn < 0) throw ParameterError("confusion counts must be non-negative");
  MetricsReport r;
  r.tp = tp;
  r.fp = fp;
  r.tn = tn;
  r.fn = fn;
  r.threshold = threshold;
  r.dataset_id = std::move(dataset_id);
  bool acc_undefined = false;
  r.accuracy = ratio(tp + tn, r.total(), acc_undefined);
  r.precision = ratio(tp, tp + fp, r.precision_undefined);
  r.recall = ratio(tp, tp + fn, r.recall_undefined);
  const double pr = r.precision + r.recall;
  r.f1_undefined = pr == 0.0;
  r.f1 = r.f1_undefined ? 0.0 : 2.0 * r.precision * r.recall / pr;
  return r;
}

MetricsReport metrics_from_predictions(const std::vector<double>& probs, const std::vector<int>& labels,
                                       double threshold, std::string dataset_id) {
  if (probs.size() != labels.size()) throw ShapeError("predictions and labels differ in length");
  if (probs.empty()) throw ParameterError("cannot compute metrics over zero items");
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool predicted = probs[i] >= threshold;
    const bool actual = labels[i] != 0;
    if (predicted && actual) ++tp;
    else if (predicted) ++fp;
    else if (actual) ++fn;
    else ++tn;
  }
  return metrics_from_counts(tp, fp, tn, fn, threshold, std::move(dataset_id));
}

MetricsReport evaluate(nets::Classifier& model, const train::ImageSet& data, double threshold,
                       std::string dataset_id) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ParameterError("threshold must lie in (0, 1)");
  if (data.size() == 0) throw ParameterError("cannot evaluate on an empty dataset");
  const auto probs = train::predict(model, data.images).to(torch::kDouble).contiguous();
  const auto labels = data.labels.contiguous();
  std::vector<double> p(probs.data_ptr<double>(), probs.data_ptr<double>() + probs.numel());
  std::vector<int> l(static_cast<std::size_t>(labels.numel()));
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = labels.data_ptr<float>()[i] > 0.5f ? 1 : 0;
  return metrics_from_predictions(p, l, threshold, std::move(dataset_id));
}

MetricsReport evaluate(const std::filesystem::path& checkpoint, const DatasetManifest& data, double threshold) {
  if (data.entries.empty()) throw ParameterError("cannot evaluate on an empty manifest");
  auto model = train::load_classifier(checkpoint);
  const auto set = train::load_image_set(data);
  return evaluate(model, set, threshold, data.root.filename().string());
}

std::string report_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["format"] = "casnet-metrics-1";
  j["dataset_id"] = r.dataset_id;
  j["threshold"] = r.threshold;
  j["tp"] = r.tp;
  j["fp"] = r.fp;
  j["tn"] = r.tn;
  j["fn"] = r.fn;
  j["accuracy"] = r.accuracy;
  j["f1"] = r.f1;
  j["recall"] = r.recall;
  j["precision"] = r.precision;
  j["undefined"] = {{"precision", r.precision_undefined}, {"recall", r.recall_undefined}, {"f1", r.f1_undefined}};
  return j.dump(2) + "\n";
}

MetricsReport parse_report_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    auto r = metrics_from_counts(j.at("tp"), j.at("fp"), j.at("tn"), j.at("fn"), j.at("threshold"),
                                 j.at("dataset_id"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed metrics report: ") + e.what());
  }
}

void save_report(const MetricsReport& r, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  out << report_json(r);
}

MetricsReport load_report(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw MissingArtifactError("metrics report not found: " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_report_json(ss.str());
}

// ---------------------------------------------------------------------------

ConfusionMatrix confusion_matrix(const MetricsReport& r) {
  ConfusionMatrix m;
  m.cells = {{{r.tp, r.fn}, {r.fp, r.tn}}};
  return m;
}

std::string render_confusion_text(const ConfusionMatrix& m, const std::string& title) {
  std::ostringstream os;
  os << "confusion matrix";
  if (!title.empty()) os << ": " << title;
  os << "\n";
  char line[128];
  std::snprintf(line, sizeof line, "%-18s %14s %17s\n", "", "pred_deformed", "pred_nondeformed");
  os << line;
  std::snprintf(line, sizeof line, "%-18s %14lld %17lld\n", "true_deformed", static_cast<long long>(m.cells[0][0]),
                static_cast<long long>(m.cells[0][1]));
  os << line;
  std::snprintf(line, sizeof line, "%-18s %14lld %17lld\n", "true_nondeformed",
                static_cast<long long>(m.cells[1][0]), static_cast<long long>(m.cells[1][1]));
  os << line;
  return os.str();
}

ConfusionMatrix parse_confusion_text(const std::string& text) {
  ConfusionMatrix m;
  bool seen[2] = {false, false};
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) {
    std::istringstream ls(line);
    std::string head;
    ls >> head;
    const int row = head == "true_deformed" ? 0 : head == "true_nondeformed" ? 1 : -1;
    if (row < 0) continue;
    long long a = 0, b = 0;
    if (!(ls >> a >> b)) throw IoError("malformed confusion row: " + line);
    m.cells[row] = {a, b};
    seen[row] = true;
  }
  if (!seen[0] || !seen[1]) throw IoError("confusion text lacks a row");
  return m;
}

Rgb8 render_confusion_png(const ConfusionMatrix& m, const std::string& title) {
  constexpr int kCell = 110, kLeft = 130, kTop = 60;
  Rgb8 img(kTop + 2 * kCell + 40, kLeft + 2 * kCell + 20);
  const double total = std::max<int64_t>(1, m.total());
  fig::draw_text(img, 10, 10, title.empty() ? "CONFUSION MATRIX" : title, fig::kBlack, 2);
  fig::draw_text(img, kLeft + 10, kTop - 14, "PRED DEFORMED", fig::kBlack);
  fig::draw_text(img, kLeft + kCell + 10, kTop - 14, "PRED NONDEFORMED", fig::kBlack);
  fig::draw_text(img, 8, kTop + kCell / 2 - 3, "TRUE DEFORMED", fig::kBlack);
  fig::draw_text(img, 8, kTop + kCell + kCell / 2 - 3, "TRUE NONDEFORMED", fig::kBlack);
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      const double share = static_cast<double>(m.cells[r][c]) / total;
      const auto shade = static_cast<std::uint8_t>(std::lround(255.0 - 200.0 * share));
      const fig::Color fill{shade, shade, 255};
      const int x0 = kLeft + c * kCell, y0 = kTop + r * kCell;
      fig::fill_rect(img, x0, y0, x0 + kCell, y0 + kCell, fill);
      fig::draw_rect(img, x0, y0, x0 + kCell, y0 + kCell, fig::kBlack);
      const auto label = std::to_string(m.cells[r][c]);
      const auto color = share > 0.5 ? fig::kWhite : fig::kBlack;
      fig::draw_text(img, x0 + (kCell - fig::text_width(label, 3)) / 2, y0 + kCell / 2 - 10, label, color, 3);
    }
  }
  return img;
}

// ---------------------------------------------------------------------------

PcaProjection pca_features(const Eigen::MatrixXd& data, const std::vector<std::string>& tags, int k) {
  const Eigen::Index n = data.rows(), d = data.cols();
  if (k < 1 || k > std::min(n, d))
    throw ParameterError("pca needs 1 <= k <= min(n, D); got k=" + std::to_string(k) + " for " + std::to_string(n) +
                         "×" + std::to_string(d));
  if (!tags.empty() && static_cast<Eigen::Index>(tags.size()) != n)
    throw ShapeError("pca tags must match the number of rows");
  PcaProjection p;
  p.tags = tags;
  p.mean = data.colwise().mean();
  const Eigen::MatrixXd x = data.rowwise() - p.mean;
  const double denom = static_cast<double>(std::max<Eigen::Index>(1, n - 1));
  p.total_variance = x.squaredNorm() / denom;
  p.components.resize(k, d);
  p.explained_variance.resize(k);

  std::vector<bool> filled(static_cast<std::size_t>(k), false);
  if (d <= n) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x.transpose() * x / denom);
    for (int i = 0; i < k; ++i) {
      p.explained_variance(i) = std::max(0.0, es.eigenvalues()(d - 1 - i));
      p.components.row(i) = es.eigenvectors().col(d - 1 - i).transpose();
      filled[i] = true;
    }
  } else {
    // Gram trick: eigenvectors of X·Xᵀ map to principal axes through Xᵀ.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x * x.transpose());
    const double top = std::max(0.0, es.eigenvalues()(n - 1));
    for (int i = 0; i < k; ++i) {
      const double lambda = es.eigenvalues()(n - 1 - i);
      p.explained_variance(i) = std::max(0.0, lambda) / denom;
      if (lambda > 1e-12 * std::max(1.0, top)) {
        p.components.row(i) = (x.transpose() * es.eigenvectors().col(n - 1 - i)).transpose() / std::sqrt(lambda);
        filled[i] = true;
      }
    }
    // Null-variance axes: complete the basis with Gram-Schmidt on unit vectors.
    Eigen::Index probe = 0;
    for (int i = 0; i < k; ++i) {
      if (filled[i]) continue;
      p.explained_variance(i) = 0.0;
      while (!filled[i]) {
        Eigen::RowVectorXd v = Eigen::RowVectorXd::Unit(d, probe++);
        for (int j = 0; j < k; ++j)
          if (filled[j]) v -= v.dot(p.components.row(j)) * p.components.row(j);
        if (v.norm() > 0.5) {
          p.components.row(i) = v.normalized();
          filled[i] = true;
        }
      }
    }
  }
  for (int i = 0; i < k; ++i) {
    Eigen::Index arg = 0;
    p.components.row(i).cwiseAbs().maxCoeff(&arg);
    if (p.components(i, arg) < 0) p.components.row(i) *= -1.0;
  }
  p.projected = x * p.components.transpose();
  return p;
}

double domain_gap_score(const PcaProjection& proj, const std::string& a, const std::string& b) {
  if (a == b) throw ParameterError("domain gap needs two different domains");
  const Eigen::Index k = proj.projected.cols();
  Eigen::RowVectorXd sum_a = Eigen::RowVectorXd::Zero(k), sum_b = Eigen::RowVectorXd::Zero(k);
  Eigen::Index na = 0, nb = 0;
  for (std::size_t i = 0; i < proj.tags.size(); ++i) {
    if (proj.tags[i] == a) sum_a += proj.projected.row(static_cast<Eigen::Index>(i)), ++na;
    else if (proj.tags[i] == b) sum_b += proj.projected.row(static_cast<Eigen::Index>(i)), ++nb;
  }
  if (na == 0 || nb == 0) throw ParameterError("domain gap needs points tagged '" + a + "' and '" + b + "'");
  const Eigen::RowVectorXd mu_a = sum_a / static_cast<double>(na), mu_b = sum_b / static_cast<double>(nb);
  double ss = 0.0;
  for (std::size_t i = 0; i < proj.tags.size(); ++i) {
    const auto row = proj.projected.row(static_cast<Eigen::Index>(i));
    if (proj.tags[i] == a) ss += (row - mu_a).squaredNorm();
    else if (proj.tags[i] == b) ss += (row - mu_b).squaredNorm();
  }
  const double dof = static_cast<double>(std::max<Eigen::Index>(1, na + nb - 2));
  const double pooled_sd = std::sqrt(ss / dof / static_cast<double>(k));
  const double dist = (mu_a - mu_b).norm();
  if (pooled_sd == 0.0) {
    if (dist == 0.0) return 0.0;
    throw ParameterError("domain gap undefined: both clouds have zero spread");
  }
  return dist / pooled_sd;
}

double domain_gap_score(const PcaProjection& proj) {
  std::vector<std::string> seen;
  for (const auto& t : proj.tags)
    if (std::find(seen.begin(), seen.end(), t) == seen.end()) seen.push_back(t);
  if (seen.size() < 2) throw ParameterError("domain gap needs at least two domains");
  return domain_gap_score(proj, seen[0], seen[1]);
}

Eigen::MatrixXd pixel_features(const train::ImageSet& set) {
  const auto flat = set.images.reshape({set.size(), -1}).to(torch::kDouble).contiguous();
  Eigen::MatrixXd m(flat.size(0), flat.size(1));
  const double* src = flat.data_ptr<double>();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = src[r * m.cols() + c];
  return m;
}

Eigen::MatrixXd classifier_features(nets::Classifier& model, const train::ImageSet& set) {
  torch::NoGradGuard guard;
  model->eval();
  std::vector<torch::Tensor> parts;
  for (int64_t i = 0; i < set.size(); i += 64)
    parts.push_back(model->penultimate(set.images.slice(0, i, std::min(set.size(), i + 64))));
  const auto f = torch::cat(parts).to(torch::kDouble).contiguous();
  Eigen::MatrixXd m(f.size(0), f.size(1));
  const double* src = f.data_ptr<double>();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = src[r * m.cols() + c];
  return m;
}

Rgb8 render_pca_scatter(const PcaProjection& proj, const std::string& title) {
  constexpr int kW = 560, kH = 460, kL = 50, kR = 150, kT = 40, kB = 40;
  const fig::Color palette[] = {{30, 90, 200}, {220, 60, 40}, {40, 160, 60}, {150, 60, 170}, {230, 150, 20}};
  Rgb8 img(kH, kW);
  fig::draw_text(img, 10, 10, title, fig::kBlack, 2);
  const Eigen::Index n = proj.projected.rows();
  const bool two_d = proj.projected.cols() >= 2;
  auto coord = [&](Eigen::Index i, int axis) { return axis == 1 && !two_d ? 0.0 : proj.projected(i, axis); };
  double lo[2] = {0, 0}, hi[2] = {1, 1};
  for (int a = 0; a < 2; ++a) {
    if (n == 0) break;
    lo[a] = hi[a] = coord(0, a);
    for (Eigen::Index i = 1; i < n; ++i) {
      lo[a] = std::min(lo[a], coord(i, a));
      hi[a] = std::max(hi[a], coord(i, a));
    }
    const double pad = std::max(1e-9, 0.05 * (hi[a] - lo[a]));
    lo[a] -= pad;
    hi[a] += pad;
  }
  const int x0 = kL, x1 = kW - kR, y0 = kT, y1 = kH - kB;
  fig::draw_rect(img, x0, y0, x1, y1, fig::kBlack);
  fig::draw_text(img, (x0 + x1) / 2 - 12, y1 + 12, "PC1", fig::kBlack);
  fig::draw_text(img, 10, (y0 + y1) / 2, "PC2", fig::kBlack);
  std::vector<std::string> order;
  for (const auto& t : proj.tags)
    if (std::find(order.begin(), order.end(), t) == order.end()) order.push_back(t);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto tag_idx = static_cast<std::size_t>(
        std::find(order.begin(), order.end(), proj.tags[static_cast<std::size_t>(i)]) - order.begin());
    const auto c = palette[tag_idx % std::size(palette)];
    const int px = x0 + static_cast<int>(std::lround((coord(i, 0) - lo[0]) / (hi[0] - lo[0]) * (x1 - x0)));
    const int py = y1 - static_cast<int>(std::lround((coord(i, 1) - lo[1]) / (hi[1] - lo[1]) * (y1 - y0)));
    fig::draw_marker(img, px, py, 2, c);
  }
  for (std::size_t t = 0; t < order.size(); ++t) {
    const int ly = y0 + 10 + static_cast<int>(t) * 16;
    fig::draw_marker(img, x1 + 16, ly + 3, 4, palette[t % std::size(palette)]);
    fig::draw_text(img, x1 + 26, ly, order[t], fig::kBlack);
  }
  return img;
}

std::string comparison_table_csv(const std::map<std::string, MetricsReport>& by_condition) {
  std::string s = "metric";
  for (const auto& c : kTableConditions) s += "," + c;
  s += "\n";
  const std::pair<const char*, double MetricsReport::*> rows[] = {{"accuracy", &MetricsReport::accuracy},
                                                                   {"f1", &MetricsReport::f1},
                                                                   {"recall", &MetricsReport::recall},
                                                                   {"precision", &MetricsReport::precision}};
  for (const auto& [name, field] : rows) {
    s += name;
    for (const auto& c : kTableConditions) {
      s += ",";
      const auto it = by_condition.find(c);
      if (it == by_condition.end()) throw MissingArtifactError("no metrics for condition " + c);
      s += fixed(it->second.*field, 4);
    }
    s += "\n";
  }
  return s;
}

}  // namespace casnet::eval
