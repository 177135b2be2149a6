#pragma once

// Classification metrics, confusion matrices, PCA projections and the
// comparison table. The positive class is "deformed".

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "casnet/dataset.hpp"
#include "casnet/image.hpp"
#include "casnet/networks.hpp"
#include "casnet/trainers.hpp"

namespace casnet::eval {

struct MetricsReport {
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0, f1 = 0.0, recall = 0.0, precision = 0.0;
  double threshold = 0.5;
  std::string dataset_id;
  // Set when the metric's denominator is zero; the metric is then reported as 0.
  bool precision_undefined = false, recall_undefined = false, f1_undefined = false;

  int64_t total() const { return tp + fp + tn + fn; }
};

MetricsReport metrics_from_counts(int64_t tp, int64_t fp, int64_t tn, int64_t fn, double threshold = 0.5,
                                  std::string dataset_id = {});

// prob ≥ threshold predicts "deformed"; labels are 1 for deformed, 0 otherwise.
MetricsReport metrics_from_predictions(const std::vector<double>& probs, const std::vector<int>& labels,
                                       double threshold = 0.5, std::string dataset_id = {});

// Eval-mode forward of a classifier over a set. ParameterError on an empty set
// or a threshold outside (0, 1).
MetricsReport evaluate(nets::Classifier& model, const train::ImageSet& data, double threshold,
                       std::string dataset_id = {});
MetricsReport evaluate(const std::filesystem::path& checkpoint, const DatasetManifest& data, double threshold);

std::string report_json(const MetricsReport& r);
MetricsReport parse_report_json(const std::string& text);
void save_report(const MetricsReport& r, const std::filesystem::path& file);
MetricsReport load_report(const std::filesystem::path& file);

// [[tp, fn], [fp, tn]]: rows are the true class, columns the prediction.
struct ConfusionMatrix {
  std::array<std::array<int64_t, 2>, 2> cells{};
  int64_t total() const { return cells[0][0] + cells[0][1] + cells[1][0] + cells[1][1]; }
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion_matrix(const MetricsReport& r);
std::string render_confusion_text(const ConfusionMatrix& m, const std::string& title = {});
ConfusionMatrix parse_confusion_text(const std::string& text);
Rgb8 render_confusion_png(const ConfusionMatrix& m, const std::string& title = {});

struct PcaProjection {
  Eigen::MatrixXd components;          // k×D, orthonormal rows
  Eigen::VectorXd explained_variance;  // k, non-increasing
  Eigen::MatrixXd projected;           // n×k
  Eigen::RowVectorXd mean;             // D
  double total_variance = 0.0;
  std::vector<std::string> tags;  // domain of each row of `projected`
};

// PCA of the rows of `data` (n×D). ParameterError unless 1 ≤ k ≤ min(n, D).
PcaProjection pca_features(const Eigen::MatrixXd& data, const std::vector<std::string>& tags, int k);

// Distance between the centroids of two tagged clouds in projected space,
// divided by the pooled within-cloud standard deviation (averaged over axes).
double domain_gap_score(const PcaProjection& proj, const std::string& a, const std::string& b);
// Same for the first two distinct tags. ParameterError with fewer than two.
double domain_gap_score(const PcaProjection& proj);

// Rows of flattened pixels (C·H·W per image).
Eigen::MatrixXd pixel_features(const train::ImageSet& set);
// Rows of classifier penultimate activations.
Eigen::MatrixXd classifier_features(nets::Classifier& model, const train::ImageSet& set);

Rgb8 render_pca_scatter(const PcaProjection& proj, const std::string& title);

// Rows accuracy/f1/recall/precision × the four conditions below.
inline const std::array<std::string, 4> kTableConditions = {"synthetic_dataset/raw", "synthetic_dataset/converted",
                                                            "sim_to_real/raw", "sim_to_real/converted"};
std::string comparison_table_csv(const std::map<std::string, MetricsReport>& by_condition);

}  // namespace casnet::eval
