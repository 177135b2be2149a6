#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "casnet/cadt.hpp"
#include "casnet/config.hpp"
#include "casnet/dataset.hpp"
#include "casnet/errors.hpp"
#include "casnet/evalkit.hpp"
#include "casnet/pipeline.hpp"
#include "casnet/synthgen.hpp"

namespace py = pybind11;
using namespace casnet;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace {

torch::Tensor to_tensor(const RowMatrix& m) {
  return torch::from_blob(const_cast<double*>(m.data()), {m.rows(), m.cols()}, torch::kFloat64).clone();
}

RowMatrix to_matrix(const torch::Tensor& t) {
  const auto c = t.to(torch::kFloat64).contiguous();
  return Eigen::Map<const RowMatrix>(c.data_ptr<double>(), c.size(0), c.size(1));
}

nets::FeatureBundle bundle(const RowMatrix& content, const RowMatrix& style) {
  nets::FeatureBundle b;
  b.content = to_tensor(content);
  b.style = to_tensor(style);
  return b;
}

ExperimentConfig make_config(const std::string& preset, std::uint64_t seed, const std::vector<std::string>& overrides) {
  auto cfg = ExperimentConfig::from_preset(preset);
  cfg.set("general.seed", std::to_string(seed));
  apply_overrides(cfg, overrides);
  return cfg;
}

py::dict report_dict(const eval::MetricsReport& r) {
  py::dict d;
  d["tp"] = r.tp;
  d["fp"] = r.fp;
  d["tn"] = r.tn;
  d["fn"] = r.fn;
  d["accuracy"] = r.accuracy;
  d["precision"] = r.precision;
  d["recall"] = r.recall;
  d["f1"] = r.f1;
  d["threshold"] = r.threshold;
  d["dataset_id"] = r.dataset_id;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "casnet_lab core: procedural data, CADT, metrics and the experiment pipeline";

  py::register_exception<casnet::Error>(m, "CasnetError", PyExc_RuntimeError);

  m.def(
      "generate_dataset",
      [](const std::filesystem::path& out_dir, int n_per_class, const std::string& domain, std::uint64_t seed,
         int image_size, unsigned threads) {
        synthgen::GenerateRequest req;
        req.out_dir = out_dir;
        req.n_per_class = n_per_class;
        req.domain = domain == "Y" ? Domain::Real : Domain::Synthetic;
        if (domain != "X" && domain != "Y") throw ParameterError("domain must be X or Y");
        req.seed = seed;
        req.image_size = image_size;
        req.threads = threads;
        py::gil_scoped_release release;
        return synthgen::generate_dataset(req).entries.size();
      },
      py::arg("out_dir"), py::arg("n_per_class"), py::arg("domain") = "X", py::arg("seed") = 0,
      py::arg("image_size") = 64, py::arg("threads") = 0, "Render a labelled dataset; returns the image count.");

  m.def(
      "load_manifest",
      [](const std::filesystem::path& file) {
        const auto man = casnet::load_manifest(file);
        py::list out;
        for (const auto& e : man.entries) {
          py::dict d;
          d["id"] = e.id;
          d["path"] = man.image_path(e);
          d["label"] = e.label == Label::Deformed ? 1 : 0;
          d["domain"] = e.domain == Domain::Real ? "Y" : "X";
          d["camera_index"] = e.pose.camera_index;
          out.append(d);
        }
        return out;
      },
      py::arg("manifest"));

  m.def("config_keys", &ExperimentConfig::keys);
  m.def(
      "config_get",
      [](const std::string& preset, std::uint64_t seed, const std::vector<std::string>& overrides) {
        const auto cfg = make_config(preset, seed, overrides);
        std::map<std::string, std::string> values;
        for (const auto& k : ExperimentConfig::keys()) values[k] = cfg.get(k);
        return values;
      },
      py::arg("preset") = "desk", py::arg("seed") = 0, py::arg("overrides") = std::vector<std::string>{});
  m.def(
      "config_hash",
      [](const std::string& preset, std::uint64_t seed, const std::vector<std::string>& overrides) {
        return make_config(preset, seed, overrides).hash();
      },
      py::arg("preset") = "desk", py::arg("seed") = 0, py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "content_similarity",
      [](const RowMatrix& c_x, const RowMatrix& c_y) {
        const auto s = cadt::content_similarity(to_tensor(c_x), to_tensor(c_y));
        return py::make_tuple(to_matrix(s.h_row), to_matrix(s.h_col));
      },
      py::arg("c_x"), py::arg("c_y"), "Returns (h_row, h_col) for B×N content factors.");
  m.def(
      "transfer_styles",
      [](const RowMatrix& c_x, const RowMatrix& s_x, const RowMatrix& c_y, const RowMatrix& s_y, bool cadt) {
        const auto r = cadt::transfer_styles(bundle(c_x, s_x), bundle(c_y, s_y), cadt);
        return py::make_tuple(to_matrix(r.x_to_y), to_matrix(r.y_to_x));
      },
      py::arg("c_x"), py::arg("s_x"), py::arg("c_y"), py::arg("s_y"), py::arg("cadt") = true);

  m.def(
      "metrics_from_predictions",
      [](const std::vector<double>& probs, const std::vector<int>& labels, double threshold) {
        return report_dict(eval::metrics_from_predictions(probs, labels, threshold));
      },
      py::arg("probs"), py::arg("labels"), py::arg("threshold") = 0.5);

  m.def(
      "pca",
      [](const Eigen::MatrixXd& features, const std::vector<std::string>& tags, int k) {
        const auto p = eval::pca_features(features, tags, k);
        py::dict d;
        d["components"] = p.components;
        d["explained_variance"] = p.explained_variance;
        d["projected"] = p.projected;
        d["total_variance"] = p.total_variance;
        return d;
      },
      py::arg("features"), py::arg("tags"), py::arg("k") = 2);
  m.def(
      "domain_gap_score",
      [](const Eigen::MatrixXd& features, const std::vector<std::string>& tags, const std::string& a,
         const std::string& b, int k) { return eval::domain_gap_score(eval::pca_features(features, tags, k), a, b); },
      py::arg("features"), py::arg("tags"), py::arg("a"), py::arg("b"), py::arg("k") = 2);

  m.def(
      "run_pipeline",
      [](const std::filesystem::path& out_dir, const std::string& preset, std::uint64_t seed,
         const std::vector<std::string>& overrides, bool force) {
        pipeline::Context ctx{make_config(preset, seed, overrides), out_dir, {}, force, nullptr};
        pipeline::PipelineResult r;
        {
          py::gil_scoped_release release;
          r = pipeline::run_pipeline(ctx);
        }
        py::dict reports;
        for (const auto& [cond, rep] : r.reports) reports[py::str(cond)] = report_dict(rep);
        py::dict d;
        d["reports"] = reports;
        d["gap_synthetic_real"] = r.gap_synthetic_real;
        d["gap_converted_real"] = r.gap_converted_real;
        d["table_csv"] = r.table_csv;
        d["pca_png"] = r.pca_png;
        return d;
      },
      py::arg("out_dir"), py::arg("preset") = "desk", py::arg("seed") = 0,
      py::arg("overrides") = std::vector<std::string>{}, py::arg("force") = false,
      "Runs the full experiment; stage outputs are cached under $CASNET_CACHE_DIR or <out_dir>/cache.");
}
