// casnet: command-line entry point for the sim-to-real pipeline.

#include <CLI11.hpp>
#include <torch/torch.h>

#include <chrono>
#include <iostream>
#include <optional>

#include "casnet/config.hpp"
#include "casnet/errors.hpp"
#include "casnet/evalkit.hpp"
#include "casnet/pipeline.hpp"
#include "casnet/synthgen.hpp"
#include "casnet/trainers.hpp"

namespace fs = std::filesystem;
using namespace casnet;

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  std::string preset = "desk";
  std::vector<std::string> overrides;
};

ExperimentConfig resolve_config(const GlobalOptions& g) {
  auto cfg = g.config.empty() ? ExperimentConfig::from_preset(g.preset) : load_config(g.config, g.preset);
  if (g.seed) cfg.set("general.seed", std::to_string(*g.seed));
  apply_overrides(cfg, g.overrides);
  if (cfg.threads > 0) torch::set_num_threads(static_cast<int>(cfg.threads));
  return cfg;
}

fs::path require_out(const GlobalOptions& g) {
  if (g.out.empty()) throw ConfigError("--out is required for this command");
  fs::create_directories(g.out);
  return g.out;
}

DatasetManifest manifest_in(const std::string& dir) { return load_manifest(fs::path(dir) / "manifest.json"); }

void add_overrides(CLI::App* cmd, GlobalOptions& g) {
  cmd->add_option("overrides", g.overrides, "Config overrides as section.key=value");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sim-to-real deformation classification lab"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "INI config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Experiment seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--force", g.force, "Recompute cached stages");
  app.add_option("--preset", g.preset, "Base preset")->check(CLI::IsMember({"desk", "paper"}));
  app.fallthrough();

  // generate
  int n_per_class = -1;
  std::string domain = "X", split = "train";
  bool with_script = false;
  auto* gen = app.add_subcommand("generate", "Render a labelled procedural dataset");
  gen->add_option("--n-per-class", n_per_class, "Images per class (default: data.x_train_per_class)");
  gen->add_option("--domain", domain, "X (synthetic) or Y (real-style)")->check(CLI::IsMember({"X", "Y"}));
  gen->add_option("--split", split, "Split name recorded in the manifest");
  gen->add_flag("--script", with_script, "Also export the external renderer script");
  add_overrides(gen, g);

  // training
  std::string x_dir, y_dir, data_dir, ckpt, resume;
  long stop_after = -1;
  auto* tcg = app.add_subcommand("train-cyclegan", "Train the CycleGAN baseline");
  auto* tcn = app.add_subcommand("train-casnet", "Train CASNet");
  for (auto* cmd : {tcg, tcn}) {
    cmd->add_option("--x", x_dir, "Synthetic dataset directory")->required();
    cmd->add_option("--y", y_dir, "Real-style dataset directory")->required();
    cmd->add_option("--resume", resume, "Checkpoint to resume from");
    cmd->add_option("--stop-after", stop_after, "Stop after this step (checkpoint written)");
    add_overrides(cmd, g);
  }
  auto* conv = app.add_subcommand("convert", "Convert a synthetic dataset with a trained CASNet");
  conv->add_option("--checkpoint", ckpt, "CASNet checkpoint")->required();
  conv->add_option("--x", x_dir, "Synthetic dataset directory")->required();
  conv->add_option("--y", y_dir, "Real-style dataset directory (style source)")->required();
  add_overrides(conv, g);

  auto* tcl = app.add_subcommand("train-classifier", "Train the deformation classifier");
  tcl->add_option("--data", data_dir, "Training dataset directory")->required();
  tcl->add_option("--resume", resume, "Checkpoint to resume from");
  add_overrides(tcl, g);

  std::string condition;
  auto* ev = app.add_subcommand("evaluate", "Evaluate a classifier on a dataset");
  ev->add_option("--checkpoint", ckpt, "Classifier checkpoint")->required();
  ev->add_option("--data", data_dir, "Evaluation dataset directory")->required();
  ev->add_option("--condition", condition, "Name recorded as dataset_id");
  add_overrides(ev, g);

  auto* rep = app.add_subcommand("report", "Rebuild table, confusion matrices and PCA from a pipeline run");
  add_overrides(rep, g);
  auto* pipe = app.add_subcommand("pipeline", "Run the whole experiment");
  add_overrides(pipe, g);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    std::cerr << app.help() << std::flush;
    return code == 0 ? 2 : code;
  }

  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::string> args(argv, argv + argc);
  std::string command = app.get_subcommands().front()->get_name();
  try {
    const auto cfg = resolve_config(g);
    const auto out = require_out(g);
    train::RunOptions run{out, cfg.hash(), resume, stop_after};

    if (command == "generate") {
      synthgen::GenerateRequest req;
      req.n_per_class = n_per_class >= 0 ? n_per_class : cfg.x_train_per_class;
      req.domain = domain == "X" ? Domain::Synthetic : Domain::Real;
      req.seed = cfg.seed;
      req.out_dir = out;
      req.split = split;
      req.image_size = cfg.image_size;
      req.deformation = cfg.deformation;
      req.threads = cfg.threads;
      const auto m = synthgen::generate_dataset(req);
      if (with_script) synthgen::export_renderer_script(m, out / "scene_script.txt");
      std::cout << "generated " << m.entries.size() << " images in " << out << "\n";
    } else if (command == "train-cyclegan" || command == "train-casnet") {
      const auto x = train::load_image_set(manifest_in(x_dir), cfg.threads);
      const auto y = train::load_image_set(manifest_in(y_dir), cfg.threads);
      const auto r = command == "train-casnet" ? train::train_casnet(x, y, cfg.casnet, run)
                                               : train::train_cyclegan(x, y, cfg.cyclegan, run);
      std::cout << "trained " << r.steps_done << " steps; checkpoint " << r.checkpoint << "\n";
    } else if (command == "convert") {
      const auto y = train::load_image_set(manifest_in(y_dir), cfg.threads);
      train::ConvertOptions opts{cfg.convert_batch, cfg.seed, cfg.casnet.cadt, cfg.threads};
      const auto m = train::convert_dataset(ckpt, manifest_in(x_dir), y, out, opts);
      std::cout << "converted " << m.entries.size() << " images into " << out << "\n";
    } else if (command == "train-classifier") {
      const auto data = train::load_image_set(manifest_in(data_dir), cfg.threads);
      const auto r = train::train_classifier(data, cfg.classifier, run);
      std::cout << "trained " << r.steps_done << " epochs; checkpoint " << r.checkpoint << "\n";
    } else if (command == "evaluate") {
      auto report = eval::evaluate(ckpt, manifest_in(data_dir), cfg.threshold);
      if (!condition.empty()) report.dataset_id = condition;
      eval::save_report(report, out / "metrics.json");
      const auto m = eval::confusion_matrix(report);
      std::ofstream(out / "confusion.txt") << eval::render_confusion_text(m, report.dataset_id);
      write_png(out / "confusion.png", eval::render_confusion_png(m, report.dataset_id));
      std::cout << eval::report_json(report);
    } else if (command == "report" || command == "pipeline") {
      pipeline::Context ctx{cfg, out, {}, g.force, &std::cerr};
      const auto r = command == "pipeline" ? pipeline::run_pipeline(ctx) : pipeline::build_report(ctx);
      std::cout << "table: " << r.table_csv << "\n"
                << "pca: " << r.pca_png << " (gap synthetic-real " << r.gap_synthetic_real << ", converted-real "
                << r.gap_converted_real << ")\n";
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    pipeline::write_run_manifest(out, cfg, command, wall, args);
  } catch (const casnet::Error& e) {
    std::cerr << "error: " << command << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << command << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
