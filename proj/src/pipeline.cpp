#include "casnet/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "casnet/errors.hpp"
#include "casnet/figures.hpp"
#include "casnet/random.hpp"
#include "casnet/synthgen.hpp"
#include "casnet/trainers.hpp"

namespace casnet::pipeline {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string chain(std::initializer_list<std::string> parts) {
  std::string s;
  for (const auto& p : parts) s += p + "|";
  return hex64(hash_string(s));
}

void say(const Context& ctx, const std::string& line) {
  if (ctx.log) *ctx.log << line << std::endl;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out << text;
}

std::string read_text(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw MissingArtifactError("required artifact not found: " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ordered_json config_json(const ExperimentConfig& cfg) {
  ordered_json j;
  j["preset"] = cfg.preset;
  for (const auto& k : ExperimentConfig::keys()) j["values"][k] = cfg.get(k);
  return j;
}

std::string file_tag(const std::string& condition) {
  std::string s = condition;
  for (auto& c : s)
    if (c == '/') c = '_';
  return s;
}

// Side-by-side strips: one row per image set, `count` columns.
Rgb8 image_grid(const std::vector<torch::Tensor>& rows, int count) {
  const int s = static_cast<int>(rows.front().size(2));
  const int pad = 2;
  Rgb8 img(static_cast<int>(rows.size()) * (s + pad) + pad, count * (s + pad) + pad, 255);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto t = rows[r].detach().to(torch::kFloat).contiguous();
    for (int i = 0; i < count && i < t.size(0); ++i) {
      const float* src = t[i].data_ptr<float>();
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          const std::size_t plane = static_cast<std::size_t>(s) * s, p = static_cast<std::size_t>(y) * s + x;
          img.set(pad + static_cast<int>(r) * (s + pad) + y, pad + i * (s + pad) + x, to_byte(src[p]),
                  to_byte(src[plane + p]), to_byte(src[2 * plane + p]));
        }
    }
  }
  return img;
}

}  // namespace

std::string git_describe() {
#ifdef CASNET_GIT_DESCRIBE
  return CASNET_GIT_DESCRIBE;
#else
  return "unknown";
#endif
}

fs::path Context::resolved_cache() const {
  if (!cache_dir.empty()) return cache_dir;
  if (const char* env = std::getenv(kCacheEnv); env && *env) return env;
  return out_dir / "cache";
}

StageInfo run_stage(const Context& ctx, const std::string& name, const std::string& hash,
                    const std::function<void(const fs::path&)>& body) {
  StageInfo info{name, hash, ctx.resolved_cache() / (name + "-" + hash), false};
  const auto marker = info.dir / "DONE";
  if (!ctx.force && fs::exists(marker)) {
    info.reused = true;
    say(ctx, "[" + name + "] reusing " + info.dir.string());
    return info;
  }
  say(ctx, "[" + name + "] running -> " + info.dir.string());
  const auto t0 = std::chrono::steady_clock::now();
  try {
    fs::remove_all(info.dir);
    fs::create_directories(info.dir);
    body(info.dir);
    ordered_json j;
    j["stage"] = name;
    j["hash"] = hash;
    j["seed"] = ctx.cfg.seed;
    j["git_describe"] = git_describe();
    j["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    j["config"] = config_json(ctx.cfg);
    write_text(info.dir / "stage.json", j.dump(2) + "\n");
    write_text(marker, hash + "\n");
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
  return info;
}

void write_run_manifest(const fs::path& dir, const ExperimentConfig& cfg, const std::string& command,
                        double wall_seconds, const std::vector<std::string>& argv) {
  fs::create_directories(dir);
  ordered_json j;
  j["format"] = "casnet-run-1";
  j["command"] = command;
  j["argv"] = argv;
  j["seed"] = cfg.seed;
  j["config_hash"] = cfg.hash();
  j["git_describe"] = git_describe();
  j["wall_time_s"] = wall_seconds;
  j["config"] = config_json(cfg);
  write_text(dir / "run.json", j.dump(2) + "\n");
}

PipelineResult run_pipeline(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  fs::create_directories(ctx.out_dir);
  PipelineResult result;
  const auto data_hash = chain({"data", cfg.hash_of({"general.seed", "general.image_size", "data.", "deformation."})});

  result.stages["data"] = run_stage(ctx, "data", data_hash, [&](const fs::path& dir) {
    struct Part {
      const char* name;
      Domain domain;
      int per_class;
      const char* split;
    };
    const Part parts[] = {{"x_train", Domain::Synthetic, cfg.x_train_per_class, "train"},
                          {"x_test", Domain::Synthetic, cfg.x_test_per_class, "test"},
                          {"y_unlabeled", Domain::Real, cfg.y_unlabeled_per_class, "unlabeled"},
                          {"y_eval", Domain::Real, cfg.y_eval_per_class, "eval"}};
    for (const auto& p : parts) {
      synthgen::GenerateRequest req;
      req.n_per_class = p.per_class;
      req.domain = p.domain;
      req.seed = derive_seed(cfg.seed, hash_string(p.name));
      req.out_dir = dir / p.name;
      req.split = p.split;
      req.image_size = cfg.image_size;
      req.deformation = cfg.deformation;
      req.threads = cfg.threads;
      synthgen::generate_dataset(req);
    }
    synthgen::export_renderer_script(load_manifest(dir / "x_train" / "manifest.json"), dir / "x_train_scene.txt");
  });
  const auto data_dir = result.stages["data"].dir;
  auto manifest = [&](const fs::path& d) { return load_manifest(d / "manifest.json"); };

  const auto casnet_hash = chain({"casnet", data_hash, cfg.hash_of({"casnet."})});
  result.stages["casnet"] = run_stage(ctx, "casnet", casnet_hash, [&](const fs::path& dir) {
    const auto x = train::load_image_set(manifest(data_dir / "x_train"), cfg.threads);
    const auto y = train::load_image_set(manifest(data_dir / "y_unlabeled"), cfg.threads);
    train::RunOptions run{dir, casnet_hash};
    train::train_casnet(x, y, cfg.casnet, run);
  });

  const auto convert_hash = chain({"convert", casnet_hash, cfg.hash_of({"convert."})});
  result.stages["convert"] = run_stage(ctx, "convert", convert_hash, [&](const fs::path& dir) {
    const auto y = train::load_image_set(manifest(data_dir / "y_unlabeled"), cfg.threads);
    const auto ckpt = result.stages["casnet"].dir / "checkpoint.pt";
    for (const char* part : {"x_train", "x_test"}) {
      train::ConvertOptions opts{cfg.convert_batch, derive_seed(cfg.seed, hash_string(std::string("convert-") + part)),
                                 cfg.casnet.cadt, cfg.threads};
      train::convert_dataset(ckpt, manifest(data_dir / part), y, dir / part, opts);
    }
  });
  const auto convert_dir = result.stages["convert"].dir;

  const auto classifier_keys = cfg.hash_of({"classifier."});
  const auto raw_hash = chain({"classifier_raw", data_hash, classifier_keys});
  result.stages["classifier_raw"] = run_stage(ctx, "classifier_raw", raw_hash, [&](const fs::path& dir) {
    const auto data = train::load_image_set(manifest(data_dir / "x_train"), cfg.threads);
    train::train_classifier(data, cfg.classifier, {dir, raw_hash});
  });
  const auto conv_hash = chain({"classifier_converted", convert_hash, classifier_keys});
  result.stages["classifier_converted"] = run_stage(ctx, "classifier_converted", conv_hash, [&](const fs::path& dir) {
    const auto data = train::load_image_set(manifest(convert_dir / "x_train"), cfg.threads);
    train::train_classifier(data, cfg.classifier, {dir, conv_hash});
  });

  const auto eval_hash = chain({"evaluate", raw_hash, conv_hash, cfg.hash_of({"evaluate."})});
  result.stages["evaluate"] = run_stage(ctx, "evaluate", eval_hash, [&](const fs::path& dir) {
    const auto raw_ckpt = result.stages["classifier_raw"].dir / "checkpoint.pt";
    const auto conv_ckpt = result.stages["classifier_converted"].dir / "checkpoint.pt";
    const std::pair<std::string, std::pair<fs::path, fs::path>> plan[] = {
        {"synthetic_dataset/raw", {raw_ckpt, data_dir / "x_test"}},
        {"synthetic_dataset/converted", {conv_ckpt, convert_dir / "x_test"}},
        {"sim_to_real/raw", {raw_ckpt, data_dir / "y_eval"}},
        {"sim_to_real/converted", {conv_ckpt, data_dir / "y_eval"}}};
    for (const auto& [condition, io] : plan) {
      auto report = eval::evaluate(io.first, manifest(io.second), cfg.threshold);
      report.dataset_id = condition;
      eval::save_report(report, dir / (file_tag(condition) + ".json"));
    }
  });

  if (cfg.run_cyclegan) {
    const auto cg_hash = chain({"cyclegan", data_hash, cfg.hash_of({"cyclegan.", "pipeline.cyclegan_samples"})});
    result.stages["cyclegan"] = run_stage(ctx, "cyclegan", cg_hash, [&](const fs::path& dir) {
      const auto x = train::load_image_set(manifest(data_dir / "x_train"), cfg.threads);
      const auto y = train::load_image_set(manifest(data_dir / "y_unlabeled"), cfg.threads);
      train::train_cyclegan(x, y, cfg.cyclegan, {dir, cg_hash});
      const auto test = train::load_image_set(manifest(data_dir / "x_test"), cfg.threads);
      train::CycleGanModel model(cfg.cyclegan, 0);
      load_checkpoint(dir / "checkpoint.pt", model.named(), {});
      model.g_xy->eval();
      torch::NoGradGuard guard;
      const int n = static_cast<int>(std::min<int64_t>(cfg.cyclegan_samples, test.size()));
      const auto src = test.images.slice(0, 0, n);
      const auto out = model.g_xy(src);
      fs::create_directories(dir / "samples");
      for (int i = 0; i < n; ++i) {
        const auto t = out[i].contiguous();
        Image img(static_cast<int>(t.size(1)), static_cast<int>(t.size(2)));
        const float* p = t.data_ptr<float>();
        const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
        for (std::size_t q = 0; q < plane; ++q)
          for (int c = 0; c < 3; ++c) img.pixels[q * 3 + c] = p[c * plane + q];
        write_png(dir / "samples" / ("CG-" + test.ids[static_cast<std::size_t>(i)] + ".png"), img);
      }
      write_png(dir / "samples_grid.png", image_grid({src, out}, n));
    });
  }

  ordered_json j;
  j["format"] = "casnet-pipeline-1";
  for (const auto& [name, info] : result.stages) j["stages"][name] = {{"hash", info.hash}, {"dir", info.dir.string()}};
  write_text(ctx.out_dir / "pipeline.json", j.dump(2) + "\n");

  auto report = build_report(ctx);
  report.stages = result.stages;
  return report;
}

PipelineResult build_report(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  PipelineResult result;
  const auto pj = nlohmann::json::parse(read_text(ctx.out_dir / "pipeline.json"));
  auto stage_dir = [&](const std::string& name) -> fs::path {
    if (!pj["stages"].contains(name))
      throw MissingArtifactError("pipeline.json has no '" + name + "' stage; run the pipeline first");
    return pj["stages"][name]["dir"].get<std::string>();
  };
  const auto report_dir = ctx.out_dir / "report";
  fs::create_directories(report_dir);

  const auto eval_dir = stage_dir("evaluate");
  for (const auto& condition : eval::kTableConditions) {
    const auto r = eval::load_report(eval_dir / (file_tag(condition) + ".json"));
    result.reports[condition] = r;
    const auto m = eval::confusion_matrix(r);
    write_text(report_dir / ("confusion_" + file_tag(condition) + ".txt"), eval::render_confusion_text(m, condition));
    write_png(report_dir / ("confusion_" + file_tag(condition) + ".png"), eval::render_confusion_png(m, condition));
    eval::save_report(r, report_dir / ("metrics_" + file_tag(condition) + ".json"));
  }
  result.table_csv = report_dir / "table2.csv";
  write_text(result.table_csv, eval::comparison_table_csv(result.reports));

  // PCA over held-out synthetic, converted and real images.
  const auto data_dir = stage_dir("data");
  const auto convert_dir = stage_dir("convert");
  const auto xs = train::load_image_set(load_manifest(data_dir / "x_test" / "manifest.json"), cfg.threads);
  const auto xy = train::load_image_set(load_manifest(convert_dir / "x_test" / "manifest.json"), cfg.threads);
  const auto ys = train::load_image_set(load_manifest(data_dir / "y_eval" / "manifest.json"), cfg.threads);
  Eigen::MatrixXd fx, fxy, fy;
  if (cfg.pca_mode == "pixels") {
    fx = eval::pixel_features(xs);
    fxy = eval::pixel_features(xy);
    fy = eval::pixel_features(ys);
  } else if (cfg.pca_mode == "features") {
    auto model = train::load_classifier(stage_dir("classifier_converted") / "checkpoint.pt");
    fx = eval::classifier_features(model, xs);
    fxy = eval::classifier_features(model, xy);
    fy = eval::classifier_features(model, ys);
  } else {
    throw ConfigError("report.pca_mode must be 'pixels' or 'features', got '" + cfg.pca_mode + "'");
  }
  Eigen::MatrixXd all(fx.rows() + fxy.rows() + fy.rows(), fx.cols());
  all << fx, fxy, fy;
  std::vector<std::string> tags;
  tags.insert(tags.end(), static_cast<std::size_t>(fx.rows()), "synthetic");
  tags.insert(tags.end(), static_cast<std::size_t>(fxy.rows()), "converted");
  tags.insert(tags.end(), static_cast<std::size_t>(fy.rows()), "real");
  const auto proj = eval::pca_features(all, tags, cfg.pca_k);
  result.gap_synthetic_real = eval::domain_gap_score(proj, "synthetic", "real");
  result.gap_converted_real = eval::domain_gap_score(proj, "converted", "real");
  char title[128];
  std::snprintf(title, sizeof title, "PCA GAP X-Y %.2f  XY-Y %.2f", result.gap_synthetic_real,
                result.gap_converted_real);
  result.pca_png = report_dir / "pca.png";
  write_png(result.pca_png, eval::render_pca_scatter(proj, title));
  ordered_json pca;
  pca["mode"] = cfg.pca_mode;
  pca["k"] = cfg.pca_k;
  pca["explained_variance"] = std::vector<double>(proj.explained_variance.data(),
                                                  proj.explained_variance.data() + proj.explained_variance.size());
  pca["total_variance"] = proj.total_variance;
  pca["gap_synthetic_real"] = result.gap_synthetic_real;
  pca["gap_converted_real"] = result.gap_converted_real;
  write_text(report_dir / "pca.json", pca.dump(2) + "\n");

  // Visual comparison strip: source, CASNet conversion and, when present, CycleGAN.
  const int n = static_cast<int>(std::min<int64_t>(8, xs.size()));
  std::vector<torch::Tensor> rows{xs.images.slice(0, 0, n), xy.images.slice(0, 0, n)};
  if (pj["stages"].contains("cyclegan")) {
    const auto cg_dir = stage_dir("cyclegan") / "samples";
    std::vector<LabeledImage> cg;
    for (int i = 0; i < n; ++i) {
      const auto file = cg_dir / ("CG-" + xs.ids[static_cast<std::size_t>(i)] + ".png");
      if (!fs::exists(file)) break;
      cg.push_back({read_png(file), Label::NonDeformed, Domain::Converted, xs.ids[static_cast<std::size_t>(i)]});
    }
    if (static_cast<int>(cg.size()) == n) rows.push_back(train::make_image_set(cg).images);
  }
  write_png(report_dir / "conversions.png", image_grid(rows, n));
  return result;
}

}  // namespace casnet::pipeline
