#include "casnet/trainers.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "casnet/cadt.hpp"
#include "casnet/errors.hpp"
#include "casnet/losses.hpp"
#include "casnet/parallel.hpp"
#include "casnet/random.hpp"

namespace casnet::train {

namespace F = torch::nn::functional;

namespace {

using Clock = std::chrono::steady_clock;

torch::Tensor index_batch(const torch::Tensor& t, const std::vector<int64_t>& idx) {
  return t.index_select(0, torch::tensor(idx, torch::kLong));
}

void image_to_tensor(const Image& img, float* dst) {
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) dst[c * plane + p] = img.pixels[p * 3 + c];
}

Image tensor_to_image(const torch::Tensor& chw) {
  const auto t = chw.detach().to(torch::kFloat).contiguous();
  const int h = static_cast<int>(t.size(1)), w = static_cast<int>(t.size(2));
  Image img(h, w);
  const float* src = t.data_ptr<float>();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) img.pixels[p * 3 + c] = src[c * plane + p];
  return img;
}

std::vector<torch::Tensor> collect_parameters(std::initializer_list<torch::nn::Module*> modules) {
  std::vector<torch::Tensor> out;
  for (auto* m : modules)
    for (auto& p : m->parameters())
      if (p.requires_grad()) out.push_back(p);
  return out;
}

torch::optim::Adam make_adam(std::vector<torch::Tensor> params, const TrainConfig& cfg) {
  return torch::optim::Adam(std::move(params), torch::optim::AdamOptions(cfg.lr)
                                                   .betas(std::make_tuple(cfg.beta1, cfg.beta2))
                                                   .eps(cfg.adam_eps));
}

void check_finite(const torch::Tensor& loss, const std::string& term, long step) {
  const double v = loss.detach().item<double>();
  if (!std::isfinite(v))
    throw DivergenceError(term, step, "non-finite loss term '" + term + "' at step " + std::to_string(step));
}

void check_pair(const ImageSet& x, const ImageSet& y, const char* who) {
  if (x.size() == 0 || y.size() == 0) throw ParameterError(std::string(who) + " needs non-empty X and Y image sets");
  if (!x.images.sizes().slice(1).equals(y.images.sizes().slice(1)))
    throw ShapeError(std::string(who) + ": X and Y images differ in size");
}

std::map<std::string, std::string> parse_options(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  for (std::string item; std::getline(is, item, ';');) {
    const auto eq = item.find('=');
    if (eq != std::string::npos) out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

struct StepTimer {
  Clock::time_point start = Clock::now();
  double seconds() const { return std::chrono::duration<double>(Clock::now() - start).count(); }
};

void log_terms(TrainLog& log, long step, const std::map<std::string, double>& terms, const RunOptions& run,
               const StepTimer& timer) {
  for (const auto& [k, v] : terms) log.write(step, k, v);
  if (run.log_wall_time) log.write(step, "wall_time", timer.seconds());
}

}  // namespace

// ---------------------------------------------------------------------------

ImageSet load_image_set(const DatasetManifest& manifest, unsigned threads) {
  ImageSet set;
  const auto n = static_cast<int64_t>(manifest.entries.size());
  if (n == 0) return set;
  const int s = manifest.image_size;
  set.images = torch::empty({n, 3, s, s}, torch::kFloat);
  set.labels = torch::empty({n}, torch::kFloat);
  set.domain = manifest.entries.front().domain;
  float* dst = set.images.data_ptr<float>();
  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
    const auto img = read_png(manifest.image_path(manifest.entries[i]));
    if (img.height != s || img.width != s)
      throw ShapeError("image " + manifest.entries[i].id + " is not " + std::to_string(s) + "×" + std::to_string(s));
    image_to_tensor(img, dst + i * 3 * s * s);
  });
  auto* lab = set.labels.data_ptr<float>();
  for (int64_t i = 0; i < n; ++i) {
    lab[i] = manifest.entries[i].label == Label::Deformed ? 1.0f : 0.0f;
    set.ids.push_back(manifest.entries[i].id);
  }
  return set;
}

ImageSet make_image_set(const std::vector<LabeledImage>& images) {
  ImageSet set;
  if (images.empty()) return set;
  const int h = images.front().pixels.height, w = images.front().pixels.width;
  const auto n = static_cast<int64_t>(images.size());
  set.images = torch::empty({n, 3, h, w}, torch::kFloat);
  set.labels = torch::empty({n}, torch::kFloat);
  set.domain = images.front().domain;
  for (int64_t i = 0; i < n; ++i) {
    const auto& img = images[i].pixels;
    if (img.height != h || img.width != w) throw ShapeError("images in a set must share one size");
    image_to_tensor(img, set.images.data_ptr<float>() + i * 3 * h * w);
    set.labels[i] = images[i].label == Label::Deformed ? 1.0f : 0.0f;
    set.ids.push_back(images[i].id);
  }
  return set;
}

// ---------------------------------------------------------------------------

BatchSampler::BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed)
    : n_(n), batch_(batch), rng_(seed), perm_(n) {
  if (n == 0 || batch == 0) throw ParameterError("sampler needs n >= 1 and batch >= 1");
  reshuffle();
}

void BatchSampler::reshuffle() {
  for (std::size_t i = 0; i < n_; ++i) perm_[i] = static_cast<int64_t>(i);
  for (std::size_t i = n_; i > 1; --i) std::swap(perm_[i - 1], perm_[rng_() % i]);
  cursor_ = 0;
}

std::vector<int64_t> BatchSampler::next() {
  std::vector<int64_t> out;
  out.reserve(batch_);
  while (out.size() < batch_) {
    if (cursor_ == n_) reshuffle();
    out.push_back(perm_[cursor_++]);
  }
  return out;
}

std::vector<std::vector<int64_t>> BatchSampler::epoch() {
  reshuffle();
  std::vector<std::vector<int64_t>> out;
  for (std::size_t i = 0; i < n_; i += batch_)
    out.emplace_back(perm_.begin() + static_cast<std::ptrdiff_t>(i),
                     perm_.begin() + static_cast<std::ptrdiff_t>(std::min(n_, i + batch_)));
  cursor_ = n_;
  return out;
}

std::string BatchSampler::state() const {
  std::ostringstream os;
  os << n_ << ' ' << batch_ << ' ' << cursor_ << ' ' << rng_;
  for (auto p : perm_) os << ' ' << p;
  return os.str();
}

void BatchSampler::restore(const std::string& state) {
  std::istringstream is(state);
  std::size_t n = 0, batch = 0;
  is >> n >> batch >> cursor_ >> rng_;
  if (n != n_ || batch != batch_) throw ParameterError("sampler state belongs to a different dataset or batch size");
  for (auto& p : perm_) is >> p;
  if (!is) throw IoError("corrupt sampler state");
}

// ---------------------------------------------------------------------------

TrainLog::TrainLog(const std::filesystem::path& file, long keep_through_step) {
  std::vector<std::string> kept;
  if (keep_through_step >= 0) {
    std::ifstream in(file);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stol(line.substr(0, line.find(','))) <= keep_through_step) kept.push_back(line);
    }
  }
  if (!file.parent_path().empty()) std::filesystem::create_directories(file.parent_path());
  out_.open(file, std::ios::trunc);
  if (!out_) throw IoError("cannot write training log " + file.string());
  out_ << "step,term,value\n";
  for (const auto& l : kept) out_ << l << '\n';
}

void TrainLog::write(long step, const std::string& term, double value) {
  out_ << step << ',' << term << ',' << format_double(value) << '\n';
  out_.flush();
}

// ---------------------------------------------------------------------------

CycleGanModel::CycleGanModel(const CycleGanConfig& cfg, std::uint64_t seed) {
  g_xy = nets::make_seeded<nets::CycleGenerator>(derive_seed(seed, hash_string("g_xy")), cfg.residual_blocks,
                                                 cfg.width_divisor);
  g_yx = nets::make_seeded<nets::CycleGenerator>(derive_seed(seed, hash_string("g_yx")), cfg.residual_blocks,
                                                 cfg.width_divisor);
  d_x = nets::make_seeded<nets::CycleDiscriminator>(derive_seed(seed, hash_string("d_x")), cfg.train.image_size);
  d_y = nets::make_seeded<nets::CycleDiscriminator>(derive_seed(seed, hash_string("d_y")), cfg.train.image_size);
}

std::vector<NamedModule> CycleGanModel::named() {
  return {{"g_xy", g_xy.get()}, {"g_yx", g_yx.get()}, {"d_x", d_x.get()}, {"d_y", d_y.get()}};
}

TrainResult train_cyclegan(const ImageSet& x, const ImageSet& y, const CycleGanConfig& cfg, const RunOptions& run) {
  cfg.train.validate();
  check_pair(x, y, "train_cyclegan");
  if (x.images.size(2) != cfg.train.image_size)
    throw ShapeError("train_cyclegan: images are " + std::to_string(x.images.size(2)) + "px, config says " +
                     std::to_string(cfg.train.image_size));
  const auto& tc = cfg.train;
  CycleGanModel model(cfg, tc.seed);
  auto opt_g = make_adam(collect_parameters({model.g_xy.get(), model.g_yx.get()}), tc);
  auto opt_d = make_adam(collect_parameters({model.d_x.get(), model.d_y.get()}), tc);
  const auto bs = static_cast<std::size_t>(tc.batch_size);
  BatchSampler sx(x.size(), bs, derive_seed(tc.seed, hash_string("sample-x")));
  BatchSampler sy(y.size(), bs, derive_seed(tc.seed, hash_string("sample-y")));
  const std::vector<NamedOptimizer> optims{{"g", &opt_g}, {"d", &opt_d}};

  long start = 0;
  if (!run.resume_from.empty()) {
    const auto loaded = load_checkpoint(run.resume_from, model.named(), optims);
    if (loaded.meta.kind != "cyclegan") throw ParameterError("checkpoint is not a cyclegan checkpoint");
    start = loaded.meta.step;
    sx.restore(loaded.rng_state.at("sampler_x"));
    sy.restore(loaded.rng_state.at("sampler_y"));
  }
  auto save = [&](const std::filesystem::path& file, long step) {
    CheckpointMeta meta{"cyclegan", step, run.config_hash,
                        {{"image_size", std::to_string(tc.image_size)},
                         {"residual_blocks", std::to_string(cfg.residual_blocks)},
                         {"width_divisor", std::to_string(cfg.width_divisor)}}};
    save_checkpoint(file, meta, model.named(), optims, {{"sampler_x", sx.state()}, {"sampler_y", sy.state()}});
  };
  TrainLog log(run.out_dir / "train_log.csv", run.resume_from.empty() ? -1 : start);
  const auto ckpt = run.out_dir / "checkpoint.pt";
  TrainResult result{ckpt, start, {}};
  StepTimer timer;
  for (auto* m : {static_cast<torch::nn::Module*>(model.g_xy.get()), static_cast<torch::nn::Module*>(model.g_yx.get()),
                  static_cast<torch::nn::Module*>(model.d_x.get()), static_cast<torch::nn::Module*>(model.d_y.get())})
    m->train(true);

  for (long step = start + 1; step <= tc.steps; ++step) {
    const auto xb = index_batch(x.images, sx.next());
    const auto yb = index_batch(y.images, sy.next());
    std::map<std::string, double> terms;
    try {
      torch::Tensor fake_y, fake_x;
      // The same batch is reused for every generator update of a step.
      for (int k = 0; k < tc.gen_updates_per_step; ++k) {
        fake_y = model.g_xy(xb);
        fake_x = model.g_yx(yb);
        const auto adv = losses::adversarial_loss_cyclegan({}, model.d_y(fake_y), losses::AdversarialRole::Generator) +
                         losses::adversarial_loss_cyclegan({}, model.d_x(fake_x), losses::AdversarialRole::Generator);
        const auto cycle =
            losses::reconstruction_loss(xb, model.g_yx(fake_y)) + losses::reconstruction_loss(yb, model.g_xy(fake_x));
        check_finite(adv, "adversarial", step);
        check_finite(cycle, "cycle", step);
        const auto total = adv + cfg.cycle_weight * cycle;
        opt_g.zero_grad();
        total.backward();
        opt_g.step();
        terms["adversarial"] = adv.item<double>();
        terms["cycle"] = cycle.item<double>();
      }
      const auto d_loss =
          losses::adversarial_loss_cyclegan(model.d_x(xb), model.d_x(fake_x.detach()),
                                            losses::AdversarialRole::Discriminator) +
          losses::adversarial_loss_cyclegan(model.d_y(yb), model.d_y(fake_y.detach()),
                                            losses::AdversarialRole::Discriminator);
      check_finite(d_loss, "discriminator", step);
      opt_d.zero_grad();
      d_loss.backward();
      opt_d.step();
      terms["discriminator"] = d_loss.item<double>();
    } catch (const DivergenceError&) {
      save(run.out_dir / "last_good.pt", step - 1);
      throw;
    }
    log_terms(log, step, terms, run, timer);
    result.history.push_back(terms);
    result.steps_done = step;
    if (tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0) save(ckpt, step);
    if (step == run.stop_after) break;
  }
  save(ckpt, result.steps_done);
  return result;
}

// ---------------------------------------------------------------------------

CasnetModel::CasnetModel(int image_size, std::uint64_t seed) {
  if (image_size < 32 || image_size % 4 != 0)
    throw ParameterError("CASNet needs an image size >= 32 divisible by 4, got " + std::to_string(image_size));
  encoder = nets::make_seeded<nets::CasEncoder>(derive_seed(seed, hash_string("encoder")));
  separator = nets::make_seeded<nets::CasSeparator>(derive_seed(seed, hash_string("separator")));
  generator = nets::make_seeded<nets::CasGenerator>(derive_seed(seed, hash_string("generator")), image_size / 4);
  d_x = nets::make_seeded<nets::PatchDiscriminator>(derive_seed(seed, hash_string("d_x")));
  d_y = nets::make_seeded<nets::PatchDiscriminator>(derive_seed(seed, hash_string("d_y")));
}

std::vector<NamedModule> CasnetModel::named() {
  return {{"encoder", encoder.get()},
          {"separator", separator.get()},
          {"generator", generator.get()},
          {"d_x", d_x.get()},
          {"d_y", d_y.get()}};
}

void CasnetModel::train(bool on) {
  for (auto& n : named()) n.module->train(on);
}

nets::PerceptualNet make_perceptual(const CasnetConfig& cfg) {
  auto p = nets::make_seeded<nets::PerceptualNet>(derive_seed(0, hash_string("perceptual")), cfg.perceptual);
  if (!cfg.perceptual_weights.empty()) {
    if (nets::load_weights(*p, cfg.perceptual_weights) == 0)
      throw IoError("no perceptual weights matched in " + cfg.perceptual_weights);
    for (auto& t : p->parameters()) t.requires_grad_(false);
  }
  p->eval();
  return p;
}

CasnetTranslation casnet_translate(CasnetModel& model, const torch::Tensor& x, const torch::Tensor& y, bool cadt) {
  const auto fx = model.separator(model.encoder(x));
  const auto fy = model.separator(model.encoder(y));
  const auto tr = cadt::transfer_styles(fx, fy, cadt);
  return {model.generator->decode(fx.unflatten(tr.x_to_y)), model.generator->decode(fy.unflatten(tr.y_to_x))};
}

torch::Tensor convert_batch(CasnetModel& model, const torch::Tensor& x, const torch::Tensor& y, bool cadt) {
  return casnet_translate(model, x, y, cadt).x_to_y;
}

TrainResult train_casnet(const ImageSet& x, const ImageSet& y, const CasnetConfig& cfg, const RunOptions& run) {
  cfg.train.validate();
  cfg.weights.validate();
  check_pair(x, y, "train_casnet");
  if (cfg.style_loss != "gram") throw ConfigError("unsupported style loss '" + cfg.style_loss + "'");
  const auto& tc = cfg.train;
  const int image_size = static_cast<int>(x.images.size(2));
  CasnetModel model(image_size, tc.seed);
  auto perceptual = make_perceptual(cfg);
  auto opt_g = make_adam(collect_parameters({model.encoder.get(), model.separator.get(), model.generator.get()}), tc);
  auto opt_d = make_adam(collect_parameters({model.d_x.get(), model.d_y.get()}), tc);
  const auto bs = static_cast<std::size_t>(tc.batch_size);
  BatchSampler sx(x.size(), bs, derive_seed(tc.seed, hash_string("sample-x")));
  BatchSampler sy(y.size(), bs, derive_seed(tc.seed, hash_string("sample-y")));
  const std::vector<NamedOptimizer> optims{{"g", &opt_g}, {"d", &opt_d}};

  long start = 0;
  if (!run.resume_from.empty()) {
    const auto loaded = load_checkpoint(run.resume_from, model.named(), optims);
    if (loaded.meta.kind != "casnet") throw ParameterError("checkpoint is not a casnet checkpoint");
    start = loaded.meta.step;
    sx.restore(loaded.rng_state.at("sampler_x"));
    sy.restore(loaded.rng_state.at("sampler_y"));
  }
  auto save = [&](const std::filesystem::path& file, long step) {
    CheckpointMeta meta{"casnet", step, run.config_hash,
                        {{"image_size", std::to_string(image_size)}, {"cadt", cfg.cadt ? "true" : "false"}}};
    save_checkpoint(file, meta, model.named(), optims, {{"sampler_x", sx.state()}, {"sampler_y", sy.state()}});
  };
  TrainLog log(run.out_dir / "train_log.csv", run.resume_from.empty() ? -1 : start);
  const auto ckpt = run.out_dir / "checkpoint.pt";
  TrainResult result{ckpt, start, {}};
  StepTimer timer;
  model.train(true);
  using losses::AdversarialRole;

  for (long step = start + 1; step <= tc.steps; ++step) {
    const auto xb = index_batch(x.images, sx.next());
    const auto yb = index_batch(y.images, sy.next());
    std::vector<torch::Tensor> px, py;
    {
      torch::NoGradGuard guard;
      px = perceptual(xb);
      py = perceptual(yb);
    }
    std::map<std::string, double> terms;
    try {
      torch::Tensor x2y, y2x;
      for (int k = 0; k < tc.gen_updates_per_step; ++k) {
        const auto fx = model.separator(model.encoder(xb));
        const auto fy = model.separator(model.encoder(yb));
        const auto tr = cadt::transfer_styles(fx, fy, cfg.cadt);
        x2y = model.generator->decode(fx.unflatten(tr.x_to_y));
        y2x = model.generator->decode(fy.unflatten(tr.y_to_x));
        const auto rec_x = model.generator(fx.content, fx.style);
        const auto rec_y = model.generator(fy.content, fy.style);

        losses::LossTerms t;
        t.adversarial = losses::adversarial_loss_casnet({}, model.d_y(x2y), AdversarialRole::Generator) +
                        losses::adversarial_loss_casnet({}, model.d_x(y2x), AdversarialRole::Generator);
        t.reconstruction = losses::reconstruction_loss(xb, rec_x) + losses::reconstruction_loss(yb, rec_y);
        t.consistency =
            losses::consistency_loss(model.separator(model.encoder(x2y)).content, fx.content.detach()) +
            losses::consistency_loss(model.separator(model.encoder(y2x)).content, fy.content.detach());
        const auto p_x2y = perceptual(x2y);
        const auto p_y2x = perceptual(y2x);
        t.content = losses::perceptual_content_loss(p_x2y, px, cfg.content_taps) +
                    losses::perceptual_content_loss(p_y2x, py, cfg.content_taps);
        t.style = losses::mixed_style_loss(p_x2y, py, tr.mix_x_to_y.detach(), cfg.style_taps) +
                  losses::mixed_style_loss(p_y2x, px, tr.mix_y_to_x.detach(), cfg.style_taps);
        auto breakdown = losses::total_casnet_loss(t, cfg.weights, step);
        opt_g.zero_grad();
        breakdown.total.backward();
        opt_g.step();
        terms = breakdown.terms;
      }
      const auto d_loss =
          losses::adversarial_loss_casnet(model.d_x(xb), model.d_x(y2x.detach()), AdversarialRole::Discriminator) +
          losses::adversarial_loss_casnet(model.d_y(yb), model.d_y(x2y.detach()), AdversarialRole::Discriminator);
      check_finite(d_loss, "discriminator", step);
      opt_d.zero_grad();
      d_loss.backward();
      opt_d.step();
      terms["discriminator"] = d_loss.item<double>();
    } catch (const DivergenceError&) {
      save(run.out_dir / "last_good.pt", step - 1);
      throw;
    }
    log_terms(log, step, terms, run, timer);
    result.history.push_back(terms);
    result.steps_done = step;
    if (tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0) save(ckpt, step);
    if (step == run.stop_after) break;
  }
  save(ckpt, result.steps_done);
  return result;
}

CasnetModel load_casnet(const std::filesystem::path& checkpoint) {
  const auto meta = read_checkpoint_meta(checkpoint);
  if (meta.kind != "casnet") throw ParameterError(checkpoint.string() + " is not a casnet checkpoint");
  CasnetModel model(std::stoi(meta.value("image_size")), 0);
  load_checkpoint(checkpoint, model.named(), {});
  model.train(false);
  return model;
}

DatasetManifest convert_dataset(const std::filesystem::path& checkpoint, const DatasetManifest& x,
                                const ImageSet& y, const std::filesystem::path& out_dir,
                                const ConvertOptions& opts) {
  if (y.size() == 0) throw ParameterError("convert_dataset needs target-domain images as the style source");
  if (opts.batch < 1) throw ParameterError("convert batch must be >= 1");
  auto model = load_casnet(checkpoint);
  torch::NoGradGuard guard;
  std::filesystem::create_directories(out_dir / "images");

  DatasetManifest out;
  out.generator_seed = x.generator_seed;
  out.image_size = x.image_size;
  out.root = out_dir;
  out.entries.resize(x.entries.size());
  std::mt19937_64 rng(opts.seed);
  const int s = x.image_size;
  for (std::size_t start = 0; start < x.entries.size(); start += static_cast<std::size_t>(opts.batch)) {
    const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(opts.batch), x.entries.size() - start);
    auto xb = torch::empty({static_cast<int64_t>(b), 3, s, s}, torch::kFloat);
    parallel_for(b, opts.threads, [&](std::size_t i) {
      const auto img = read_png(x.image_path(x.entries[start + i]));
      if (img.height != s || img.width != s) throw ShapeError("source image has the wrong size");
      image_to_tensor(img, xb.data_ptr<float>() + i * 3 * s * s);
    });
    std::vector<int64_t> pick(b);
    for (auto& p : pick) p = static_cast<int64_t>(rng() % static_cast<std::uint64_t>(y.size()));
    const auto converted = convert_batch(model, xb, index_batch(y.images, pick), opts.cadt);
    parallel_for(b, opts.threads, [&](std::size_t i) {
      const auto& src = x.entries[start + i];
      ManifestEntry e = src;
      e.id = "XY-" + src.id;
      e.path = "images/" + e.id + ".png";
      e.domain = Domain::Converted;
      e.source_id = src.id;
      write_png(out_dir / e.path, tensor_to_image(converted[static_cast<int64_t>(i)]));
      out.entries[start + i] = std::move(e);
    });
  }
  out.validate();
  save_manifest(out, out_dir / "manifest.json");
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(const nets::ClassifierOptions& o) {
  std::string hidden;
  for (auto h : o.hidden) hidden += (hidden.empty() ? "" : ",") + std::to_string(h);
  return "width_divisor=" + std::to_string(o.width_divisor) + ";input_size=" + std::to_string(o.input_size) +
         ";pool_size=" + std::to_string(o.pool_size) + ";hidden=" + hidden + ";dropout=" + format_double(o.dropout);
}

namespace {

nets::ClassifierOptions parse_classifier_options(const std::string& text) {
  const auto kv = parse_options(text);
  nets::ClassifierOptions o;
  try {
    o.width_divisor = std::stoi(kv.at("width_divisor"));
    o.input_size = std::stoi(kv.at("input_size"));
    o.pool_size = std::stoi(kv.at("pool_size"));
    o.dropout = std::stod(kv.at("dropout"));
    o.hidden.clear();
    std::istringstream is(kv.at("hidden"));
    for (std::string h; std::getline(is, h, ',');) o.hidden.push_back(std::stoll(h));
  } catch (const std::exception&) {
    throw IoError("classifier checkpoint has malformed network options: " + text);
  }
  return o;
}

}  // namespace

TrainResult train_classifier(const ImageSet& data, const ClassifierConfig& cfg, const RunOptions& run) {
  cfg.train.validate();
  if (data.size() == 0) throw ParameterError("classifier training set is empty");
  const auto positives = data.labels.sum().item<double>();
  if (positives == 0.0 || positives == static_cast<double>(data.size()))
    throw ParameterError("classifier training set must contain both classes");
  const auto& tc = cfg.train;
  auto model = nets::make_seeded<nets::Classifier>(derive_seed(tc.seed, hash_string("init")), cfg.net);
  if (!cfg.pretrained_weights.empty() && nets::load_weights(*model, cfg.pretrained_weights) == 0)
    throw IoError("no classifier weights matched in " + cfg.pretrained_weights);
  if (cfg.freeze_backbone) model->freeze_backbone();
  std::vector<torch::Tensor> params;
  for (auto& p : model->parameters())
    if (p.requires_grad()) params.push_back(p);
  torch::optim::SGD opt(params, torch::optim::SGDOptions(tc.lr).momentum(tc.momentum));
  BatchSampler sampler(static_cast<std::size_t>(data.size()), static_cast<std::size_t>(tc.batch_size),
                       derive_seed(tc.seed, hash_string("batches")));
  const std::vector<NamedOptimizer> optims{{"sgd", &opt}};
  const std::vector<NamedModule> nets{{"classifier", model.get()}};

  long start = 0;
  if (!run.resume_from.empty()) {
    const auto loaded = load_checkpoint(run.resume_from, nets, optims);
    if (loaded.meta.kind != "classifier") throw ParameterError("checkpoint is not a classifier checkpoint");
    start = loaded.meta.step;
    sampler.restore(loaded.rng_state.at("sampler"));
    set_torch_rng_state(loaded.rng_state.at("torch"));
  } else {
    torch::manual_seed(derive_seed(tc.seed, hash_string("dropout")));
  }
  auto save = [&](const std::filesystem::path& file, long epoch) {
    CheckpointMeta meta{"classifier", epoch, run.config_hash,
                        {{"net_options", to_string(cfg.net)},
                         {"freeze_backbone", cfg.freeze_backbone ? "true" : "false"}}};
    save_checkpoint(file, meta, nets, optims, {{"sampler", sampler.state()}, {"torch", torch_rng_state()}});
  };

  // Frozen layers are deterministic, so their output is computed once.
  torch::Tensor inputs = data.images;
  if (cfg.freeze_backbone) {
    torch::NoGradGuard guard;
    model->eval();
    std::vector<torch::Tensor> parts;
    for (int64_t i = 0; i < data.size(); i += 64)
      parts.push_back(model->frozen_prefix(data.images.slice(0, i, std::min(data.size(), i + 64))));
    inputs = torch::cat(parts);
  }
  auto logits_of = [&](const torch::Tensor& batch) {
    return cfg.freeze_backbone ? model->logits_from_prefix(batch) : model->logits(batch);
  };

  TrainLog log(run.out_dir / "train_log.csv", run.resume_from.empty() ? -1 : start);
  const auto ckpt = run.out_dir / "checkpoint.pt";
  TrainResult result{ckpt, start, {}};
  StepTimer timer;
  for (long epoch = start + 1; epoch <= tc.steps; ++epoch) {
    model->train(true);
    double loss_sum = 0.0;
    int64_t correct = 0;
    try {
      for (const auto& idx : sampler.epoch()) {
        const auto logits = logits_of(index_batch(inputs, idx));
        const auto labels = index_batch(data.labels, idx);
        const auto loss = F::binary_cross_entropy_with_logits(logits, labels);
        check_finite(loss, "bce", epoch);
        opt.zero_grad();
        loss.backward();
        opt.step();
        loss_sum += loss.item<double>() * static_cast<double>(idx.size());
        correct += ((logits.detach() > 0).to(torch::kFloat) == labels).sum().item<int64_t>();
      }
    } catch (const DivergenceError&) {
      save(run.out_dir / "last_good.pt", epoch - 1);
      throw;
    }
    const std::map<std::string, double> terms{
        {"bce", loss_sum / static_cast<double>(data.size())},
        {"train_accuracy", static_cast<double>(correct) / static_cast<double>(data.size())}};
    log_terms(log, epoch, terms, run, timer);
    result.history.push_back(terms);
    result.steps_done = epoch;
    if (tc.checkpoint_every > 0 && epoch % tc.checkpoint_every == 0) save(ckpt, epoch);
    if (epoch == run.stop_after) break;
  }
  save(ckpt, result.steps_done);
  return result;
}

nets::Classifier load_classifier(const std::filesystem::path& checkpoint) {
  const auto meta = read_checkpoint_meta(checkpoint);
  if (meta.kind != "classifier") throw ParameterError(checkpoint.string() + " is not a classifier checkpoint");
  nets::Classifier model(parse_classifier_options(meta.value("net_options")));
  load_checkpoint(checkpoint, {{"classifier", model.get()}}, {});
  model->eval();
  return model;
}

torch::Tensor predict(nets::Classifier& model, const torch::Tensor& images, int batch) {
  torch::NoGradGuard guard;
  model->eval();
  std::vector<torch::Tensor> parts;
  for (int64_t i = 0; i < images.size(0); i += batch)
    parts.push_back(model->forward(images.slice(0, i, std::min(images.size(0), i + batch))));
  return parts.empty() ? torch::empty({0}) : torch::cat(parts);
}

}  // namespace casnet::train
