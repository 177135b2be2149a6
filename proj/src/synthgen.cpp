#include "casnet/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <thread>

#include "casnet/errors.hpp"
#include "casnet/parallel.hpp"
#include "casnet/random.hpp"

namespace casnet::synthgen {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Hash-lattice value noise in [0,1], bilinear with smoothstep fade.
double value_noise(double x, double y, std::uint64_t seed) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  auto corner = [&](std::int64_t cx, std::int64_t cy) {
    const auto h = mix64(seed ^ mix64(static_cast<std::uint64_t>(cx) * 0x632be59bd9b4e019ULL +
                                      static_cast<std::uint64_t>(cy)));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
  };
  const double tx = smoothstep(x - fx), ty = smoothstep(y - fy);
  const double a = corner(ix, iy) + (corner(ix + 1, iy) - corner(ix, iy)) * tx;
  const double b = corner(ix, iy + 1) + (corner(ix + 1, iy + 1) - corner(ix, iy + 1)) * tx;
  return a + (b - a) * ty;
}

struct Rgb {
  double r = 0, g = 0, b = 0;
  Rgb operator*(double s) const { return {r * s, g * s, b * s}; }
  Rgb operator+(const Rgb& o) const { return {r + o.r, g + o.g, b + o.b}; }
};

Rgb mix(const Rgb& a, const Rgb& b, double t) { return a * (1.0 - t) + b * t; }

Rgb random_color(std::mt19937_64& rng, double lo, double hi) {
  return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

// Screen-space placement of the can for one camera pose.
struct Geometry {
  double cx = 0.0, cy = 0.06;
  double half_width = 0.0, half_height = 0.0;
  double cap = 0.0;  // lid ellipse vertical semi-axis, in half-height units
  double theta = 0.0;
};

Geometry geometry_for(const CameraPose& pose) {
  const double scale = kRadiusMin / pose.radius_m;
  Geometry g;
  g.half_width = 0.40 * scale;
  g.half_height = 0.56 * scale;
  g.cap = g.half_width * 0.55 * std::cos(pose.phi_deg * kDeg) / g.half_height;
  g.theta = pose.theta_deg * kDeg;
  return g;
}

// Deformation fields, built once per parameter set. Random directions and
// phases depend only on the seed; the weights scale them.
struct Deformation {
  std::array<double, 16> node_dx{}, node_dy{};
  std::array<double, 4> freq{}, phase_left{}, phase_right{};
  std::array<double, 6> crinkle_kx{}, crinkle_ky{}, crinkle_phase{};
  double contour = 0.0;
  double crinkle = 0.0;
  bool lattice_active = false;

  Deformation(const DeformationParams& raw, const DeformationConfig& cfg) {
    const DeformationParams p = raw.clamped();
    std::mt19937_64 rng(derive_seed(p.seed, hash_string("deformation")));
    for (std::size_t i = 0; i < node_dx.size(); ++i) {
      const double angle = uniform(rng, 0.0, 2.0 * kPi);
      const double w = p.lattice_weights[i] * cfg.lattice_amplitude;
      node_dx[i] = w * std::cos(angle);
      node_dy[i] = w * std::sin(angle);
      lattice_active = lattice_active || w != 0.0;
    }
    for (std::size_t k = 0; k < freq.size(); ++k) {
      freq[k] = uniform(rng, 6.0, 14.0);
      phase_left[k] = uniform(rng, 0.0, 2.0 * kPi);
      phase_right[k] = uniform(rng, 0.0, 2.0 * kPi);
    }
    for (std::size_t k = 0; k < crinkle_kx.size(); ++k) {
      const double angle = uniform(rng, 0.0, kPi);
      const double f = uniform(rng, 8.0, 16.0);
      crinkle_kx[k] = f * std::cos(angle);
      crinkle_ky[k] = f * std::sin(angle);
      crinkle_phase[k] = uniform(rng, 0.0, 2.0 * kPi);
    }
    contour = p.surface_noise_amp * cfg.contour_amplitude;
    crinkle = 0.45 * p.surface_noise_amp;
  }

  // Cubic Bezier patch over the lattice box, in object half-width units.
  void displacement(double a, double b, double& da, double& db) const {
    da = db = 0.0;
    if (!lattice_active) return;
    const double ta = std::clamp((a + 1.4) / 2.8, 0.0, 1.0);
    const double tb = std::clamp((b + 1.4) / 2.8, 0.0, 1.0);
    const double ba[4] = {(1 - ta) * (1 - ta) * (1 - ta), 3 * ta * (1 - ta) * (1 - ta), 3 * ta * ta * (1 - ta),
                          ta * ta * ta};
    const double bb[4] = {(1 - tb) * (1 - tb) * (1 - tb), 3 * tb * (1 - tb) * (1 - tb), 3 * tb * tb * (1 - tb),
                          tb * tb * tb};
    for (int j = 0; j < 4; ++j) {
      for (int i = 0; i < 4; ++i) {
        const double w = ba[i] * bb[j];
        da += w * node_dx[j * 4 + i];
        db += w * node_dy[j * 4 + i];
      }
    }
  }

  double edge_offset(double b, const std::array<double, 4>& phases) const {
    if (contour == 0.0) return 0.0;
    double s = 0.0;
    for (std::size_t k = 0; k < freq.size(); ++k) s += std::sin(freq[k] * kPi * b + phases[k]);
    return contour * s * 0.5;
  }

  double crinkle_shade(double a, double b) const {
    if (crinkle == 0.0) return 1.0;
    double s = 0.0;
    for (std::size_t k = 0; k < crinkle_kx.size(); ++k)
      s += std::sin(crinkle_kx[k] * a + crinkle_ky[k] * b + crinkle_phase[k]);
    return 1.0 + crinkle * s / 3.0;
  }
};

enum class Region { Background, Body, Lid, Base };

struct Sample {
  Region region = Region::Background;
  double a = 0.0, b = 0.0;  // template coordinates
  double stretch = 0.0;     // local lattice stretch, drives dent shading
};

struct Scene {
  const Geometry& geo;
  const Deformation& def;

  Sample classify(double u, double v) const {
    const double a = (u - geo.cx) / geo.half_width;
    // Vertical coordinate kept in half-width units for an isotropic warp.
    const double bw = (v - geo.cy) / geo.half_width;
    double da = 0.0, db = 0.0;
    def.displacement(a, bw * geo.half_width / geo.half_height, da, db);
    Sample s;
    s.a = a - da;
    s.b = (bw - db) * geo.half_width / geo.half_height;
    if (def.lattice_active) {
      constexpr double h = 1e-3;
      double da1 = 0.0, db1 = 0.0;
      def.displacement(a + h, bw * geo.half_width / geo.half_height, da1, db1);
      s.stretch = (da1 - da) / h;
    }

    const double cap = geo.cap;
    const double lid = s.a * s.a + ((s.b + 1.0) / cap) * ((s.b + 1.0) / cap);
    if (lid <= 1.0) {
      s.region = Region::Lid;
      return s;
    }
    const double left = -1.0 - def.edge_offset(s.b, def.phase_left);
    const double right = 1.0 + def.edge_offset(s.b, def.phase_right);
    if (s.b >= -1.0 && s.b <= 1.0 && s.a >= left && s.a <= right) {
      s.region = Region::Body;
      return s;
    }
    const double base = s.a * s.a + ((s.b - 1.0) / cap) * ((s.b - 1.0) / cap);
    if (s.b > 1.0 && base <= 1.0) s.region = Region::Base;
    return s;
  }

  Rgb shade(const Sample& s, double tab_open) const {
    const double x = std::clamp(s.a, -1.0, 1.0);
    const double n = std::sqrt(std::max(0.0, 1.0 - x * x));
    const double spec = std::exp(-((x - 0.45) / 0.16) * ((x - 0.45) / 0.16));
    const double dent = std::clamp(1.0 - 0.9 * s.stretch, 0.45, 1.45);
    const double crinkle = def.crinkle_shade(s.a, s.b);

    if (s.region == Region::Lid) {
      const double rb = (s.b + 1.0) / geo.cap;
      const double rho = std::sqrt(s.a * s.a + rb * rb);
      Rgb c = rho > 0.86 ? Rgb{0.86, 0.86, 0.88} : Rgb{0.62, 0.63, 0.66} * (0.85 + 0.15 * (1.0 - rho));
      // Tab at the lid centre; the opening grows with tab_open.
      const double ta = s.a / 0.22, tb = (rb - 0.15) / 0.38;
      if (ta * ta + tb * tb <= 1.0) c = Rgb{0.74, 0.75, 0.78} * (1.0 + 0.25 * tab_open);
      const double hole = 0.05 + 0.2 * tab_open;
      const double ha = s.a / hole, hb = (rb + 0.45) / (hole * 1.6);
      if (tab_open > 0.0 && ha * ha + hb * hb <= 1.0) c = Rgb{0.05, 0.05, 0.06};
      return c * crinkle;
    }

    Rgb metal = Rgb{0.78, 0.79, 0.82} * (0.35 + 0.55 * n) + Rgb{0.55, 0.55, 0.55} * spec;
    if (s.region == Region::Base) return metal * (0.7 * dent);

    Rgb c = metal;
    if (s.b >= -0.62 && s.b <= 0.55) {
      const double psi = std::asin(x) + geo.theta;
      Rgb label{0.80, 0.08, 0.10};
      const double wave = s.b - 0.18 * std::sin(2.0 * psi);
      if (std::abs(wave) < 0.10) label = Rgb{0.95, 0.95, 0.95};
      if (std::sin(5.0 * psi) > 0.85 && s.b > 0.3) label = Rgb{0.75, 0.76, 0.8};
      c = label * (0.3 + 0.7 * n) + Rgb{0.45, 0.45, 0.45} * spec;
    }
    return c * (dent * crinkle);
  }
};

// Background texture for the real-style domain; one of eight families.
struct Background {
  int family = 0;
  std::uint64_t noise_seed = 0;
  Rgb primary, secondary;
  double freq = 1.0, angle = 0.0, horizon = 0.2, phase = 0.0;
  double light_x = 0.0, light_y = 0.0;
  double shadow_dx = 0.0;

  explicit Background(std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, hash_string("background")));
    family = static_cast<int>(rng() % 8);
    noise_seed = rng();
    primary = random_color(rng, 0.25, 0.75);
    secondary = random_color(rng, 0.15, 0.85);
    freq = uniform(rng, 3.0, 9.0);
    angle = uniform(rng, 0.0, kPi);
    horizon = uniform(rng, 0.05, 0.45);
    phase = uniform(rng, 0.0, 2.0 * kPi);
    const double la = uniform(rng, 0.0, 2.0 * kPi);
    light_x = std::cos(la);
    light_y = std::sin(la);
    shadow_dx = uniform(rng, -0.15, 0.15);
  }

  double noise(double u, double v, double f, std::uint64_t salt = 0) const {
    return value_noise((u + 1.0) * f, (v + 1.0) * f, noise_seed ^ salt);
  }

  Rgb color(double u, double v) const {
    const double ru = u * std::cos(angle) + v * std::sin(angle);
    const double rv = -u * std::sin(angle) + v * std::cos(angle);
    switch (family) {
      case 0: {  // wood grain
        const double grain = 0.5 + 0.5 * std::sin(freq * 4.0 * (rv + 0.25 * noise(u, v, 2.0)) + phase);
        return mix(Rgb{0.45, 0.30, 0.18}, Rgb{0.62, 0.45, 0.28}, grain) * (0.85 + 0.3 * noise(u, v, 18.0, 1));
      }
      case 1: {  // checker cloth
        const bool odd = (static_cast<int>(std::floor(ru * freq)) + static_cast<int>(std::floor(rv * freq))) & 1;
        return odd ? primary : secondary;
      }
      case 2: {  // wall over table
        if (v < horizon) return primary * (0.9 + 0.1 * (v + 1.0));
        return secondary * (0.75 + 0.25 * noise(u, v, 6.0));
      }
      case 3:  // smooth blobs
        return mix(primary, secondary, noise(u, v, freq * 0.6));
      case 4: {  // concrete
        const double g = 0.42 + 0.2 * noise(u, v, 20.0) + 0.15 * noise(u, v, 3.0, 7);
        return Rgb{g, g, g * 1.03};
      }
      case 5: {  // diagonal stripes
        const double t = 0.5 + 0.5 * std::tanh(4.0 * std::sin(ru * freq * kPi + phase));
        return mix(primary, secondary, t);
      }
      case 6: {  // checker with noise
        const bool odd = (static_cast<int>(std::floor(ru * freq)) + static_cast<int>(std::floor(rv * freq))) & 1;
        return (odd ? primary : secondary) * (0.7 + 0.5 * noise(u, v, 14.0, 3));
      }
      default:  // vertical gradient with blobs
        return mix(mix(primary, secondary, 0.5 * (v + 1.0)), Rgb{0.5, 0.5, 0.5}, 0.4 * noise(u, v, 4.0, 5));
    }
  }

  double lighting(double u, double v) const { return 0.82 + 0.22 * (light_x * u + light_y * v); }
};

void check_size(int size) {
  if (size < 32) throw ParameterError("image size must be >= 32, got " + std::to_string(size));
}

ObjectMask render_mask(const Scene& scene, int size) {
  ObjectMask mask(static_cast<std::size_t>(size) * size, 0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5) / size * 2.0 - 1.0;
      const double v = (y + 0.5) / size * 2.0 - 1.0;
      mask[static_cast<std::size_t>(y) * size + x] = scene.classify(u, v).region != Region::Background;
    }
  }
  return mask;
}

}  // namespace

CameraPose sample_camera_pose(std::mt19937_64& rng, int camera_index) {
  if (camera_index < 1 || camera_index > 4)
    throw ParameterError("camera_index must be in 1..4, got " + std::to_string(camera_index));
  const auto& band = kThetaBands[static_cast<std::size_t>(camera_index - 1)];
  CameraPose pose;
  pose.camera_index = camera_index;
  pose.theta_deg = uniform(rng, band.min_deg, band.max_deg);
  pose.phi_deg = uniform(rng, kPhiMinDeg, kPhiMaxDeg);
  pose.radius_m = uniform(rng, kRadiusMin, kRadiusMax);
  return pose;
}

DeformationParams sample_deformation(std::mt19937_64& rng, Label label, const DeformationConfig& cfg) {
  DeformationParams p;
  // Draw every value for both classes so the stream position is label-independent.
  for (auto& w : p.lattice_weights) w = uniform(rng, cfg.lattice_min, cfg.lattice_max);
  p.surface_noise_amp = uniform(rng, cfg.noise_min, cfg.noise_max);
  p.tab_open = uniform01(rng);
  p.seed = rng();
  if (label == Label::NonDeformed) {
    p.lattice_weights.fill(0.0);
    p.surface_noise_amp = 0.0;
  }
  return p.clamped();
}

RenderResult render_scene(const DeformationParams& params, const CameraPose& pose, Domain domain, int size,
                          const DeformationConfig& cfg) {
  check_size(size);
  const Geometry geo = geometry_for(pose);
  const Deformation def(params, cfg);
  const Scene scene{geo, def};
  const double tab_open = std::clamp(params.tab_open, 0.0, 1.0);
  const bool real = domain == Domain::Real;
  const Background bg(params.seed);

  RenderResult out{Image(size, size), render_mask(scene, size)};
  constexpr double offsets[2] = {-0.25, 0.25};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      Rgb acc;
      for (double oy : offsets) {
        for (double ox : offsets) {
          const double u = (x + 0.5 + ox) / size * 2.0 - 1.0;
          const double v = (y + 0.5 + oy) / size * 2.0 - 1.0;
          const Sample s = scene.classify(u, v);
          Rgb c;
          if (s.region != Region::Background) {
            c = scene.shade(s, tab_open);
            if (real) c = Rgb{c.r * 1.06 + 0.02, c.g, c.b * 0.86} * 0.92;
          } else if (real) {
            c = bg.color(u, v);
            // Contact shadow on the supporting surface.
            const double sx = (u - geo.cx - bg.shadow_dx) / (geo.half_width * 1.35);
            const double sy = (v - geo.cy - geo.half_height - 0.03) / 0.09;
            const double r2 = sx * sx + sy * sy;
            if (r2 < 1.0) c = c * (0.55 + 0.45 * r2);
          }
          if (real) c = c * bg.lighting(u, v);
          acc = acc + c * 0.25;
        }
      }
      out.image.at(y, x, 0) = static_cast<float>(acc.r);
      out.image.at(y, x, 1) = static_cast<float>(acc.g);
      out.image.at(y, x, 2) = static_cast<float>(acc.b);
    }
  }

  std::mt19937_64 noise_rng(derive_seed(params.seed, hash_string("sensor")));
  for (auto& p : out.image.pixels) {
    double c = p;
    if (real) c += 0.03 * standard_normal(noise_rng);
    p = static_cast<float>(std::clamp(2.0 * c - 1.0, -1.0, 1.0));
  }
  return out;
}

LabeledImage render_procedural(const DeformationParams& params, const CameraPose& pose, Domain domain, int size,
                               std::string id, const DeformationConfig& cfg) {
  LabeledImage img;
  img.pixels = render_scene(params, pose, domain, size, cfg).image;
  img.label = params.clamped().has_deformation() ? Label::Deformed : Label::NonDeformed;
  img.domain = domain;
  img.id = std::move(id);
  return img;
}

double silhouette_warp_energy(const DeformationParams& params, const CameraPose& pose, int size,
                              const DeformationConfig& cfg) {
  check_size(size);
  DeformationParams flat = params;
  flat.lattice_weights.fill(0.0);
  flat.surface_noise_amp = 0.0;
  const Geometry geo = geometry_for(pose);
  const Deformation warped(params, cfg), plain(flat, cfg);
  const auto a = render_mask(Scene{geo, warped}, size);
  const auto b = render_mask(Scene{geo, plain}, size);
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i];
  return static_cast<double>(diff) / static_cast<double>(a.size());
}

DatasetManifest generate_dataset(const GenerateRequest& req) {
  if (req.n_per_class < 1) throw ParameterError("n_per_class must be >= 1");
  if (req.domain == Domain::Converted) throw ParameterError("generate_dataset renders X or Y only");
  check_size(req.image_size);
  std::error_code ec;
  std::filesystem::create_directories(req.out_dir, ec);
  if (ec || !std::filesystem::is_directory(req.out_dir))
    throw IoError("cannot create output directory: " + req.out_dir.string());

  DatasetManifest m;
  m.generator_seed = req.seed;
  m.image_size = req.image_size;
  m.root = req.out_dir;

  const std::string tag = std::string(to_string(req.domain)) + "-" + req.split;
  const auto stream = hash_string(tag);
  const std::size_t total = static_cast<std::size_t>(req.n_per_class) * 2;
  m.entries.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    const Label label = i < static_cast<std::size_t>(req.n_per_class) ? Label::Deformed : Label::NonDeformed;
    std::mt19937_64 rng(derive_seed(req.seed, stream, i));
    ManifestEntry e;
    const int camera = 1 + static_cast<int>(rng() % 4);
    e.pose = sample_camera_pose(rng, camera);
    e.deformation = sample_deformation(rng, label, req.deformation);
    e.label = label;
    e.domain = req.domain;
    e.split = req.split;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s-%c-%05zu", tag.c_str(), label == Label::Deformed ? 'd' : 'n', i);
    e.id = buf;
    e.path = e.id + ".png";
    m.entries.push_back(std::move(e));
  }

  parallel_for(total, req.threads, [&](std::size_t i) {
    const auto& e = m.entries[i];
    const auto img = render_scene(e.deformation, e.pose, e.domain, req.image_size, req.deformation);
    write_png(m.image_path(e), img.image);
  });

  m.validate();
  save_manifest(m, req.out_dir / "manifest.json");
  return m;
}

std::string renderer_script_text(const DatasetManifest& manifest) {
  std::string s;
  s += "# casnet scene script v1: one directive per line, angles in degrees, distances in meters\n";
  s += "dataset seed=" + std::to_string(manifest.generator_seed) +
       " image_size=" + std::to_string(manifest.image_size) + " entries=" + std::to_string(manifest.entries.size()) +
       "\n";
  for (const auto& e : manifest.entries) {
    const auto& d = e.deformation;
    s += "scene id=" + e.id + " label=" + std::string(to_string(e.label)) +
         " domain=" + std::string(to_string(e.domain)) + "\n";
    s += "lattice weights=";
    for (std::size_t i = 0; i < d.lattice_weights.size(); ++i) {
      if (i) s += ",";
      s += format_double(d.lattice_weights[i]);
    }
    s += "\n";
    s += "displace modifier=stucci noise=hard strength=" + format_double(d.surface_noise_amp) +
         " seed=" + std::to_string(d.seed) + "\n";
    s += "shapekey name=tab_open value=" + format_double(d.tab_open) + "\n";
    s += "camera index=" + std::to_string(e.pose.camera_index) + " theta=" + format_double(e.pose.theta_deg) +
         " phi=" + format_double(e.pose.phi_deg) + " r=" + format_double(e.pose.radius_m) + "\n";
    std::mt19937_64 rng(derive_seed(d.seed, hash_string("hdri")));
    s += "world hdri_rotation=" + format_double(uniform(rng, 0.0, 360.0)) +
         (e.domain == Domain::Synthetic ? " miss_color=black" : "") + "\n";
    s += "render output=" + e.path + " resolution=" + std::to_string(manifest.image_size) + "\n";
  }
  return s;
}

void export_renderer_script(const DatasetManifest& manifest, const std::filesystem::path& out) {
  std::ofstream f(out, std::ios::binary);
  if (!f) throw IoError("cannot write renderer script: " + out.string());
  f << renderer_script_text(manifest);
  if (!f) throw IoError("write failed: " + out.string());
}

}  // namespace casnet::synthgen
