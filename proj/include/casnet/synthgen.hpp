#pragma once

// Procedural generation of deformed / non-deformed can images in two visual
// domains, plus export of an equivalent scene script for an external renderer.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "casnet/dataset.hpp"
#include "casnet/image.hpp"

namespace casnet::synthgen {

struct ThetaBand {
  double min_deg;
  double max_deg;
};

// Azimuth band per camera; elevation and radius ranges are shared.
inline constexpr std::array<ThetaBand, 4> kThetaBands{{{20, 70}, {110, 160}, {200, 250}, {290, 340}}};
inline constexpr double kPhiMinDeg = 50.0;
inline constexpr double kPhiMaxDeg = 70.0;
inline constexpr double kRadiusMin = 0.30;
inline constexpr double kRadiusMax = 0.45;

CameraPose sample_camera_pose(std::mt19937_64& rng, int camera_index);

// Amplitude ranges used when sampling the deformed class. Weights are drawn
// uniformly from [min, max] and then clamped to [0, 1].
struct DeformationConfig {
  double lattice_min = 0.4;
  double lattice_max = 1.0;
  double noise_min = 0.4;
  double noise_max = 1.0;
  // Peak control-point displacement at weight 1, in object half-width units.
  double lattice_amplitude = 0.55;
  // Peak contour offset at noise amplitude 1, in object half-width units.
  double contour_amplitude = 0.16;
};

DeformationParams sample_deformation(std::mt19937_64& rng, Label label, const DeformationConfig& cfg = {});

// Per-pixel object coverage (1 = object), row-major H×W.
using ObjectMask = std::vector<std::uint8_t>;

struct RenderResult {
  Image image;
  ObjectMask mask;
};

// Renders one scene. Output is a pure function of the arguments.
RenderResult render_scene(const DeformationParams& params, const CameraPose& pose, Domain domain, int size,
                          const DeformationConfig& cfg = {});

// Throws ParameterError for size < 32. The label is derived from the
// parameters: any nonzero lattice weight or surface noise means deformed.
LabeledImage render_procedural(const DeformationParams& params, const CameraPose& pose, Domain domain, int size,
                               std::string id = {}, const DeformationConfig& cfg = {});

// Area (fraction of pixels) where the silhouette differs from the undeformed
// template at the same pose.
double silhouette_warp_energy(const DeformationParams& params, const CameraPose& pose, int size,
                              const DeformationConfig& cfg = {});

struct GenerateRequest {
  int n_per_class = 1;
  Domain domain = Domain::Synthetic;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  std::string split = "train";
  int image_size = 64;
  DeformationConfig deformation;
  // Worker threads for rendering; 0 picks hardware concurrency.
  unsigned threads = 0;
};

// Writes 2·n_per_class PNGs plus manifest.json into out_dir.
DatasetManifest generate_dataset(const GenerateRequest& req);

// One directive per line. The output is never executed by this library.
void export_renderer_script(const DatasetManifest& manifest, const std::filesystem::path& out);
std::string renderer_script_text(const DatasetManifest& manifest);

}  // namespace casnet::synthgen
