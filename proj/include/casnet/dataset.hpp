#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "casnet/image.hpp"

namespace casnet {

enum class Label { Deformed, NonDeformed };

// X = synthetic renders, Y = real-style renders, XY = X images converted
// into the Y style by a trained translation network.
enum class Domain { Synthetic, Real, Converted };

std::string_view to_string(Label label);
std::string_view to_string(Domain domain);
Label parse_label(std::string_view s);
Domain parse_domain(std::string_view s);

struct CameraPose {
  int camera_index = 1;
  double theta_deg = 0.0;
  double phi_deg = 0.0;
  double radius_m = 0.0;

  bool operator==(const CameraPose&) const = default;
};

inline constexpr int kLatticeGrid = 4;

struct DeformationParams {
  std::array<double, kLatticeGrid * kLatticeGrid> lattice_weights{};
  double surface_noise_amp = 0.0;
  double tab_open = 0.0;
  std::uint64_t seed = 0;

  bool has_deformation() const;
  // Copy with every weight clamped to [0, 1].
  DeformationParams clamped() const;

  bool operator==(const DeformationParams&) const = default;
};

struct LabeledImage {
  Image pixels;
  Label label = Label::NonDeformed;
  Domain domain = Domain::Synthetic;
  std::string id;
};

struct ManifestEntry {
  std::string id;
  std::string path;  // relative to the manifest directory
  Label label = Label::NonDeformed;
  Domain domain = Domain::Synthetic;
  std::string split = "train";
  CameraPose pose;
  DeformationParams deformation;
  std::string source_id;  // set for converted images
};

struct ClassCounts {
  std::size_t deformed = 0;
  std::size_t nondeformed = 0;

  std::size_t total() const { return deformed + nondeformed; }
  bool operator==(const ClassCounts&) const = default;
};

struct DatasetManifest {
  std::uint64_t generator_seed = 0;
  int image_size = 0;
  std::vector<ManifestEntry> entries;
  // Directory holding manifest.json; not serialized.
  std::filesystem::path root;

  std::map<std::string, ClassCounts> class_counts() const;
  ClassCounts totals() const;
  std::filesystem::path image_path(const ManifestEntry& e) const { return root / e.path; }
  // Unique ids, labels consistent with deformation parameters.
  void validate() const;
};

std::string manifest_json(const DatasetManifest& m);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& file);
// Also checks the recorded per-split class counts against the entries.
DatasetManifest load_manifest(const std::filesystem::path& file);

// Shortest decimal string that parses back to exactly the same double.
std::string format_double(double v);

}  // namespace casnet
