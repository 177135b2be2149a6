#include "casnet/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "casnet/errors.hpp"

namespace casnet {

using nlohmann::json;

std::string_view to_string(Label label) {
  return label == Label::Deformed ? "deformed" : "nondeformed";
}

std::string_view to_string(Domain domain) {
  switch (domain) {
    case Domain::Synthetic:
      return "X";
    case Domain::Real:
      return "Y";
    case Domain::Converted:
      return "XY";
  }
  return "?";
}

Label parse_label(std::string_view s) {
  if (s == "deformed") return Label::Deformed;
  if (s == "nondeformed") return Label::NonDeformed;
  throw ParameterError("unknown label '" + std::string(s) + "'");
}

Domain parse_domain(std::string_view s) {
  if (s == "X" || s == "x" || s == "synthetic") return Domain::Synthetic;
  if (s == "Y" || s == "y" || s == "real") return Domain::Real;
  if (s == "XY" || s == "converted") return Domain::Converted;
  throw ParameterError("unknown domain '" + std::string(s) + "' (expected X, Y or XY)");
}

bool DeformationParams::has_deformation() const {
  return surface_noise_amp != 0.0 ||
         std::any_of(lattice_weights.begin(), lattice_weights.end(), [](double w) { return w != 0.0; });
}

DeformationParams DeformationParams::clamped() const {
  DeformationParams out = *this;
  for (auto& w : out.lattice_weights) w = std::clamp(w, 0.0, 1.0);
  out.surface_noise_amp = std::clamp(surface_noise_amp, 0.0, 1.0);
  out.tab_open = std::clamp(tab_open, 0.0, 1.0);
  return out;
}

std::map<std::string, ClassCounts> DatasetManifest::class_counts() const {
  std::map<std::string, ClassCounts> counts;
  for (const auto& e : entries) {
    auto& c = counts[e.split];
    (e.label == Label::Deformed ? c.deformed : c.nondeformed)++;
  }
  return counts;
}

ClassCounts DatasetManifest::totals() const {
  ClassCounts c;
  for (const auto& e : entries) (e.label == Label::Deformed ? c.deformed : c.nondeformed)++;
  return c;
}

void DatasetManifest::validate() const {
  std::set<std::string_view> ids;
  for (const auto& e : entries) {
    if (!ids.insert(e.id).second) throw ParameterError("duplicate id in manifest: " + e.id);
    if (e.domain != Domain::Converted && e.label == Label::NonDeformed && e.deformation.has_deformation())
      throw ParameterError("non-deformed entry carries deformation weights: " + e.id);
  }
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

namespace {

json to_json(const ManifestEntry& e) {
  json d;
  d["lattice_weights"] = e.deformation.lattice_weights;
  d["surface_noise_amp"] = e.deformation.surface_noise_amp;
  d["tab_open"] = e.deformation.tab_open;
  d["seed"] = e.deformation.seed;
  json j;
  j["id"] = e.id;
  j["path"] = e.path;
  j["label"] = to_string(e.label);
  j["domain"] = to_string(e.domain);
  j["split"] = e.split;
  j["camera"] = {{"index", e.pose.camera_index},
                 {"theta_deg", e.pose.theta_deg},
                 {"phi_deg", e.pose.phi_deg},
                 {"radius_m", e.pose.radius_m}};
  j["deformation"] = std::move(d);
  if (!e.source_id.empty()) j["source_id"] = e.source_id;
  return j;
}

ManifestEntry entry_from_json(const json& j) {
  ManifestEntry e;
  e.id = j.at("id").get<std::string>();
  e.path = j.at("path").get<std::string>();
  e.label = parse_label(j.at("label").get<std::string>());
  e.domain = parse_domain(j.at("domain").get<std::string>());
  e.split = j.at("split").get<std::string>();
  const auto& c = j.at("camera");
  e.pose.camera_index = c.at("index").get<int>();
  e.pose.theta_deg = c.at("theta_deg").get<double>();
  e.pose.phi_deg = c.at("phi_deg").get<double>();
  e.pose.radius_m = c.at("radius_m").get<double>();
  const auto& d = j.at("deformation");
  e.deformation.lattice_weights = d.at("lattice_weights").get<std::array<double, kLatticeGrid * kLatticeGrid>>();
  e.deformation.surface_noise_amp = d.at("surface_noise_amp").get<double>();
  e.deformation.tab_open = d.at("tab_open").get<double>();
  e.deformation.seed = d.at("seed").get<std::uint64_t>();
  if (j.contains("source_id")) e.source_id = j.at("source_id").get<std::string>();
  return e;
}

}  // namespace

std::string manifest_json(const DatasetManifest& m) {
  json j;
  j["format"] = "casnet-manifest-1";
  j["generator_seed"] = m.generator_seed;
  j["image_size"] = m.image_size;
  json counts = json::object();
  for (const auto& [split, c] : m.class_counts())
    counts[split] = {{"deformed", c.deformed}, {"nondeformed", c.nondeformed}};
  j["class_counts"] = std::move(counts);
  json entries = json::array();
  for (const auto& e : m.entries) entries.push_back(to_json(e));
  j["entries"] = std::move(entries);
  return j.dump(1) + "\n";
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write manifest: " + file.string());
  out << manifest_json(m);
  if (!out) throw IoError("write failed: " + file.string());
}

DatasetManifest load_manifest(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw MissingArtifactError("manifest not found: " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& ex) {
    throw IoError("malformed manifest " + file.string() + ": " + ex.what());
  }
  DatasetManifest m;
  try {
    m.generator_seed = j.at("generator_seed").get<std::uint64_t>();
    m.image_size = j.at("image_size").get<int>();
    for (const auto& e : j.at("entries")) m.entries.push_back(entry_from_json(e));
    m.root = file.parent_path();
    if (j.contains("class_counts")) {
      std::map<std::string, ClassCounts> recorded;
      for (const auto& [split, c] : j.at("class_counts").items())
        recorded[split] = {c.at("deformed").get<std::size_t>(), c.at("nondeformed").get<std::size_t>()};
      if (recorded != m.class_counts())
        throw IoError("manifest class counts disagree with its entries: " + file.string());
    }
  } catch (const json::exception& ex) {
    throw IoError("malformed manifest " + file.string() + ": " + ex.what());
  }
  m.validate();
  return m;
}

}  // namespace casnet
