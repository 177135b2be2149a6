#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include <cmath>
#include <random>

#include "casnet/dataset.hpp"
#include "casnet/errors.hpp"
#include "casnet/image.hpp"
#include "test_util.hpp"

using namespace casnet;
using casnet::testing::TempDir;

TEST(ImageIo, ByteMappingEndpointsAndClamping) {
  EXPECT_EQ(to_byte(-1.0f), 0);
  EXPECT_EQ(to_byte(1.0f), 255);
  EXPECT_EQ(to_byte(-3.0f), 0);
  EXPECT_EQ(to_byte(7.0f), 255);
  for (int b = 0; b < 256; ++b) EXPECT_EQ(to_byte(from_byte(static_cast<std::uint8_t>(b))), b);
}

TEST(ImageIo, PngRoundTripIsExactOnQuantizedValues) {
  TempDir dir("png");
  Image img(9, 13);
  std::mt19937 rng(3);
  for (auto& v : img.pixels) v = from_byte(static_cast<std::uint8_t>(rng() % 256));
  write_png(dir / "a.png", img);
  const auto back = read_png(dir / "a.png");
  ASSERT_EQ(back.height, 9);
  ASSERT_EQ(back.width, 13);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_EQ(back.pixels[i], img.pixels[i]);
}

TEST(ImageIo, MissingPngThrowsIoError) {
  EXPECT_THROW(read_png("/nonexistent/file.png"), IoError);
}

namespace {

DatasetManifest tiny_manifest() {
  DatasetManifest m;
  m.generator_seed = 42;
  m.image_size = 32;
  ManifestEntry a;
  a.id = "X-train-d-00000";
  a.path = "images/a.png";
  a.label = Label::Deformed;
  a.pose = {2, 123.25, 55.5, 0.3125};
  a.deformation.lattice_weights.fill(0.1);
  a.deformation.lattice_weights[5] = 0.7000000000000001;
  a.deformation.surface_noise_amp = 0.3;
  a.deformation.tab_open = 0.5;
  a.deformation.seed = 0xfeedfacecafebeefULL;
  ManifestEntry b;
  b.id = "X-train-n-00000";
  b.path = "images/b.png";
  b.label = Label::NonDeformed;
  b.deformation.tab_open = 0.25;
  m.entries = {a, b};
  return m;
}

}  // namespace

TEST(Manifest, SaveLoadRoundTripPreservesEveryField) {
  TempDir dir("manifest");
  const auto m = tiny_manifest();
  save_manifest(m, dir / "manifest.json");
  const auto back = load_manifest(dir / "manifest.json");
  EXPECT_EQ(back.generator_seed, m.generator_seed);
  EXPECT_EQ(back.image_size, m.image_size);
  ASSERT_EQ(back.entries.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.entries[i].id, m.entries[i].id);
    EXPECT_EQ(back.entries[i].label, m.entries[i].label);
    EXPECT_EQ(back.entries[i].pose, m.entries[i].pose);
    EXPECT_EQ(back.entries[i].deformation, m.entries[i].deformation);
  }
  EXPECT_EQ(back.root, dir.path());
}

TEST(Manifest, RecordsClassCountsPerSplit) {
  TempDir dir("manifest");
  save_manifest(tiny_manifest(), dir / "manifest.json");
  const auto j = nlohmann::json::parse(casnet::testing::slurp(dir / "manifest.json"));
  EXPECT_EQ(j["class_counts"]["train"]["deformed"], 1);
  EXPECT_EQ(j["class_counts"]["train"]["nondeformed"], 1);
}

TEST(Manifest, TamperedCountsAreRejected) {
  TempDir dir("manifest");
  save_manifest(tiny_manifest(), dir / "manifest.json");
  auto j = nlohmann::json::parse(casnet::testing::slurp(dir / "manifest.json"));
  j["class_counts"]["train"]["deformed"] = 5;
  std::ofstream(dir / "manifest.json") << j.dump();
  EXPECT_THROW(load_manifest(dir / "manifest.json"), Error);
}

TEST(Manifest, DuplicateIdsFailValidation) {
  auto m = tiny_manifest();
  m.entries[1].id = m.entries[0].id;
  EXPECT_THROW(m.validate(), Error);
}

TEST(Manifest, NondeformedEntryWithDeformationFailsValidation) {
  auto m = tiny_manifest();
  m.entries[1].deformation.surface_noise_amp = 0.2;
  EXPECT_THROW(m.validate(), Error);
}

TEST(Manifest, MissingFileIsMissingArtifact) {
  EXPECT_THROW(load_manifest("/nonexistent/manifest.json"), MissingArtifactError);
}

TEST(Manifest, FormatDoubleRoundTrips) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng);
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
}

TEST(Manifest, LabelAndDomainStringsRoundTrip) {
  for (auto l : {Label::Deformed, Label::NonDeformed}) EXPECT_EQ(parse_label(to_string(l)), l);
  for (auto d : {Domain::Synthetic, Domain::Real, Domain::Converted}) EXPECT_EQ(parse_domain(to_string(d)), d);
  EXPECT_THROW(parse_label("bent"), Error);
}
