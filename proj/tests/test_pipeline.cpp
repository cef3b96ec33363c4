#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cellsynth/pipeline.hpp"
#include "cellsynth/png_io.hpp"

using namespace cellsynth;
namespace fs = std::filesystem;

namespace {

Image white_patch(int w, int h) {
  Image img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = img.at(x, y, 1) = img.at(x, y, 2) = 1.0;
      img.at(x, y, 3) = 1.0;
    }
  }
  return img;
}

void draw_ellipse(Image& img, double cx, double cy, double rx, double ry,
                  const Eigen::Vector3d& rgb) {
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double dx = (x - cx) / rx, dy = (y - cy) / ry;
      if (dx * dx + dy * dy <= 1.0) {
        img.at(x, y, 0) = rgb[0];
        img.at(x, y, 1) = rgb[1];
        img.at(x, y, 2) = rgb[2];
      }
    }
  }
}

const Eigen::Vector3d kPurple(0.35, 0.2, 0.75); // hematoxylin-ish

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("extract_patches counts and window enumeration oracle") {
  Image img = white_patch(100, 100);
  CHECK(extract_patches(img, 50, 50).size() == 4);
  CHECK(extract_patches(img, 50, 200).size() == 1); // stride > dims

  Image img2 = white_patch(96, 96);
  auto patches = extract_patches(img2, 40, 28);
  // Window origins {0, 28, 56}^2.
  CHECK(patches.size() == 9);
  for (const auto& p : patches) {
    CHECK(p.width == 40);
    CHECK(p.height == 40);
  }

  CHECK_THROWS_AS(extract_patches(img, 128, 10), std::invalid_argument);
}

TEST_CASE("segment_blobs: blank patch yields no blobs") {
  Image img = white_patch(64, 64);
  CHECK(segment_blobs(img, ClassLabel::Normal, "src").empty());
}

TEST_CASE("segment_blobs: one dark-purple ellipse yields exactly one masked blob") {
  Image img = white_patch(64, 64);
  draw_ellipse(img, 30, 28, 12, 8, kPurple);
  auto blobs = segment_blobs(img, ClassLabel::Cancer, "srcA");
  REQUIRE(blobs.size() == 1);
  const PatchRecord& rec = blobs[0];
  CHECK(rec.label == ClassLabel::Cancer);
  CHECK(rec.source_id == "srcA");
  // Every pixel outside the ellipse must have alpha exactly 0, inside 1.
  for (int y = 0; y < rec.image.height; ++y) {
    for (int x = 0; x < rec.image.width; ++x) {
      double gx = rec.x + x, gy = rec.y + y;
      double dx = (gx - 30) / 12.0, dy = (gy - 28) / 8.0;
      bool inside = dx * dx + dy * dy <= 1.0;
      CHECK(rec.image.at(x, y, 3) == (inside ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("segment_blobs: two well-separated ellipses yield exactly two blobs") {
  Image img = white_patch(96, 96);
  draw_ellipse(img, 22, 24, 10, 7, kPurple);
  draw_ellipse(img, 70, 68, 9, 11, kPurple);
  auto blobs = segment_blobs(img, ClassLabel::Normal, "srcB");
  CHECK(blobs.size() == 2);
}

TEST_CASE("segment_blobs honors the min-area floor") {
  Image img = white_patch(64, 64);
  draw_ellipse(img, 10, 10, 2, 2, kPurple); // ~12 px, below the default floor
  CHECK(segment_blobs(img, ClassLabel::Normal, "srcC").empty());
}

TEST_CASE("export_dataset writes PNGs that round-trip with background alpha 0") {
  Image img = white_patch(64, 64);
  draw_ellipse(img, 30, 28, 12, 8, kPurple);
  auto blobs = segment_blobs(img, ClassLabel::Cancer, "srcD");
  REQUIRE(blobs.size() == 1);

  fs::path dir = fs::temp_directory_path() / "cellsynth_ds_test";
  fs::remove_all(dir);
  DatasetManifest m = export_dataset(blobs, dir.string(), "table1-32", {1, 2});
  CHECK(m.records.size() == 1);
  CHECK(m.class_counts()["cancer"] == 1);
  validate_manifest(m, dir.string());

  DatasetManifest r = read_manifest(dir.string());
  CHECK(r.records.size() == 1);
  CHECK(r.feature_preset == "table1-32");
  CHECK(r.total_features == 32);
  CHECK(r.tails == 4);

  Image back = read_png((dir / r.records[0].path).string());
  for (int y = 0; y < back.height; ++y) {
    for (int x = 0; x < back.width; ++x) {
      double a = back.at(x, y, 3);
      CHECK((a == 0.0 || a == 1.0));
      CHECK(a == blobs[0].image.at(x, y, 3));
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("validate_manifest detects missing files") {
  Image img = white_patch(64, 64);
  draw_ellipse(img, 30, 28, 12, 8, kPurple);
  auto blobs = segment_blobs(img, ClassLabel::Normal, "srcE");
  fs::path dir = fs::temp_directory_path() / "cellsynth_ds_missing";
  fs::remove_all(dir);
  DatasetManifest m = export_dataset(blobs, dir.string(), "table1-5", {});
  fs::remove(dir / m.records[0].path);
  CHECK_THROWS_AS(validate_manifest(m, dir.string()), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("fixture dataset: transparent background, both classes, deterministic") {
  FeaturePreset p = preset("table1-5");
  FixtureOptions fo;
  fo.per_class = 2;
  fo.image_size = 24;
  fo.subdivisions = 1;
  fo.seed = 5;
  FixtureDataset a = make_fixture_dataset(p.layout, p.constraints, fo);
  FixtureDataset b = make_fixture_dataset(p.layout, p.constraints, fo);
  REQUIRE(a.images.size() == b.images.size());
  REQUIRE(a.images.size() == 2u * 2u * fo.thetas.size() * fo.phis.size());
  for (size_t i = 0; i < a.images.size(); ++i) {
    CHECK(max_pixel_difference(a.images[i], b.images[i]) == 0.0);
    CHECK(a.images[i].at(0, 0, 3) == 0.0); // corner background transparent
  }
  int normal = 0, cancer = 0;
  for (auto l : a.labels) (l == ClassLabel::Normal ? normal : cancer)++;
  CHECK(normal == cancer);
}

TEST_CASE("metrics CSV has the fixed header and is byte-stable") {
  std::vector<MetricsRow> rows{{0, 0.0, 0.0, 0.0, 12.5}, {1, -0.25, 0.5, 0.25, 11.0}};
  fs::path p1 = fs::temp_directory_path() / "cellsynth_m1.csv";
  fs::path p2 = fs::temp_directory_path() / "cellsynth_m2.csv";
  write_metrics_csv(rows, p1.string());
  write_metrics_csv(rows, p2.string());
  std::string a = read_file(p1), b = read_file(p2);
  CHECK(a == b);
  CHECK(a.rfind("iter,critic_loss,gen_loss,w_estimate,fid_proxy\n", 0) == 0);
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("experiment config JSON round trip") {
  ExperimentConfig cfg;
  cfg.run_id = "t1";
  cfg.preset_name = "table1-5";
  cfg.classes = {ClassLabel::Cancer};
  cfg.seed = 9;
  cfg.iters = 3;
  ExperimentConfig back = ExperimentConfig::from_json(cfg.to_json());
  CHECK(back.run_id == "t1");
  CHECK(back.preset_name == "table1-5");
  REQUIRE(back.classes.size() == 1);
  CHECK(back.classes[0] == ClassLabel::Cancer);
  CHECK(back.seed == 9);
  CHECK(back.iters == 3);
}

TEST_CASE("run_experiment validates config before any work") {
  ExperimentConfig cfg;
  cfg.preset_name = "no-such-preset";
  fs::path dir = fs::temp_directory_path() / "cellsynth_exp_bad";
  fs::remove_all(dir);
  CHECK_THROWS(run_experiment(cfg, dir.string()));
  CHECK(!fs::exists(dir)); // nothing written

  ExperimentConfig cfg2;
  cfg2.classes.clear();
  CHECK_THROWS_AS(run_experiment(cfg2, dir.string()), std::invalid_argument);
  CHECK(!fs::exists(dir));
}
