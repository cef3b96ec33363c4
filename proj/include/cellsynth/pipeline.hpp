#pragma once

// Data ingestion (patch extraction, blob segmentation stand-in, transparency
// masking), dataset layout, the bundled synthetic fixture generator, and
// experiment orchestration.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cellsynth/eval.hpp"
#include "cellsynth/features.hpp"
#include "cellsynth/gan.hpp"
#include "cellsynth/image.hpp"
#include "cellsynth/topo.hpp"

namespace cellsynth {

std::string class_label_name(ClassLabel c);
ClassLabel class_label_from_name(const std::string& name);

struct PatchRecord {
  Image image;
  std::string source_id;
  ClassLabel label = ClassLabel::Normal;
  int x = 0; // offsets in the source image
  int y = 0;
};

// Row-major sliding-window crops; partial windows dropped.
std::vector<Image> extract_patches(const Image& image, int size, int stride);

struct SegmentOptions {
  double tau = 0.15;  // blue-dominance threshold B - (R+G)/2 > tau
  int min_area = 50;  // connected-component pixel floor
};

// Hematoxylin-like threshold -> 8-connected components -> per-blob crop with
// background alpha forced to 0. Blank input yields an empty list.
std::vector<PatchRecord> segment_blobs(const Image& patch, ClassLabel label,
                                       const std::string& source_id,
                                       const SegmentOptions& opts = {});

// ---- dataset manifest ----

struct ManifestRecord {
  std::string path; // relative to the manifest directory
  std::string source_id;
  ClassLabel label = ClassLabel::Normal;
  int x = 0, y = 0, width = 0, height = 0;
};

struct DatasetManifest {
  int version = 1;
  std::string feature_preset;
  int total_features = 0;
  int tails = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<ManifestRecord> records;

  std::map<std::string, int> class_counts() const;
};

void write_manifest(const DatasetManifest& m, const std::string& dir);
DatasetManifest read_manifest(const std::string& dir);
// Checks every referenced file exists and counts are consistent.
void validate_manifest(const DatasetManifest& m, const std::string& dir);

// Writes records as data/{class}/{source}/{index}.png + manifest.json.
DatasetManifest export_dataset(const std::vector<PatchRecord>& records,
                               const std::string& dir, const std::string& preset_name,
                               const std::vector<std::uint64_t>& seeds);

// ---- bundled synthetic fixtures ----

struct FixtureOptions {
  int per_class = 16;       // cells per class
  std::uint64_t seed = 7;
  int image_size = 32;
  double world_extent = 4.0;
  RenderMode mode = RenderMode::CrossSection;
  std::vector<double> thetas{0.0, 1.5707963267948966};
  std::vector<double> phis{0.0, 1.5707963267948966};
  int subdivisions = 2;
};

// Known ground-truth features per class: light round cells (normal) and dark
// ellipsoidal cells (cancer).
CellFeatures fixture_cell_features(ClassLabel cls, const FeatureLayout& layout,
                                   const ConstraintSet& c, Rng& rng);

struct FixtureDataset {
  std::vector<Image> images;
  std::vector<ClassLabel> labels;
};

// Renders per_class cells per class over the angle grid.
FixtureDataset make_fixture_dataset(const FeatureLayout& layout, const ConstraintSet& c,
                                    const FixtureOptions& opts);

// Cluster images for the topology transformer (one angle per image, cycled).
std::vector<Image> make_fixture_cluster_images(const TopoConfig& cfg,
                                               const ConstraintSet& c, int count,
                                               std::uint64_t seed);

// ---- metrics CSV ----

extern const char* kMetricsCsvHeader; // iter,critic_loss,gen_loss,w_estimate,fid_proxy

std::string format_double(double v);
void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path);

// ---- experiment orchestration ----

struct ExperimentConfig {
  std::string run_id = "run";
  std::string preset_name = "table1-32";
  std::vector<ClassLabel> classes{ClassLabel::Normal, ClassLabel::Cancer};
  std::uint64_t seed = 1;
  int iters = 60;
  FixtureOptions fixture;
  TrainConfig train;
  bool train_topo = false;
  int topo_images = 10;
  TopoTrainConfig topo_train;
  int sample_meshes = 2;

  static ExperimentConfig from_json(const std::string& text);
  std::string to_json() const;
};

struct ExperimentReport {
  std::string run_dir;
  std::map<std::string, double> final_fid; // per class
  std::map<std::string, std::string> metrics_csv; // per class, relative path
};

ExperimentConfig load_experiment_config(const std::string& path);

// Validates the config and output directory up front (no partial writes on a
// bad config), then trains per class, evaluates, and writes all artifacts
// under out_dir/run_id. Fully reproducible from (config, seed).
ExperimentReport run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

} // namespace cellsynth
