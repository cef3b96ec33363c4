#pragma once

// Constrained feature parameterization of cells and clusters.
//
// A CellFeatures value is the contract between the generator networks and the
// mesh builder: every field is bounded by a ConstraintSet, and the flat packed
// form is what network tails emit and what black-box gradient estimation
// perturbs. Layout presets reproduce the preset feature budgets
// {5, 32, 1165, 4129}.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cellsynth {

struct FeatureLayout {
  int deformation_count = 0;   // radial deformation coefficients per shell
  bool has_nucleus = false;    // nucleus shell parameterized (and built) at all
  int color_channels = 2;      // packed color scalars, one of {2, 7, 8}
  int tails = 1;               // generator output heads
  int total_features = 0;      // must equal the sum of all group sizes
  std::vector<int> tail_sizes; // contiguous packed spans, one per tail

  // Sum of group sizes implied by the other fields.
  int computed_total() const;
  void validate() const; // throws std::invalid_argument on any broken invariant
};

struct ValueRange {
  double lo = 0.0;
  double hi = 1.0;
};

struct ConstraintSet {
  ValueRange deformation{-0.35, 0.35};
  ValueRange nucleus_deformation{-0.25, 0.25};
  ValueRange surface_distance{0.05, 0.6};
  ValueRange surface_strength{-0.25, 0.25};
  ValueRange nucleus_offset{-0.35, 0.35}; // per component
  ValueRange scale{0.5, 2.0};
  ValueRange color{0.0, 1.0}; // per channel
  ValueRange cluster_position{-2.5, 2.5}; // per component, cluster cell centers
  double smoothness_bound = 0.15; // max |c_i - c_{i+1}| between adjacent coefficients

  void validate() const;
};

struct CellFeatures {
  FeatureLayout layout;
  Eigen::VectorXd deformation;         // outer membrane shell, unitless radial offsets
  Eigen::VectorXd nucleus_deformation; // nucleus shell, same convention
  double surface_distance = 0.3;       // falloff width of the surface displacement
  double surface_strength = 0.0;       // normal displacement amplitude
  Eigen::Vector3d nucleus_offset = Eigen::Vector3d::Zero();
  double scale = 1.0;
  Eigen::Vector4d membrane_color = Eigen::Vector4d(0.92, 0.68, 0.78, 1.0);
  Eigen::Vector4d nucleus_color = Eigen::Vector4d(0.42, 0.28, 0.58, 1.0);
};

struct ClusterFeatures {
  std::vector<CellFeatures> cells;
  std::vector<Eigen::Vector3d> positions;

  int count() const { return static_cast<int>(cells.size()); }
  void validate() const;
};

// Clamps every field of `f` into the bounds of `c` and enforces the adjacent
// smoothness bound on both deformation vectors. Idempotent projection.
CellFeatures clamp_features(const CellFeatures& f, const ConstraintSet& c);

// True when `f` is a fixed point of clamp_features.
bool satisfies_constraints(const CellFeatures& f, const ConstraintSet& c);

// Deterministic per seed; result always satisfies the clamp fixed point.
CellFeatures random_features(const FeatureLayout& layout, const ConstraintSet& c,
                             std::uint64_t seed);

// Flat packed form. Order: membrane deformation, nucleus deformation,
// surface_distance, surface_strength, nucleus offset, scale, colors.
Eigen::VectorXd pack_features(const CellFeatures& f);
CellFeatures unpack_features(const Eigen::VectorXd& v, const FeatureLayout& layout);

// Per-coordinate bounds of the packed vector, in packing order.
void packed_bounds(const FeatureLayout& layout, const ConstraintSet& c,
                   Eigen::VectorXd& lo, Eigen::VectorXd& hi);

// Cluster slot packing: per cell [packed cell features, position xyz].
// Cluster packed length = count * (total_features + 3).
Eigen::VectorXd pack_cluster_features(const ClusterFeatures& g);
ClusterFeatures unpack_cluster_features(const Eigen::VectorXd& v,
                                        const FeatureLayout& layout, int count);
void cluster_packed_bounds(const FeatureLayout& layout, const ConstraintSet& c,
                           int count, Eigen::VectorXd& lo, Eigen::VectorXd& hi);

ClusterFeatures clamp_cluster_features(const ClusterFeatures& g, const ConstraintSet& c);
ClusterFeatures random_cluster_features(const FeatureLayout& layout, const ConstraintSet& c,
                                        int count, std::uint64_t seed);

struct FeaturePreset {
  std::string name;
  FeatureLayout layout;
  ConstraintSet constraints;
};

// Built-in presets: table1-5, table1-32, table1-1165, table1-4129.
FeaturePreset preset(const std::string& name);
std::vector<std::string> preset_names();

std::string preset_to_json(const FeaturePreset& p);
FeaturePreset preset_from_json(const std::string& text);
FeaturePreset load_preset_file(const std::string& path);
void save_preset_file(const FeaturePreset& p, const std::string& path);

} // namespace cellsynth
