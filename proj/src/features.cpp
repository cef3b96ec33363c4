#include "cellsynth/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "cellsynth/rng.hpp"

namespace cellsynth {

namespace {

using nlohmann::json;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

double clamp_to(double v, const ValueRange& r) {
  return std::min(std::max(v, r.lo), r.hi);
}

// Enforce |c_i - c_{i+1}| <= bound. Pairwise averaging toward the bound for up
// to 32 sweeps, then one forward clamp pass that guarantees feasibility (and
// therefore idempotence). Both steps keep values inside the box hull.
void enforce_smoothness(Eigen::VectorXd& v, double bound) {
  const int n = static_cast<int>(v.size());
  if (n < 2) return;
  for (int sweep = 0; sweep < 32; ++sweep) {
    bool dirty = false;
    for (int i = 0; i + 1 < n; ++i) {
      double gap = v[i] - v[i + 1];
      double excess = std::abs(gap) - bound;
      if (excess > 0.0) {
        double shift = 0.5 * excess * (gap > 0.0 ? 1.0 : -1.0);
        v[i] -= shift;
        v[i + 1] += shift;
        dirty = true;
      }
    }
    if (!dirty) return;
  }
  for (int i = 1; i < n; ++i) {
    v[i] = std::min(std::max(v[i], v[i - 1] - bound), v[i - 1] + bound);
  }
}

bool smoothness_ok(const Eigen::VectorXd& v, double bound) {
  for (int i = 0; i + 1 < v.size(); ++i) {
    if (std::abs(v[i] - v[i + 1]) > bound + 1e-12) return false;
  }
  return true;
}

json range_to_json(const ValueRange& r) { return json{{"lo", r.lo}, {"hi", r.hi}}; }

ValueRange range_from_json(const json& j) {
  return ValueRange{j.at("lo").get<double>(), j.at("hi").get<double>()};
}

} // namespace

int FeatureLayout::computed_total() const {
  int shells = has_nucleus ? 2 : 1;
  int offset = has_nucleus ? 3 : 0;
  return deformation_count * shells + 2 + offset + 1 + color_channels;
}

void FeatureLayout::validate() const {
  require(deformation_count >= 0, "layout: deformation_count must be >= 0");
  require(color_channels == 2 || color_channels == 7 || color_channels == 8,
          "layout: color_channels must be one of {2, 7, 8}");
  require(tails >= 1, "layout: tails must be >= 1");
  require(total_features == computed_total(),
          "layout: total_features does not match the sum of group sizes");
  require(static_cast<int>(tail_sizes.size()) == tails,
          "layout: tail_sizes length must equal tails");
  int sum = std::accumulate(tail_sizes.begin(), tail_sizes.end(), 0);
  require(sum == total_features, "layout: tail_sizes must sum to total_features");
  for (int s : tail_sizes) require(s >= 1, "layout: every tail must emit >= 1 feature");
}

void ConstraintSet::validate() const {
  auto check = [](const ValueRange& r, const char* name) {
    if (!(r.lo <= r.hi)) {
      throw std::invalid_argument(std::string("constraints: lo > hi for ") + name);
    }
  };
  check(deformation, "deformation");
  check(nucleus_deformation, "nucleus_deformation");
  check(surface_distance, "surface_distance");
  check(surface_strength, "surface_strength");
  check(nucleus_offset, "nucleus_offset");
  check(scale, "scale");
  check(color, "color");
  check(cluster_position, "cluster_position");
  require(smoothness_bound > 0.0, "constraints: smoothness_bound must be > 0");
}

void ClusterFeatures::validate() const {
  require(!cells.empty(), "cluster: must contain at least one cell");
  require(cells.size() == positions.size(), "cluster: positions.len != cells.len");
}

CellFeatures clamp_features(const CellFeatures& f, const ConstraintSet& c) {
  const FeatureLayout& L = f.layout;
  L.validate();
  c.validate();
  require(f.deformation.size() == L.deformation_count,
          "clamp_features: deformation length does not match layout");
  require(f.nucleus_deformation.size() == (L.has_nucleus ? L.deformation_count : 0),
          "clamp_features: nucleus_deformation length does not match layout");

  CellFeatures out = f;
  for (int i = 0; i < out.deformation.size(); ++i) {
    out.deformation[i] = clamp_to(out.deformation[i], c.deformation);
  }
  enforce_smoothness(out.deformation, c.smoothness_bound);
  for (int i = 0; i < out.nucleus_deformation.size(); ++i) {
    out.nucleus_deformation[i] = clamp_to(out.nucleus_deformation[i], c.nucleus_deformation);
  }
  enforce_smoothness(out.nucleus_deformation, c.smoothness_bound);
  out.surface_distance = clamp_to(out.surface_distance, c.surface_distance);
  out.surface_strength = clamp_to(out.surface_strength, c.surface_strength);
  for (int i = 0; i < 3; ++i) {
    out.nucleus_offset[i] = clamp_to(out.nucleus_offset[i], c.nucleus_offset);
  }
  out.scale = clamp_to(out.scale, c.scale);
  for (int i = 0; i < 4; ++i) {
    out.membrane_color[i] = clamp_to(out.membrane_color[i], c.color);
    out.nucleus_color[i] = clamp_to(out.nucleus_color[i], c.color);
  }
  return out;
}

bool satisfies_constraints(const CellFeatures& f, const ConstraintSet& c) {
  auto in = [](double v, const ValueRange& r) { return v >= r.lo - 1e-12 && v <= r.hi + 1e-12; };
  for (int i = 0; i < f.deformation.size(); ++i) {
    if (!in(f.deformation[i], c.deformation)) return false;
  }
  if (!smoothness_ok(f.deformation, c.smoothness_bound)) return false;
  for (int i = 0; i < f.nucleus_deformation.size(); ++i) {
    if (!in(f.nucleus_deformation[i], c.nucleus_deformation)) return false;
  }
  if (!smoothness_ok(f.nucleus_deformation, c.smoothness_bound)) return false;
  if (!in(f.surface_distance, c.surface_distance)) return false;
  if (!in(f.surface_strength, c.surface_strength)) return false;
  for (int i = 0; i < 3; ++i) {
    if (!in(f.nucleus_offset[i], c.nucleus_offset)) return false;
  }
  if (!in(f.scale, c.scale)) return false;
  for (int i = 0; i < 4; ++i) {
    if (!in(f.membrane_color[i], c.color)) return false;
    if (!in(f.nucleus_color[i], c.color)) return false;
  }
  return true;
}

CellFeatures random_features(const FeatureLayout& layout, const ConstraintSet& c,
                             std::uint64_t seed) {
  layout.validate();
  c.validate();
  Rng rng(seed);
  Eigen::VectorXd lo, hi;
  packed_bounds(layout, c, lo, hi);
  Eigen::VectorXd v(layout.total_features);
  for (int i = 0; i < v.size(); ++i) v[i] = rng.uniform(lo[i], hi[i]);
  return clamp_features(unpack_features(v, layout), c);
}

Eigen::VectorXd pack_features(const CellFeatures& f) {
  const FeatureLayout& L = f.layout;
  L.validate();
  require(f.deformation.size() == L.deformation_count,
          "pack_features: deformation length does not match layout");
  require(f.nucleus_deformation.size() == (L.has_nucleus ? L.deformation_count : 0),
          "pack_features: nucleus_deformation length does not match layout");

  Eigen::VectorXd v(L.total_features);
  int k = 0;
  for (int i = 0; i < f.deformation.size(); ++i) v[k++] = f.deformation[i];
  for (int i = 0; i < f.nucleus_deformation.size(); ++i) v[k++] = f.nucleus_deformation[i];
  v[k++] = f.surface_distance;
  v[k++] = f.surface_strength;
  if (L.has_nucleus) {
    for (int i = 0; i < 3; ++i) v[k++] = f.nucleus_offset[i];
  }
  v[k++] = f.scale;
  switch (L.color_channels) {
    case 2:
      v[k++] = f.membrane_color[0];
      v[k++] = f.nucleus_color[0];
      break;
    case 7:
      for (int i = 0; i < 4; ++i) v[k++] = f.membrane_color[i];
      for (int i = 0; i < 3; ++i) v[k++] = f.nucleus_color[i];
      break;
    case 8:
      for (int i = 0; i < 4; ++i) v[k++] = f.membrane_color[i];
      for (int i = 0; i < 4; ++i) v[k++] = f.nucleus_color[i];
      break;
    default:
      throw std::invalid_argument("pack_features: unsupported color_channels");
  }
  return v;
}

CellFeatures unpack_features(const Eigen::VectorXd& v, const FeatureLayout& layout) {
  layout.validate();
  require(v.size() == layout.total_features,
          "unpack_features: vector length does not match layout.total_features");

  CellFeatures f;
  f.layout = layout;
  f.deformation.resize(layout.deformation_count);
  f.nucleus_deformation.resize(layout.has_nucleus ? layout.deformation_count : 0);
  int k = 0;
  for (int i = 0; i < f.deformation.size(); ++i) f.deformation[i] = v[k++];
  for (int i = 0; i < f.nucleus_deformation.size(); ++i) f.nucleus_deformation[i] = v[k++];
  f.surface_distance = v[k++];
  f.surface_strength = v[k++];
  if (layout.has_nucleus) {
    for (int i = 0; i < 3; ++i) f.nucleus_offset[i] = v[k++];
  } else {
    f.nucleus_offset.setZero();
  }
  f.scale = v[k++];
  switch (layout.color_channels) {
    case 2: {
      double m = v[k++];
      double n = v[k++];
      f.membrane_color = Eigen::Vector4d(m, m, m, 1.0);
      f.nucleus_color = Eigen::Vector4d(n, n, n, 1.0);
      break;
    }
    case 7:
      for (int i = 0; i < 4; ++i) f.membrane_color[i] = v[k++];
      for (int i = 0; i < 3; ++i) f.nucleus_color[i] = v[k++];
      f.nucleus_color[3] = 1.0;
      break;
    case 8:
      for (int i = 0; i < 4; ++i) f.membrane_color[i] = v[k++];
      for (int i = 0; i < 4; ++i) f.nucleus_color[i] = v[k++];
      break;
    default:
      throw std::invalid_argument("unpack_features: unsupported color_channels");
  }
  return f;
}

void packed_bounds(const FeatureLayout& layout, const ConstraintSet& c,
                   Eigen::VectorXd& lo, Eigen::VectorXd& hi) {
  layout.validate();
  lo.resize(layout.total_features);
  hi.resize(layout.total_features);
  int k = 0;
  auto put = [&](const ValueRange& r, int count) {
    for (int i = 0; i < count; ++i) {
      lo[k] = r.lo;
      hi[k] = r.hi;
      ++k;
    }
  };
  put(c.deformation, layout.deformation_count);
  if (layout.has_nucleus) put(c.nucleus_deformation, layout.deformation_count);
  put(c.surface_distance, 1);
  put(c.surface_strength, 1);
  if (layout.has_nucleus) put(c.nucleus_offset, 3);
  put(c.scale, 1);
  put(c.color, layout.color_channels);
}

Eigen::VectorXd pack_cluster_features(const ClusterFeatures& g) {
  g.validate();
  const int per = g.cells[0].layout.total_features + 3;
  Eigen::VectorXd v(per * g.count());
  for (int i = 0; i < g.count(); ++i) {
    v.segment(i * per, per - 3) = pack_features(g.cells[i]);
    v.segment(i * per + per - 3, 3) = g.positions[i];
  }
  return v;
}

ClusterFeatures unpack_cluster_features(const Eigen::VectorXd& v,
                                        const FeatureLayout& layout, int count) {
  require(count >= 1, "unpack_cluster_features: count must be >= 1");
  const int per = layout.total_features + 3;
  require(v.size() == per * count,
          "unpack_cluster_features: vector length does not match count * (features + 3)");
  ClusterFeatures g;
  for (int i = 0; i < count; ++i) {
    g.cells.push_back(unpack_features(v.segment(i * per, per - 3), layout));
    g.positions.emplace_back(v.segment(i * per + per - 3, 3));
  }
  return g;
}

void cluster_packed_bounds(const FeatureLayout& layout, const ConstraintSet& c,
                           int count, Eigen::VectorXd& lo, Eigen::VectorXd& hi) {
  Eigen::VectorXd clo, chi;
  packed_bounds(layout, c, clo, chi);
  const int per = layout.total_features + 3;
  lo.resize(per * count);
  hi.resize(per * count);
  for (int i = 0; i < count; ++i) {
    lo.segment(i * per, per - 3) = clo;
    hi.segment(i * per, per - 3) = chi;
    lo.segment(i * per + per - 3, 3).setConstant(c.cluster_position.lo);
    hi.segment(i * per + per - 3, 3).setConstant(c.cluster_position.hi);
  }
}

ClusterFeatures clamp_cluster_features(const ClusterFeatures& g, const ConstraintSet& c) {
  g.validate();
  ClusterFeatures out;
  for (int i = 0; i < g.count(); ++i) {
    out.cells.push_back(clamp_features(g.cells[i], c));
    Eigen::Vector3d p = g.positions[i];
    for (int k = 0; k < 3; ++k) p[k] = clamp_to(p[k], c.cluster_position);
    out.positions.push_back(p);
  }
  return out;
}

ClusterFeatures random_cluster_features(const FeatureLayout& layout, const ConstraintSet& c,
                                        int count, std::uint64_t seed) {
  require(count >= 1, "random_cluster_features: count must be >= 1");
  Rng rng(seed);
  ClusterFeatures g;
  for (int i = 0; i < count; ++i) {
    g.cells.push_back(random_features(layout, c, rng.next()));
    Eigen::Vector3d p;
    for (int k = 0; k < 3; ++k) p[k] = rng.uniform(c.cluster_position.lo, c.cluster_position.hi);
    g.positions.push_back(p);
  }
  return g;
}

FeaturePreset preset(const std::string& name) {
  FeaturePreset p;
  p.name = name;
  if (name == "table1-5") {
    p.layout = FeatureLayout{0, false, 2, 4, 5, {1, 1, 1, 2}};
  } else if (name == "table1-32") {
    p.layout = FeatureLayout{12, true, 2, 4, 32, {12, 12, 5, 3}};
  } else if (name == "table1-1165") {
    p.layout = FeatureLayout{576, true, 7, 4, 1165, {576, 576, 6, 7}};
  } else if (name == "table1-4129") {
    p.layout = FeatureLayout{2058, true, 7, 5, 4129, {1029, 1029, 2058, 6, 7}};
  } else {
    throw std::invalid_argument("unknown preset: " + name);
  }
  p.layout.validate();
  p.constraints.validate();
  return p;
}

std::vector<std::string> preset_names() {
  return {"table1-5", "table1-32", "table1-1165", "table1-4129"};
}

std::string preset_to_json(const FeaturePreset& p) {
  json j;
  j["name"] = p.name;
  j["layout"] = json{{"deformation_count", p.layout.deformation_count},
                     {"has_nucleus", p.layout.has_nucleus},
                     {"color_channels", p.layout.color_channels},
                     {"tails", p.layout.tails},
                     {"total_features", p.layout.total_features},
                     {"tail_sizes", p.layout.tail_sizes}};
  const ConstraintSet& c = p.constraints;
  j["constraints"] = json{{"deformation", range_to_json(c.deformation)},
                          {"nucleus_deformation", range_to_json(c.nucleus_deformation)},
                          {"surface_distance", range_to_json(c.surface_distance)},
                          {"surface_strength", range_to_json(c.surface_strength)},
                          {"nucleus_offset", range_to_json(c.nucleus_offset)},
                          {"scale", range_to_json(c.scale)},
                          {"color", range_to_json(c.color)},
                          {"cluster_position", range_to_json(c.cluster_position)},
                          {"smoothness_bound", c.smoothness_bound}};
  return j.dump(2) + "\n";
}

FeaturePreset preset_from_json(const std::string& text) {
  json j = json::parse(text);
  FeaturePreset p;
  p.name = j.at("name").get<std::string>();
  const json& l = j.at("layout");
  p.layout.deformation_count = l.at("deformation_count").get<int>();
  p.layout.has_nucleus = l.at("has_nucleus").get<bool>();
  p.layout.color_channels = l.at("color_channels").get<int>();
  p.layout.tails = l.at("tails").get<int>();
  p.layout.total_features = l.at("total_features").get<int>();
  p.layout.tail_sizes = l.at("tail_sizes").get<std::vector<int>>();
  const json& c = j.at("constraints");
  p.constraints.deformation = range_from_json(c.at("deformation"));
  p.constraints.nucleus_deformation = range_from_json(c.at("nucleus_deformation"));
  p.constraints.surface_distance = range_from_json(c.at("surface_distance"));
  p.constraints.surface_strength = range_from_json(c.at("surface_strength"));
  p.constraints.nucleus_offset = range_from_json(c.at("nucleus_offset"));
  p.constraints.scale = range_from_json(c.at("scale"));
  p.constraints.color = range_from_json(c.at("color"));
  p.constraints.cluster_position = range_from_json(c.at("cluster_position"));
  p.constraints.smoothness_bound = c.at("smoothness_bound").get<double>();
  p.layout.validate();
  p.constraints.validate();
  return p;
}

FeaturePreset load_preset_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open preset file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return preset_from_json(ss.str());
}

void save_preset_file(const FeaturePreset& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write preset file: " + path);
  out << preset_to_json(p);
}

} // namespace cellsynth
