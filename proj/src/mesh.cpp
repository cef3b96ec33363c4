#include "cellsynth/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cellsynth {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// Icosahedron with vertices on the unit sphere.
Mesh base_icosahedron() {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> v = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<std::array<int, 3>> f = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  Mesh m;
  m.vertices = std::move(v);
  m.triangles = std::move(f);
  m.materials.assign(m.triangles.size(), Material::Membrane);
  return m;
}

std::vector<std::vector<int>> vertex_neighbors(const Mesh& m) {
  std::vector<std::vector<int>> nb(m.vertices.size());
  auto link = [&](int a, int b) {
    auto& v = nb[a];
    if (std::find(v.begin(), v.end(), b) == v.end()) v.push_back(b);
  };
  for (const auto& t : m.triangles) {
    link(t[0], t[1]);
    link(t[1], t[0]);
    link(t[1], t[2]);
    link(t[2], t[1]);
    link(t[2], t[0]);
    link(t[0], t[2]);
  }
  return nb;
}

std::vector<Eigen::Vector3d> vertex_normals(const Mesh& m) {
  std::vector<Eigen::Vector3d> n(m.vertices.size(), Eigen::Vector3d::Zero());
  for (const auto& t : m.triangles) {
    Eigen::Vector3d fn = (m.vertices[t[1]] - m.vertices[t[0]])
                             .cross(m.vertices[t[2]] - m.vertices[t[0]]);
    n[t[0]] += fn;
    n[t[1]] += fn;
    n[t[2]] += fn;
  }
  for (auto& v : n) {
    double len = v.norm();
    if (len > 1e-300) v /= len;
  }
  return n;
}

// Inverse-distance-weighted interpolation of per-anchor coefficients at unit
// direction `dir` (squared chordal distance).
double idw_interpolate(const std::vector<Eigen::Vector3d>& anchors,
                       const Eigen::VectorXd& coeffs, const Eigen::Vector3d& dir) {
  double wsum = 0.0, vsum = 0.0;
  for (size_t j = 0; j < anchors.size(); ++j) {
    double d2 = (dir - anchors[j]).squaredNorm();
    double w = 1.0 / (d2 + 1e-6);
    wsum += w;
    vsum += w * coeffs[static_cast<int>(j)];
  }
  return vsum / wsum;
}

double nearest_anchor_dist(const std::vector<Eigen::Vector3d>& anchors,
                           const Eigen::Vector3d& dir) {
  double best = std::numeric_limits<double>::max();
  for (const auto& a : anchors) best = std::min(best, (dir - a).norm());
  return best;
}

// Radially deformed, surface-displaced, smoothed shell of base radius
// `base_radius`. Volume is renormalized after smoothing so the smoothing
// passes do not shrink the shell.
Mesh build_shell(const Eigen::VectorXd& deformation, double surface_distance,
                 double surface_strength, double base_radius, Material mat,
                 const BuildOptions& opts) {
  Mesh shell = icosphere(opts.subdivisions);
  std::vector<Eigen::Vector3d> anchors;
  if (deformation.size() > 0) {
    anchors = fibonacci_directions(static_cast<int>(deformation.size()));
  } else {
    anchors.push_back(Eigen::Vector3d(0, 0, 1));
  }

  if (deformation.size() > 0) {
    for (auto& v : shell.vertices) {
      double r = 1.0 + idw_interpolate(anchors, deformation, v);
      v *= std::max(r, 0.05);
    }
  }

  if (surface_strength != 0.0) {
    auto normals = vertex_normals(shell);
    double inv_d2 = 1.0 / (surface_distance * surface_distance + 1e-12);
    for (size_t i = 0; i < shell.vertices.size(); ++i) {
      Eigen::Vector3d dir = shell.vertices[i].normalized();
      double d = nearest_anchor_dist(anchors, dir);
      shell.vertices[i] += normals[i] * (surface_strength * std::exp(-d * d * inv_d2));
    }
  }

  double v_before = mesh_volume(shell);
  laplacian_smooth(shell, opts.smoothing_passes, opts.smoothing_lambda);
  double v_after = mesh_volume(shell);
  if (v_after > 1e-12) {
    double s = std::cbrt(v_before / v_after);
    for (auto& v : shell.vertices) v *= s;
  }

  for (auto& v : shell.vertices) v *= base_radius;
  shell.materials.assign(shell.triangles.size(), mat);
  return shell;
}

void append_mesh(Mesh& dst, const Mesh& src) {
  int off = dst.vertex_count();
  dst.vertices.insert(dst.vertices.end(), src.vertices.begin(), src.vertices.end());
  for (size_t i = 0; i < src.triangles.size(); ++i) {
    const auto& t = src.triangles[i];
    dst.triangles.push_back({t[0] + off, t[1] + off, t[2] + off});
    dst.materials.push_back(src.materials[i]);
  }
}

double solid_angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                   const Eigen::Vector3d& c) {
  double la = a.norm(), lb = b.norm(), lc = c.norm();
  double num = a.dot(b.cross(c));
  double den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
  return 2.0 * std::atan2(num, den);
}

} // namespace

Mesh icosphere(int subdivisions) {
  require(subdivisions >= 0 && subdivisions <= 6,
          "icosphere: subdivisions must be in [0, 6]");
  Mesh m = base_icosahedron();
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Eigen::Vector3d p = (m.vertices[a] + m.vertices[b]).normalized();
      int idx = m.vertex_count();
      m.vertices.push_back(p);
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(m.triangles.size() * 4);
    for (const auto& t : m.triangles) {
      int ab = mid(t[0], t[1]);
      int bc = mid(t[1], t[2]);
      int ca = mid(t[2], t[0]);
      next.push_back({t[0], ab, ca});
      next.push_back({t[1], bc, ab});
      next.push_back({t[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    m.triangles = std::move(next);
  }
  m.materials.assign(m.triangles.size(), Material::Membrane);
  return m;
}

void laplacian_smooth(Mesh& m, int passes, double lambda) {
  if (passes <= 0 || m.vertices.empty()) return;
  auto nb = vertex_neighbors(m);
  std::vector<Eigen::Vector3d> next(m.vertices.size());
  for (int p = 0; p < passes; ++p) {
    for (size_t i = 0; i < m.vertices.size(); ++i) {
      if (nb[i].empty()) {
        next[i] = m.vertices[i];
        continue;
      }
      Eigen::Vector3d mean = Eigen::Vector3d::Zero();
      for (int j : nb[i]) mean += m.vertices[j];
      mean /= static_cast<double>(nb[i].size());
      next[i] = m.vertices[i] + lambda * (mean - m.vertices[i]);
    }
    m.vertices.swap(next);
  }
}

std::vector<Eigen::Vector3d> fibonacci_directions(int n) {
  std::vector<Eigen::Vector3d> dirs;
  dirs.reserve(n);
  const double ga = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    double z = (n == 1) ? 0.0 : 1.0 - 2.0 * (i + 0.5) / n;
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    double a = ga * i;
    dirs.emplace_back(r * std::cos(a), r * std::sin(a), z);
  }
  return dirs;
}

Mesh build_cell(const CellFeatures& f, const ConstraintSet& c, const BuildOptions& opts) {
  if (!satisfies_constraints(f, c)) {
    throw std::invalid_argument("build_cell: features violate constraints; clamp first");
  }

  Mesh membrane = build_shell(f.deformation, f.surface_distance, f.surface_strength,
                              1.0, Material::Membrane, opts);

  Mesh cell = membrane;
  if (f.layout.has_nucleus) {
    Mesh nucleus = build_shell(f.nucleus_deformation, f.surface_distance, 0.0,
                               opts.nucleus_radius, Material::Nucleus, opts);
    Eigen::Vector3d offset = f.nucleus_offset;

    // Keep the nucleus center inside the membrane, then shrink vertices to fit.
    for (int k = 0; k < 24 && !point_inside_mesh(membrane, offset); ++k) offset *= 0.5;
    for (auto& v : nucleus.vertices) v += offset;

    double min_membrane_r = std::numeric_limits<double>::max();
    for (const auto& v : membrane.vertices) min_membrane_r = std::min(min_membrane_r, v.norm());
    double inner_bound = 0.98 * min_membrane_r;

    auto fits = [&]() {
      for (const auto& v : nucleus.vertices) {
        if (v.norm() < inner_bound) continue; // strictly inside for sure
        if (!point_inside_mesh(membrane, v)) return false;
      }
      return true;
    };
    for (int k = 0; k < 40 && !fits(); ++k) {
      for (auto& v : nucleus.vertices) v = offset + 0.92 * (v - offset);
    }
    append_mesh(cell, nucleus);
  }

  for (auto& v : cell.vertices) v *= f.scale;
  cell.material_colors[static_cast<int>(Material::Membrane)] = f.membrane_color;
  cell.material_colors[static_cast<int>(Material::Nucleus)] = f.nucleus_color;
  return cell;
}

Scene assemble_cluster(const ClusterFeatures& g, const ConstraintSet& c,
                       const BuildOptions& opts) {
  ClusterFeatures cl = clamp_cluster_features(g, c);
  const int n = cl.count();

  std::vector<Eigen::Vector3d> pos = cl.positions;
  std::vector<double> scales(n);
  for (int i = 0; i < n; ++i) scales[i] = cl.cells[i].scale;

  // Iterative pairwise separation to the overlap floor 0.6 * (s_i + s_j).
  for (int sweep = 0; sweep < 64; ++sweep) {
    bool dirty = false;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        double floor_ij = 0.6 * (scales[i] + scales[j]);
        Eigen::Vector3d d = pos[j] - pos[i];
        double dist = d.norm();
        if (dist >= floor_ij) continue;
        Eigen::Vector3d dir;
        if (dist < 1e-9) {
          dir = fibonacci_directions(n * n + 3)[static_cast<size_t>(i * n + j)];
        } else {
          dir = d / dist;
        }
        double push = 0.5 * (floor_ij - dist) + 1e-12;
        pos[i] -= dir * push;
        pos[j] += dir * push;
        dirty = true;
      }
    }
    if (!dirty) break;
  }

  Scene s;
  for (int i = 0; i < n; ++i) {
    PlacedMesh pm;
    pm.mesh = build_cell(cl.cells[i], c, opts);
    pm.pose = Eigen::Isometry3d::Identity();
    pm.pose.translate(pos[i]);
    s.meshes.push_back(std::move(pm));
  }
  return s;
}

BoundingSphere bounding_sphere(const Scene& s) {
  BoundingSphere b;
  if (s.empty()) return b;
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  long count = 0;
  for (const auto& pm : s.meshes) {
    for (const auto& v : pm.mesh.vertices) {
      sum += pm.pose * v;
      ++count;
    }
  }
  b.center = sum / static_cast<double>(count);
  for (const auto& pm : s.meshes) {
    for (const auto& v : pm.mesh.vertices) {
      b.radius = std::max(b.radius, (pm.pose * v - b.center).norm());
    }
  }
  return b;
}

Eigen::Vector3d center_of_gravity(const Scene& s) {
  require(!s.empty(), "center_of_gravity: empty scene");
  double vtotal = 0.0;
  Eigen::Vector3d weighted = Eigen::Vector3d::Zero();
  for (const auto& pm : s.meshes) {
    double v = mesh_volume(pm.mesh);
    Eigen::Vector3d cen = pm.pose * mesh_centroid(pm.mesh);
    vtotal += v;
    weighted += v * cen;
  }
  if (vtotal < 1e-12) {
    // Degenerate zero-volume scene: fall back to the vertex average.
    return bounding_sphere(s).center;
  }
  return weighted / vtotal;
}

double mesh_volume(const Mesh& m) {
  if (!is_watertight(m)) throw std::invalid_argument("mesh_volume: mesh is not watertight");
  double six_v = 0.0;
  for (const auto& t : m.triangles) {
    six_v += m.vertices[t[0]].dot(m.vertices[t[1]].cross(m.vertices[t[2]]));
  }
  return six_v / 6.0;
}

Eigen::Vector3d mesh_centroid(const Mesh& m) {
  double six_v = 0.0;
  Eigen::Vector3d acc = Eigen::Vector3d::Zero();
  for (const auto& t : m.triangles) {
    const Eigen::Vector3d& a = m.vertices[t[0]];
    const Eigen::Vector3d& b = m.vertices[t[1]];
    const Eigen::Vector3d& c = m.vertices[t[2]];
    double v = a.dot(b.cross(c));
    six_v += v;
    acc += v * (a + b + c) / 4.0;
  }
  if (std::abs(six_v) < 1e-300) return Eigen::Vector3d::Zero();
  return acc / six_v;
}

bool is_watertight(const Mesh& m) {
  if (m.triangles.empty()) return false;
  std::map<std::pair<int, int>, int> directed;
  for (const auto& t : m.triangles) {
    if (t[0] == t[1] || t[1] == t[2] || t[2] == t[0]) return false;
    for (int e = 0; e < 3; ++e) {
      int a = t[e], b = t[(e + 1) % 3];
      if (++directed[{a, b}] > 1) return false; // duplicate directed edge
    }
  }
  // Each directed edge must be matched by its reverse exactly once.
  for (const auto& [edge, count] : directed) {
    auto it = directed.find({edge.second, edge.first});
    if (it == directed.end() || it->second != count) return false;
  }
  for (const auto& v : m.vertices) {
    if (!v.allFinite()) return false;
  }
  return true;
}

bool point_inside_mesh(const Mesh& m, const Eigen::Vector3d& p) {
  double omega = 0.0;
  for (const auto& t : m.triangles) {
    omega += solid_angle(m.vertices[t[0]] - p, m.vertices[t[1]] - p, m.vertices[t[2]] - p);
  }
  return omega > 2.0 * M_PI; // full enclosure gives 4*pi
}

void export_obj(const Scene& s, const std::string& path) {
  require(!s.empty(), "export_obj: empty scene");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("export_obj: cannot open " + path);
  out << "# cellsynth scene\n";
  int voffset = 1;
  char buf[128];
  for (size_t i = 0; i < s.meshes.size(); ++i) {
    const auto& pm = s.meshes[i];
    out << "o cell_" << i << "\n";
    for (const auto& v : pm.mesh.vertices) {
      Eigen::Vector3d w = pm.pose * v;
      std::snprintf(buf, sizeof(buf), "v %.6f %.6f %.6f\n", w.x(), w.y(), w.z());
      out << buf;
    }
    Material cur = Material::Membrane;
    bool first = true;
    for (size_t f = 0; f < pm.mesh.triangles.size(); ++f) {
      if (first || pm.mesh.materials[f] != cur) {
        cur = pm.mesh.materials[f];
        first = false;
        out << "usemtl " << (cur == Material::Membrane ? "membrane" : "nucleus") << "\n";
      }
      const auto& t = pm.mesh.triangles[f];
      out << "f " << (t[0] + voffset) << " " << (t[1] + voffset) << " "
          << (t[2] + voffset) << "\n";
    }
    voffset += pm.mesh.vertex_count();
  }
  if (!out) throw std::runtime_error("export_obj: write failure on " + path);
}

Scene import_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("import_obj: cannot open " + path);

  // Expects per-object vertex blocks (each `o` section lists its vertices
  // before its faces), which is what export_obj and common exporters write.
  Scene s;
  std::vector<Eigen::Vector3d> all_vertices;
  Mesh current;
  size_t base = 0; // first global vertex index of the current object
  Material cur_mat = Material::Membrane;
  bool has_object = false;

  auto flush = [&]() {
    current.vertices.assign(all_vertices.begin() + static_cast<long>(base),
                            all_vertices.end());
    if (!current.triangles.empty()) {
      PlacedMesh pm;
      pm.mesh = current;
      s.meshes.push_back(std::move(pm));
    }
    current = Mesh{};
    base = all_vertices.size();
  };

  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      double x, y, z;
      ss >> x >> y >> z;
      all_vertices.emplace_back(x, y, z);
    } else if (tag == "o") {
      if (has_object) flush();
      has_object = true;
      cur_mat = Material::Membrane;
    } else if (tag == "usemtl") {
      std::string name;
      ss >> name;
      cur_mat = (name == "nucleus") ? Material::Nucleus : Material::Membrane;
    } else if (tag == "f") {
      std::array<int, 3> tri{};
      for (int k = 0; k < 3; ++k) {
        std::string tok;
        ss >> tok;
        int gi = std::stoi(tok.substr(0, tok.find('/'))) - 1;
        if (gi < 0 || gi >= static_cast<int>(all_vertices.size())) {
          throw std::runtime_error("import_obj: face references missing vertex");
        }
        if (gi < static_cast<int>(base)) {
          throw std::runtime_error("import_obj: face references a previous object's vertex");
        }
        tri[k] = gi - static_cast<int>(base);
      }
      current.triangles.push_back(tri);
      current.materials.push_back(cur_mat);
    }
  }
  flush();
  if (s.empty()) throw std::runtime_error("import_obj: no meshes in " + path);
  return s;
}

} // namespace cellsynth
