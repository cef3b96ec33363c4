#pragma once

// Triangle-mesh construction for cells and clusters. All builders are pure
// functions of their inputs; every produced mesh is watertight and
// consistently outward-oriented.

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "cellsynth/features.hpp"

namespace cellsynth {

enum class Material { Membrane = 0, Nucleus = 1 };

struct Mesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Material> materials; // one label per triangle
  // Flat color per material, RGBA. Index by static_cast<int>(Material).
  std::array<Eigen::Vector4d, 2> material_colors = {
      Eigen::Vector4d(0.9, 0.9, 0.9, 1.0), Eigen::Vector4d(0.4, 0.4, 0.4, 1.0)};

  int vertex_count() const { return static_cast<int>(vertices.size()); }
  int triangle_count() const { return static_cast<int>(triangles.size()); }
};

struct PlacedMesh {
  Mesh mesh;
  Eigen::Isometry3d pose = Eigen::Isometry3d::Identity();
};

struct BoundingSphere {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double radius = 0.0;
};

struct Scene {
  std::vector<PlacedMesh> meshes;

  bool empty() const { return meshes.empty(); }
};

BoundingSphere bounding_sphere(const Scene& s);

struct BuildOptions {
  int subdivisions = 3;          // icosphere subdivision of both shells
  double nucleus_radius = 0.55;  // nucleus shell base radius before deformation
  int smoothing_passes = 3;
  double smoothing_lambda = 0.5;
};

// Watertight unit sphere approximation with 20*4^s triangles. 0 <= s <= 6.
Mesh icosphere(int subdivisions);

// Uniform-weight Laplacian smoothing, v += lambda * (mean(neighbors) - v).
// Shrinks the mesh; callers that must preserve volume rescale afterwards.
void laplacian_smooth(Mesh& m, int passes, double lambda);

// Deterministic unit directions, approximately evenly distributed.
std::vector<Eigen::Vector3d> fibonacci_directions(int n);

// Builds one cell from clamped features: deformed membrane shell, optional
// nucleus shell shrunk to fit strictly inside, everything scaled by f.scale.
// Throws std::invalid_argument when f violates c.
Mesh build_cell(const CellFeatures& f, const ConstraintSet& c,
                const BuildOptions& opts = {});

// One mesh per cell; positions pushed apart until every pair respects the
// overlap floor 0.6 * (scale_i + scale_j). Degenerate inputs are repaired,
// never rejected.
Scene assemble_cluster(const ClusterFeatures& g, const ConstraintSet& c,
                       const BuildOptions& opts = {});

// Volume-weighted centroid over all placed meshes. Throws on empty scene.
Eigen::Vector3d center_of_gravity(const Scene& s);

// Signed-tetrahedron volume sum. Throws on non-watertight input.
double mesh_volume(const Mesh& m);

// Volume centroid of a single closed mesh.
Eigen::Vector3d mesh_centroid(const Mesh& m);

// Every edge shared by exactly two triangles with opposite winding.
bool is_watertight(const Mesh& m);

// Generalized winding number test; robust for watertight meshes.
bool point_inside_mesh(const Mesh& m, const Eigen::Vector3d& p);

// Wavefront OBJ, one object per mesh, material groups `membrane`/`nucleus`,
// 6-decimal vertex coordinates. Throws on empty scene or I/O failure.
void export_obj(const Scene& s, const std::string& path);
Scene import_obj(const std::string& path);

} // namespace cellsynth
