#pragma once

// Software rasterizer: orthographic projections and plane cross-sections of a
// scene, viewed about its center of gravity from spherical angles (theta,
// phi). Output images have transparent background (alpha 0) outside geometry
// and are antialiased with a 2x2 box filter.

#include <vector>

#include "cellsynth/image.hpp"
#include "cellsynth/mesh.hpp"

namespace cellsynth {

enum class RenderMode { Projection, CrossSection };

struct ProjectionSpec {
  std::vector<double> thetas; // radians
  std::vector<double> phis;   // radians
  int size = 64;              // square output, pixels
  RenderMode mode = RenderMode::Projection;
  double world_extent = 4.0;  // world units spanned by the image edge

  void validate() const;
};

struct AngleImage {
  double theta = 0.0;
  double phi = 0.0;
  Image image;
};

// View direction for spherical angles: theta polar from +z, phi azimuth.
Eigen::Vector3d view_direction(double theta, double phi);

// Depth-buffered orthographic rasterization along (theta, phi), flat shading
// with per-material colors. Throws on empty scene.
Image project(const Scene& s, double theta, double phi, int size, double world_extent);

// Slice through center_of_gravity(s) with plane normal (theta, phi); material
// regions filled even-odd, nucleus drawn over membrane. Throws on empty scene.
Image cross_section(const Scene& s, double theta, double phi, int size,
                    double world_extent);

// Row-major (theta_i, phi_j) batch; each entry bit-identical to a single call.
std::vector<AngleImage> render_batch(const Scene& s, const ProjectionSpec& spec);

} // namespace cellsynth
