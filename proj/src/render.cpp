#include "cellsynth/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cellsynth {

namespace {

constexpr int kSupersample = 2; // 2x2 box filter

struct ViewBasis {
  Eigen::Vector3d dir;   // view / plane normal direction
  Eigen::Vector3d right; // image +x
  Eigen::Vector3d up;    // image +y
};

// Basis from the spherical parameterization itself; well defined for all
// angles including the poles, and rotates with phi (equivariance tests rely
// on that).
ViewBasis make_basis(double theta, double phi) {
  ViewBasis b;
  b.dir = Eigen::Vector3d(std::sin(theta) * std::cos(phi),
                          std::sin(theta) * std::sin(phi), std::cos(theta));
  b.right = Eigen::Vector3d(-std::sin(phi), std::cos(phi), 0.0);
  b.up = Eigen::Vector3d(std::cos(theta) * std::cos(phi),
                         std::cos(theta) * std::sin(phi), -std::sin(theta));
  return b;
}

struct SampleBuffer {
  int ss; // supersampled edge length
  std::vector<double> depth;
  std::vector<Eigen::Vector4d> color; // rgb + covered flag in w
  std::vector<bool> covered;

  explicit SampleBuffer(int ss_)
      : ss(ss_),
        depth(static_cast<size_t>(ss_) * ss_, std::numeric_limits<double>::max()),
        color(static_cast<size_t>(ss_) * ss_, Eigen::Vector4d::Zero()),
        covered(static_cast<size_t>(ss_) * ss_, false) {}
};

Image downsample(const SampleBuffer& buf, int size) {
  Image img(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      int n = 0;
      Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
      for (int sy = 0; sy < kSupersample; ++sy) {
        for (int sx = 0; sx < kSupersample; ++sx) {
          size_t idx = static_cast<size_t>(y * kSupersample + sy) * buf.ss +
                       (x * kSupersample + sx);
          if (buf.covered[idx]) {
            ++n;
            rgb += buf.color[idx].head<3>();
          }
        }
      }
      if (n > 0) {
        rgb /= n;
        img.set_pixel(x, y, Eigen::Vector4d(
                                rgb[0], rgb[1], rgb[2],
                                static_cast<double>(n) / (kSupersample * kSupersample)));
      }
    }
  }
  return img;
}

} // namespace

void ProjectionSpec::validate() const {
  if (thetas.empty() || phis.empty()) {
    throw std::invalid_argument("ProjectionSpec: angle lists must be nonempty");
  }
  if (size < 16) throw std::invalid_argument("ProjectionSpec: size must be >= 16");
  if (!(world_extent > 0.0)) {
    throw std::invalid_argument("ProjectionSpec: world_extent must be > 0");
  }
}

Eigen::Vector3d view_direction(double theta, double phi) {
  return make_basis(theta, phi).dir;
}

Image project(const Scene& s, double theta, double phi, int size, double world_extent) {
  if (s.empty()) throw std::invalid_argument("project: empty scene");
  const ViewBasis basis = make_basis(theta, phi);
  const Eigen::Vector3d center = center_of_gravity(s);
  const int ss = size * kSupersample;
  SampleBuffer buf(ss);

  auto to_sx = [&](double wx) { return (wx / world_extent + 0.5) * ss; };
  auto to_sy = [&](double wy) { return (0.5 - wy / world_extent) * ss; };

  for (const auto& pm : s.meshes) {
    std::vector<Eigen::Vector3d> proj(pm.mesh.vertices.size());
    for (size_t i = 0; i < pm.mesh.vertices.size(); ++i) {
      Eigen::Vector3d w = pm.pose * pm.mesh.vertices[i] - center;
      proj[i] = Eigen::Vector3d(to_sx(w.dot(basis.right)), to_sy(w.dot(basis.up)),
                                w.dot(basis.dir));
    }
    for (size_t f = 0; f < pm.mesh.triangles.size(); ++f) {
      const auto& t = pm.mesh.triangles[f];
      Eigen::Vector3d a = proj[t[0]], b = proj[t[1]], c = proj[t[2]];
      double area2 = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
      if (std::abs(area2) < 1e-12) continue;
      if (area2 < 0) {
        std::swap(b, c);
        area2 = -area2;
      }
      int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}))));
      int x1 = std::min(ss - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}))));
      int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}))));
      int y1 = std::min(ss - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}))));
      const Eigen::Vector4d& col = pm.mesh.material_colors[static_cast<int>(pm.mesh.materials[f])];
      for (int y = y0; y <= y1; ++y) {
        double py = y + 0.5;
        for (int x = x0; x <= x1; ++x) {
          double px = x + 0.5;
          double w0 = (b.x() - a.x()) * (py - a.y()) - (b.y() - a.y()) * (px - a.x());
          double w1 = (c.x() - b.x()) * (py - b.y()) - (c.y() - b.y()) * (px - b.x());
          double w2 = (a.x() - c.x()) * (py - c.y()) - (a.y() - c.y()) * (px - c.x());
          if (w0 < 0 || w1 < 0 || w2 < 0) continue;
          double l1 = w2 / area2, l2 = w0 / area2;
          double l0 = 1.0 - l1 - l2;
          double z = l0 * a.z() + l1 * b.z() + l2 * c.z();
          size_t idx = static_cast<size_t>(y) * ss + x;
          if (z < buf.depth[idx]) {
            buf.depth[idx] = z;
            buf.color[idx].head<3>() = col.head<3>();
            buf.covered[idx] = true;
          }
        }
      }
    }
  }
  return downsample(buf, size);
}

Image cross_section(const Scene& s, double theta, double phi, int size,
                    double world_extent) {
  if (s.empty()) throw std::invalid_argument("cross_section: empty scene");
  const ViewBasis basis = make_basis(theta, phi);
  const Eigen::Vector3d center = center_of_gravity(s);
  const int ss = size * kSupersample;
  SampleBuffer buf(ss);

  struct Segment {
    double x0, y0, x1, y1;
  };

  // Membrane layer first, nucleus painted over it.
  for (Material layer : {Material::Membrane, Material::Nucleus}) {
    for (const auto& pm : s.meshes) {
      std::vector<Segment> segs;
      std::vector<double> sd(pm.mesh.vertices.size());
      std::vector<Eigen::Vector3d> world(pm.mesh.vertices.size());
      for (size_t i = 0; i < pm.mesh.vertices.size(); ++i) {
        world[i] = pm.pose * pm.mesh.vertices[i] - center;
        sd[i] = world[i].dot(basis.dir);
      }
      for (size_t f = 0; f < pm.mesh.triangles.size(); ++f) {
        if (pm.mesh.materials[f] != layer) continue;
        const auto& t = pm.mesh.triangles[f];
        double px = 0, py = 0, qx = 0, qy = 0;
        int found = 0;
        for (int e = 0; e < 3 && found < 2; ++e) {
          int ia = t[e], ib = t[(e + 1) % 3];
          bool pa = sd[ia] > 0.0, pb = sd[ib] > 0.0;
          if (pa == pb) continue;
          double tt = sd[ia] / (sd[ia] - sd[ib]);
          Eigen::Vector3d p = world[ia] + tt * (world[ib] - world[ia]);
          double x = p.dot(basis.right), y = p.dot(basis.up);
          if (found == 0) {
            px = x;
            py = y;
          } else {
            qx = x;
            qy = y;
          }
          ++found;
        }
        if (found == 2) segs.push_back({px, py, qx, qy});
      }
      if (segs.empty()) continue;

      const Eigen::Vector4d& col = pm.mesh.material_colors[static_cast<int>(layer)];
      std::vector<double> xs;
      for (int sy = 0; sy < ss; ++sy) {
        double y = (0.5 - (sy + 0.5) / ss) * world_extent;
        xs.clear();
        for (const auto& sg : segs) {
          bool above0 = sg.y0 > y, above1 = sg.y1 > y;
          if (above0 == above1) continue;
          double tt = (y - sg.y0) / (sg.y1 - sg.y0);
          xs.push_back(sg.x0 + tt * (sg.x1 - sg.x0));
        }
        if (xs.size() < 2) continue;
        std::sort(xs.begin(), xs.end());
        for (size_t k = 0; k + 1 < xs.size(); k += 2) {
          // Sample centers inside [xs[k], xs[k+1]).
          double sx0 = (xs[k] / world_extent + 0.5) * ss - 0.5;
          double sx1 = (xs[k + 1] / world_extent + 0.5) * ss - 0.5;
          int ix0 = std::max(0, static_cast<int>(std::ceil(sx0)));
          int ix1 = std::min(ss - 1, static_cast<int>(std::floor(sx1)));
          if (static_cast<double>(ix1) == sx1) --ix1; // half-open on the right
          for (int sx = ix0; sx <= ix1; ++sx) {
            size_t idx = static_cast<size_t>(sy) * ss + sx;
            buf.color[idx].head<3>() = col.head<3>();
            buf.covered[idx] = true;
          }
        }
      }
    }
  }
  return downsample(buf, size);
}

std::vector<AngleImage> render_batch(const Scene& s, const ProjectionSpec& spec) {
  spec.validate();
  std::vector<AngleImage> out;
  out.reserve(spec.thetas.size() * spec.phis.size());
  for (double theta : spec.thetas) {
    for (double phi : spec.phis) {
      AngleImage ai;
      ai.theta = theta;
      ai.phi = phi;
      ai.image = (spec.mode == RenderMode::Projection)
                     ? project(s, theta, phi, spec.size, spec.world_extent)
                     : cross_section(s, theta, phi, spec.size, spec.world_extent);
      out.push_back(std::move(ai));
    }
  }
  return out;
}

} // namespace cellsynth
