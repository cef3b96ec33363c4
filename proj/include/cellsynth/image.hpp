#pragma once

// RGBA raster with straight alpha, samples in [0,1] as doubles. Alpha 0 marks
// background; the renderer and the dataset pipeline rely on that exactly.

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cellsynth {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data; // interleaved RGBA, row-major

  Image() = default;
  Image(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h * 4, 0.0) {}

  double& at(int x, int y, int ch) {
    return data[(static_cast<size_t>(y) * width + x) * 4 + ch];
  }
  double at(int x, int y, int ch) const {
    return data[(static_cast<size_t>(y) * width + x) * 4 + ch];
  }
  Eigen::Vector4d pixel(int x, int y) const {
    size_t i = (static_cast<size_t>(y) * width + x) * 4;
    return Eigen::Vector4d(data[i], data[i + 1], data[i + 2], data[i + 3]);
  }
  void set_pixel(int x, int y, const Eigen::Vector4d& rgba) {
    size_t i = (static_cast<size_t>(y) * width + x) * 4;
    data[i] = rgba[0];
    data[i + 1] = rgba[1];
    data[i + 2] = rgba[2];
    data[i + 3] = rgba[3];
  }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

// Sum of alpha over all pixels (coverage-weighted silhouette area in px).
double alpha_coverage(const Image& img);

// Count of pixels with alpha strictly greater than `threshold`.
long opaque_pixel_count(const Image& img, double threshold = 0.5);

// Max per-channel absolute difference. Images must have identical dims.
double max_pixel_difference(const Image& a, const Image& b);

// 4-connected components of pixels with alpha > threshold.
int connected_opaque_components(const Image& img, double threshold = 0.5);

} // namespace cellsynth
