#include "cellsynth/image.hpp"

#include <cmath>
#include <stdexcept>

namespace cellsynth {

double alpha_coverage(const Image& img) {
  double s = 0.0;
  for (size_t i = 3; i < img.data.size(); i += 4) s += img.data[i];
  return s;
}

long opaque_pixel_count(const Image& img, double threshold) {
  long n = 0;
  for (size_t i = 3; i < img.data.size(); i += 4) {
    if (img.data[i] > threshold) ++n;
  }
  return n;
}

double max_pixel_difference(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) {
    throw std::invalid_argument("max_pixel_difference: dimension mismatch");
  }
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  }
  return m;
}

int connected_opaque_components(const Image& img, double threshold) {
  const int w = img.width, h = img.height;
  std::vector<int> label(static_cast<size_t>(w) * h, 0);
  int components = 0;
  std::vector<int> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      size_t idx = static_cast<size_t>(y) * w + x;
      if (label[idx] != 0 || img.at(x, y, 3) <= threshold) continue;
      ++components;
      stack.push_back(static_cast<int>(idx));
      label[idx] = components;
      while (!stack.empty()) {
        int cur = stack.back();
        stack.pop_back();
        int cx = cur % w, cy = cur / w;
        const int dx[4] = {1, -1, 0, 0};
        const int dy[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          int nx = cx + dx[k], ny = cy + dy[k];
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          size_t nidx = static_cast<size_t>(ny) * w + nx;
          if (label[nidx] == 0 && img.at(nx, ny, 3) > threshold) {
            label[nidx] = components;
            stack.push_back(static_cast<int>(nidx));
          }
        }
      }
    }
  }
  return components;
}

} // namespace cellsynth
