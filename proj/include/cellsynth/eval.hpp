#pragma once

// Frechet-distance evaluation between image sets under a fixed-seed random
// convolutional embedder. Values are internally consistent and reproducible
// per seed, but are NOT comparable to Inception-based FID numbers reported
// elsewhere.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cellsynth/image.hpp"
#include "cellsynth/nn.hpp"

namespace cellsynth {

struct FrechetStats {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
};

// Fixed random conv stack -> d-dim feature vector; weights immutable after
// construction, identical across runs for the same (dim, seed, input size).
class Embedder {
 public:
  Embedder(int dim, std::uint64_t seed, int input_size);

  Eigen::VectorXd embed_one(const Image& img) const;
  int dim() const { return dim_; }
  int input_size() const { return input_size_; }
  std::uint64_t seed() const { return seed_; }

 private:
  int dim_;
  int input_size_;
  std::uint64_t seed_;
  nn::NetParams params_;
  int flat_size_ = 0;
};

// One row per image; all images must match the embedder input size.
Eigen::MatrixXd embed(const std::vector<Image>& images, const Embedder& e);

// Sample mean and unbiased sample covariance (symmetrized). Needs >= 2 rows.
FrechetStats fit_gaussian(const Eigen::MatrixXd& features);

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}); matrix square root via
// eigendecomposition of Sa^{1/2} Sb Sa^{1/2}; clamped at 0.
double frechet_distance(const FrechetStats& a, const FrechetStats& b);

// Symmetric PSD square root used by frechet_distance; exposed for validation.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m);

enum class ClassLabel { Normal = 0, Cancer = 1 };

struct FidReport {
  double total = 0.0;
  std::optional<double> regular; // normal-class subset
  std::optional<double> cancer;
  int n_real = 0;
  int n_fake = 0;
  std::uint64_t seed = 0;
};

// embed -> fit -> frechet_distance; per-class values when labels are given
// (one label per image, same order). Both sets need >= 2 images.
FidReport fid_report(const std::vector<Image>& real, const std::vector<Image>& fake,
                     const Embedder& e,
                     const std::vector<ClassLabel>* real_labels = nullptr,
                     const std::vector<ClassLabel>* fake_labels = nullptr);

} // namespace cellsynth
