#pragma once

// Single-cell adversarial loop: latent -> multi-tail generator -> features ->
// mesh -> rendered batch -> critic, trained with the Wasserstein objective
// (weight-clipped critic, no output squashing). The mesh/render stage is not
// differentiable, so the generator gradient crosses it with a simultaneous
// perturbation estimate in packed-feature coordinates.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cellsynth/eval.hpp"
#include "cellsynth/features.hpp"
#include "cellsynth/image.hpp"
#include "cellsynth/mesh.hpp"
#include "cellsynth/nn.hpp"
#include "cellsynth/render.hpp"

namespace cellsynth {

// ---- generator ----

struct GeneratorNet {
  FeatureLayout layout;
  int latent_dim = 16;
  int hidden_dim = 64;
  nn::NetParams params; // trunk.W/.b + tail<k>.W/.b

  static GeneratorNet init(const FeatureLayout& layout, int latent_dim, int hidden_dim,
                           std::uint64_t seed);
};

struct GeneratorCache {
  Eigen::VectorXd z;
  Eigen::VectorXd hidden;               // tanh output of the trunk
  std::vector<Eigen::VectorXd> tails;   // tanh output per tail
  Eigen::VectorXd packed;
};

// Tails' outputs mapped to constraint bounds, packed, unpacked, clamped.
CellFeatures generator_forward(const GeneratorNet& g, const Eigen::VectorXd& z,
                               const ConstraintSet& c, GeneratorCache* cache = nullptr);

// Accumulates parameter gradients for dL/d(packed features).
void generator_backward(GeneratorNet& g, const ConstraintSet& c,
                        const GeneratorCache& cache, const Eigen::VectorXd& d_packed);

// ---- critic ----

struct CriticConfig {
  int image_size = 32;
  int c1 = 8;
  int c2 = 16;
  int c3 = 16;
};

struct CriticNet {
  CriticConfig cfg;
  nn::NetParams params;

  static CriticNet init(const CriticConfig& cfg, std::uint64_t seed);
};

struct CriticCache {
  nn::ConvCache cc1, cc2, cc3;
  nn::Tensor a1, a2, a3; // post-tanh activations
};

double critic_forward(const CriticNet& critic, const Image& img,
                      CriticCache* cache = nullptr);
void critic_backward(CriticNet& critic, const CriticCache& cache, double dscore);

// ---- losses and constraints ----

// critic_loss = -(mean(f_real) - mean(f_fake)); gen_loss = -mean(f_fake).
std::pair<double, double> wgan_losses(const std::vector<double>& f_real,
                                      const std::vector<double>& f_fake);

// Clamp every parameter of `p` into [-c, c]. Idempotent.
void weight_clip(nn::NetParams& p, double c);

// Exact 1-D Wasserstein-1 between equal-size empirical distributions:
// mean |sort(a)_i - sort(b)_i|.
double exact_w1_1d(std::vector<double> a, std::vector<double> b);

// ---- black-box gradient across the mesh/render stage ----

// Central simultaneous-perturbation estimate of d score / d v at v0, stepping
// in coordinates normalized by [lo, hi]. When the probe budget covers a full
// orthogonal (Hadamard) block of size next_pow2(dim), perturbation rows come
// from complete blocks, which makes the estimate exact for linear and
// quadratic scores; smaller budgets fall back to seeded Rademacher rows.
Eigen::VectorXd estimate_packed_grad(const Eigen::VectorXd& v0, const Eigen::VectorXd& lo,
                                     const Eigen::VectorXd& hi,
                                     const std::function<double(const Eigen::VectorXd&)>& score,
                                     int probes, double step, std::uint64_t seed);

// Same estimator at pack_features(f), returned in packed-feature coordinates.
Eigen::VectorXd estimate_feature_grad(const CellFeatures& f, const ConstraintSet& c,
                                      const std::function<double(const CellFeatures&)>& score,
                                      int probes, double step, std::uint64_t seed);

// ---- training ----

struct TrainConfig {
  int batch_m = 4;        // models per critic batch
  int gen_batch = 2;      // models per generator update
  double clip_c = 0.01;
  double lr_critic = 5e-5;
  double lr_gen = 5e-5;
  int n_critic = 5;
  int spsa_probes = 8;
  double spsa_step = 1e-2;
  std::uint64_t seed = 1;
  int iters = 100;
  ClassLabel cls = ClassLabel::Normal;

  std::vector<double> thetas{0.0, 1.5707963267948966};
  std::vector<double> phis{0.0, 1.5707963267948966};
  RenderMode mode = RenderMode::CrossSection;
  int image_size = 32;
  double world_extent = 4.0;
  int subdivisions = 2;

  int eval_every = 25;      // FID-proxy cadence (also at iter 0 and the end)
  int fid_dim = 16;
  std::uint64_t fid_seed = 12345; // fixed so runs are comparable
  int fid_fake_samples = 24;      // eval latents; images = samples * grid

  int latent_dim = 16;
  int hidden_dim = 64;

  void validate() const;
};

struct MetricsRow {
  int iter = 0;
  double critic_loss = 0.0;
  double gen_loss = 0.0;
  double w_estimate = 0.0;
  double fid_proxy = 0.0;
};

// Renders the image batch the critic sees for one model.
std::vector<Image> render_cell_images(const CellFeatures& f, const ConstraintSet& c,
                                      const TrainConfig& cfg);

struct GanTrainState {
  Rng rng;
  nn::Optimizer critic_opt{nn::OptimizerKind::RmsProp};
  nn::Optimizer gen_opt{nn::OptimizerKind::RmsProp};

  explicit GanTrainState(std::uint64_t seed) : rng(seed) {}
};

struct StepMetrics {
  double critic_loss = 0.0;
  double gen_loss = 0.0;
  double w_estimate = 0.0;
};

// n_critic critic updates (backprop + clip) then one SPSA-bridged generator
// update. Deterministic for a fixed state/seed.
StepMetrics train_step(GeneratorNet& gen, CriticNet& critic,
                       const std::vector<Image>& real_images, const ConstraintSet& c,
                       const TrainConfig& cfg, GanTrainState& state);

// Full training run with periodic FID-proxy evaluation.
std::vector<MetricsRow> train_gan(GeneratorNet& gen, CriticNet& critic,
                                  const std::vector<Image>& real_images,
                                  const ConstraintSet& c, const TrainConfig& cfg);

} // namespace cellsynth
