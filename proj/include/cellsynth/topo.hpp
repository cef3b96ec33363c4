#pragma once

// Topology transformer: patch-embeds a cluster image, encodes it with
// pre-norm attention blocks, and decodes cluster features through frozen
// multi-tail heads. Trained with the sum of the n smallest per-angle
// reconstruction errors plus a contractive penalty on a designated hidden
// activation.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cellsynth/features.hpp"
#include "cellsynth/image.hpp"
#include "cellsynth/nn.hpp"
#include "cellsynth/render.hpp"

namespace cellsynth {

enum class ContractiveLayer { PatchEmbed, PooledEncoder };

struct TopoConfig {
  int image_size = 40;
  int patch_size = 8;
  int d_model = 32;
  int heads = 4;
  int blocks = 2;
  int mlp_hidden = 64;

  int slots = 3;        // decoded cluster size
  int n_min = 3;        // smallest pair losses summed
  double lambda = 1e-4; // contractive weight

  std::vector<double> thetas{0.0, 0.7853981633974483, 1.5707963267948966,
                             2.356194490192345};
  std::vector<double> phis{0.0, 1.0471975511965976, 2.0943951023931953};
  RenderMode mode = RenderMode::CrossSection;
  double world_extent = 6.0;
  int subdivisions = 2;

  FeatureLayout layout;
  ContractiveLayer designated = ContractiveLayer::PooledEncoder;

  int tokens() const;
  int patch_dim() const { return patch_size * patch_size * 4; }
  void validate() const;
};

struct TopoTransformer {
  TopoConfig cfg;
  nn::NetParams params; // groups: "encoder" (trained), "decoder" (frozen)

  // Decoder heads seeded randomly, then frozen.
  static TopoTransformer init(const TopoConfig& cfg, std::uint64_t seed);
  // Decoder tails copied from a single-cell generator checkpoint (replicated
  // per slot); requires the checkpoint hidden width to equal cfg.d_model.
  static TopoTransformer init_with_decoder(const TopoConfig& cfg, std::uint64_t seed,
                                           const std::string& generator_ckpt);
};

// ---- encoder ----

struct PatchEmbedCache {
  nn::Matrix patches; // {tokens, patch_dim}
};

// linear(flatten(patch)) + position embedding, row-major patch order.
nn::Matrix patch_embed(const Image& x, const TopoTransformer& t,
                       PatchEmbedCache* cache = nullptr);

struct EncodeCache {
  PatchEmbedCache pe;
  nn::StackCache stack;
};

struct EncodeResult {
  nn::Matrix latent;              // {tokens, d_model}
  std::vector<nn::Matrix> hidden; // after every block
};

EncodeResult encode(const Image& x, const TopoTransformer& t,
                    EncodeCache* cache = nullptr);

// ---- frozen decoder ----

struct DecodeCache {
  Eigen::VectorXd pooled;
  std::vector<std::vector<Eigen::VectorXd>> tails; // [slot][tail] tanh outputs
  std::vector<Eigen::VectorXd> pos;                // [slot] tanh outputs
  Eigen::VectorXd packed;                          // packed cluster vector
};

// Mean-pooled tokens through frozen per-slot heads -> packed -> unpack ->
// clamp. Never updates decoder weights.
ClusterFeatures decode_features(const nn::Matrix& latent, const TopoTransformer& t,
                                const ConstraintSet& c, DecodeCache* cache = nullptr);

// Chain rule through the (frozen) decoder: d loss/d packed -> d loss/d pooled.
Eigen::VectorXd decode_backward(const TopoTransformer& t, const ConstraintSet& c,
                                const DecodeCache& cache, const Eigen::VectorXd& d_packed);

// ---- losses ----

// Masked mean squared RGB error over pixels where either alpha > 0, plus mean
// squared alpha mismatch over all pixels.
double pair_reconstruction_loss(const Image& x, const Image& y);

// Sum of the n smallest values; ties broken by list order.
double sum_min_n(const std::vector<double>& losses, int n);

double min_n_loss(const Image& x, const std::vector<AngleImage>& projections, int n);

// Designated hidden activation a(x) as a flat vector.
Eigen::VectorXd designated_activation(const TopoTransformer& t, const Image& x);

// lambda * sum_i ||d a_i / d x||^2, Jacobian computed analytically (one
// reverse pass per activation component for the pooled-encoder layer).
double contractive_penalty(const TopoTransformer& t, const Image& x);

// ---- training ----

struct TopoTrainConfig {
  int iters = 200;
  double lr = 1e-3;
  int spsa_probes = 4;
  double spsa_step = 1e-2;
  std::uint64_t seed = 1;
  // Parameter-space perturbation for the contractive term (value itself is
  // analytic; its parameter gradient is estimated).
  int penalty_probes = 2;
  double penalty_step = 1e-4;

  void validate() const;
};

struct TopoMetricsRow {
  int iter = 0;
  double total = 0.0;
  double recon = 0.0;
  double penalty = 0.0;
};

// Render the decoded cluster over the angle grid.
std::vector<AngleImage> render_cluster(const ClusterFeatures& g, const ConstraintSet& c,
                                       const TopoConfig& cfg);

// Mean L_T = min_n_loss + contractive_penalty over the dataset, no updates.
double mean_total_loss(const TopoTransformer& t, const std::vector<Image>& dataset,
                       const ConstraintSet& c);

std::vector<TopoMetricsRow> train_transformer(TopoTransformer& t,
                                              const std::vector<Image>& dataset,
                                              const ConstraintSet& c,
                                              const TopoTrainConfig& cfg);

} // namespace cellsynth
