#include "cellsynth/topo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "cellsynth/gan.hpp"
#include "cellsynth/mesh.hpp"

namespace cellsynth {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

nn::StackConfig stack_config(const TopoConfig& cfg) {
  nn::StackConfig sc;
  sc.blocks = cfg.blocks;
  sc.d_model = cfg.d_model;
  sc.heads = cfg.heads;
  sc.mlp_hidden = cfg.mlp_hidden;
  return sc;
}

std::string slot_prefix(int slot) { return "dec.s" + std::to_string(slot); }

void add_decoder_params(TopoTransformer& t, Rng& rng) {
  const TopoConfig& cfg = t.cfg;
  for (int s = 0; s < cfg.slots; ++s) {
    for (int k = 0; k < cfg.layout.tails; ++k) {
      std::string tp = slot_prefix(s) + ".tail" + std::to_string(k);
      t.params.add(tp + ".W", {cfg.layout.tail_sizes[static_cast<size_t>(k)], cfg.d_model},
                   "decoder");
      init_uniform_scaled(t.params, tp + ".W", rng);
      t.params.add(tp + ".b", {cfg.layout.tail_sizes[static_cast<size_t>(k)]}, "decoder");
    }
    t.params.add(slot_prefix(s) + ".pos.W", {3, cfg.d_model}, "decoder");
    init_uniform_scaled(t.params, slot_prefix(s) + ".pos.W", rng);
    t.params.add(slot_prefix(s) + ".pos.b", {3}, "decoder");
  }
}

} // namespace

int TopoConfig::tokens() const {
  return (image_size / patch_size) * (image_size / patch_size);
}

void TopoConfig::validate() const {
  require(image_size >= 8 && patch_size >= 1, "TopoConfig: bad sizes");
  require(image_size % patch_size == 0, "TopoConfig: image size not divisible by patch");
  require(d_model % heads == 0, "TopoConfig: d_model must be divisible by heads");
  require(slots >= 1, "TopoConfig: slots must be >= 1");
  require(n_min >= 1, "TopoConfig: n_min must be >= 1");
  require(n_min <= static_cast<int>(thetas.size() * phis.size()),
          "TopoConfig: n_min exceeds the angle grid");
  require(lambda >= 0.0, "TopoConfig: lambda must be >= 0");
  layout.validate();
}

TopoTransformer TopoTransformer::init(const TopoConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  TopoTransformer t;
  t.cfg = cfg;
  Rng rng(seed);
  t.params.add("embed.W", {cfg.d_model, cfg.patch_dim()}, "encoder");
  init_uniform_scaled(t.params, "embed.W", rng);
  t.params.add("embed.b", {cfg.d_model}, "encoder");
  nn::Tensor& pos = t.params.add("pos", {cfg.tokens(), cfg.d_model}, "encoder");
  for (long i = 0; i < pos.size(); ++i) pos.data[i] = 0.02 * rng.normal();
  init_layer_stack(t.params, "enc", stack_config(cfg), rng, "encoder");
  add_decoder_params(t, rng);
  t.params.freeze_group("decoder");
  return t;
}

TopoTransformer TopoTransformer::init_with_decoder(const TopoConfig& cfg,
                                                   std::uint64_t seed,
                                                   const std::string& generator_ckpt) {
  TopoTransformer t = init(cfg, seed);
  nn::Checkpoint ck = nn::load_checkpoint(generator_ckpt);
  require(ck.params.has("tail0.W"), "init_with_decoder: checkpoint has no generator tails");
  require(ck.params.value("tail0.W").dim(1) == cfg.d_model,
          "init_with_decoder: generator hidden width != d_model");
  for (int s = 0; s < cfg.slots; ++s) {
    for (int k = 0; k < cfg.layout.tails; ++k) {
      std::string src = "tail" + std::to_string(k);
      std::string dst = slot_prefix(s) + ".tail" + std::to_string(k);
      require(ck.params.has(src + ".W"), "init_with_decoder: missing " + src);
      t.params.value(dst + ".W").data = ck.params.value(src + ".W").data;
      t.params.value(dst + ".b").data = ck.params.value(src + ".b").data;
    }
  }
  return t;
}

nn::Matrix patch_embed(const Image& x, const TopoTransformer& t, PatchEmbedCache* cache) {
  const TopoConfig& cfg = t.cfg;
  require(x.width == cfg.image_size && x.height == cfg.image_size,
          "patch_embed: image dims do not match config");
  require(x.width % cfg.patch_size == 0 && x.height % cfg.patch_size == 0,
          "patch_embed: image dims not divisible by patch size");
  const int grid = cfg.image_size / cfg.patch_size;
  const int T = grid * grid;
  const int pd = cfg.patch_dim();

  nn::Matrix patches(T, pd);
  for (int py = 0; py < grid; ++py) {
    for (int px = 0; px < grid; ++px) {
      int tok = py * grid + px;
      int col = 0;
      for (int yy = 0; yy < cfg.patch_size; ++yy) {
        for (int xx = 0; xx < cfg.patch_size; ++xx) {
          for (int ch = 0; ch < 4; ++ch) {
            patches(tok, col++) =
                x.at(px * cfg.patch_size + xx, py * cfg.patch_size + yy, ch);
          }
        }
      }
    }
  }
  nn::Matrix tokens = patches * t.params.value("embed.W").mat().transpose();
  tokens.rowwise() += t.params.value("embed.b").data.transpose();
  tokens += t.params.value("pos").mat();
  if (cache) cache->patches = std::move(patches);
  return tokens;
}

EncodeResult encode(const Image& x, const TopoTransformer& t, EncodeCache* cache) {
  EncodeResult r;
  nn::Matrix tokens = patch_embed(x, t, cache ? &cache->pe : nullptr);
  r.latent = layer_stack_forward(tokens, t.params, "enc", stack_config(t.cfg),
                                 cache ? &cache->stack : nullptr, &r.hidden);
  return r;
}

ClusterFeatures decode_features(const nn::Matrix& latent, const TopoTransformer& t,
                                const ConstraintSet& c, DecodeCache* cache) {
  const TopoConfig& cfg = t.cfg;
  require(latent.cols() == cfg.d_model, "decode_features: latent width != d_model");
  Eigen::VectorXd pooled = latent.colwise().mean().transpose();

  Eigen::VectorXd lo, hi;
  cluster_packed_bounds(cfg.layout, c, cfg.slots, lo, hi);
  const int per = cfg.layout.total_features + 3;
  Eigen::VectorXd packed(per * cfg.slots);

  DecodeCache local;
  DecodeCache* dc = cache ? cache : &local;
  dc->pooled = pooled;
  dc->tails.assign(static_cast<size_t>(cfg.slots), {});
  dc->pos.assign(static_cast<size_t>(cfg.slots), {});

  for (int s = 0; s < cfg.slots; ++s) {
    int off = s * per;
    for (int k = 0; k < cfg.layout.tails; ++k) {
      std::string tp = slot_prefix(s) + ".tail" + std::to_string(k);
      int len = cfg.layout.tail_sizes[static_cast<size_t>(k)];
      Eigen::VectorXd tk =
          (t.params.value(tp + ".W").mat() * pooled + t.params.value(tp + ".b").data)
              .array()
              .tanh()
              .matrix();
      packed.segment(off, len) =
          lo.segment(off, len).array() +
          (tk.array() + 1.0) * 0.5 * (hi.segment(off, len) - lo.segment(off, len)).array();
      dc->tails[static_cast<size_t>(s)].push_back(std::move(tk));
      off += len;
    }
    std::string pp = slot_prefix(s) + ".pos";
    Eigen::VectorXd pt =
        (t.params.value(pp + ".W").mat() * pooled + t.params.value(pp + ".b").data)
            .array()
            .tanh()
            .matrix();
    packed.segment(off, 3) =
        lo.segment(off, 3).array() +
        (pt.array() + 1.0) * 0.5 * (hi.segment(off, 3) - lo.segment(off, 3)).array();
    dc->pos[static_cast<size_t>(s)] = std::move(pt);
  }
  dc->packed = packed;
  return clamp_cluster_features(unpack_cluster_features(packed, cfg.layout, cfg.slots), c);
}

Eigen::VectorXd decode_backward(const TopoTransformer& t, const ConstraintSet& c,
                                const DecodeCache& cache, const Eigen::VectorXd& d_packed) {
  const TopoConfig& cfg = t.cfg;
  Eigen::VectorXd lo, hi;
  cluster_packed_bounds(cfg.layout, c, cfg.slots, lo, hi);
  const int per = cfg.layout.total_features + 3;
  require(d_packed.size() == per * cfg.slots, "decode_backward: gradient length mismatch");

  Eigen::VectorXd d_pooled = Eigen::VectorXd::Zero(cfg.d_model);
  for (int s = 0; s < cfg.slots; ++s) {
    int off = s * per;
    for (int k = 0; k < cfg.layout.tails; ++k) {
      std::string tp = slot_prefix(s) + ".tail" + std::to_string(k);
      int len = cfg.layout.tail_sizes[static_cast<size_t>(k)];
      const Eigen::VectorXd& tk = cache.tails[static_cast<size_t>(s)][static_cast<size_t>(k)];
      Eigen::VectorXd dt_pre =
          (d_packed.segment(off, len).array() *
           (hi.segment(off, len) - lo.segment(off, len)).array() * 0.5 *
           (1.0 - tk.array().square()))
              .matrix();
      d_pooled += t.params.value(tp + ".W").mat().transpose() * dt_pre;
      off += len;
    }
    std::string pp = slot_prefix(s) + ".pos";
    const Eigen::VectorXd& pt = cache.pos[static_cast<size_t>(s)];
    Eigen::VectorXd dp_pre = (d_packed.segment(off, 3).array() *
                              (hi.segment(off, 3) - lo.segment(off, 3)).array() * 0.5 *
                              (1.0 - pt.array().square()))
                                 .matrix();
    d_pooled += t.params.value(pp + ".W").mat().transpose() * dp_pre;
  }
  return d_pooled;
}

// ---- losses ----

double pair_reconstruction_loss(const Image& x, const Image& y) {
  require(x.width == y.width && x.height == y.height,
          "pair_reconstruction_loss: dimension mismatch");
  double rgb_sum = 0.0;
  long mask_count = 0;
  double alpha_sum = 0.0;
  const long total = static_cast<long>(x.pixel_count());
  for (int py = 0; py < x.height; ++py) {
    for (int px = 0; px < x.width; ++px) {
      double ax = x.at(px, py, 3), ay = y.at(px, py, 3);
      double da = ax - ay;
      alpha_sum += da * da;
      if (ax > 0.0 || ay > 0.0) {
        ++mask_count;
        double acc = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
          double d = x.at(px, py, ch) - y.at(px, py, ch);
          acc += d * d;
        }
        rgb_sum += acc / 3.0;
      }
    }
  }
  double rgb_term = mask_count > 0 ? rgb_sum / static_cast<double>(mask_count) : 0.0;
  return rgb_term + alpha_sum / static_cast<double>(total);
}

double sum_min_n(const std::vector<double>& losses, int n) {
  require(!losses.empty(), "sum_min_n: empty loss list");
  require(n >= 1 && n <= static_cast<int>(losses.size()), "sum_min_n: n out of range");
  std::vector<int> idx(losses.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return losses[static_cast<size_t>(a)] < losses[static_cast<size_t>(b)];
  });
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += losses[static_cast<size_t>(idx[static_cast<size_t>(i)])];
  return s;
}

double min_n_loss(const Image& x, const std::vector<AngleImage>& projections, int n) {
  require(!projections.empty(), "min_n_loss: empty projection list");
  std::vector<double> losses;
  losses.reserve(projections.size());
  for (const auto& p : projections) losses.push_back(pair_reconstruction_loss(x, p.image));
  return sum_min_n(losses, n);
}

// ---- contractive penalty ----

Eigen::VectorXd designated_activation(const TopoTransformer& t, const Image& x) {
  if (t.cfg.designated == ContractiveLayer::PatchEmbed) {
    nn::Matrix tokens = patch_embed(x, t);
    nn::RowMatrix rm = tokens;
    return Eigen::Map<Eigen::VectorXd>(rm.data(), rm.size());
  }
  EncodeResult r = encode(x, t);
  return r.latent.colwise().mean().transpose();
}

double contractive_penalty(const TopoTransformer& t, const Image& x) {
  const TopoConfig& cfg = t.cfg;
  if (cfg.lambda == 0.0) return 0.0;

  if (cfg.designated == ContractiveLayer::PatchEmbed) {
    // Each token row is W p_t + pos_t: the Jacobian w.r.t. the image is W
    // repeated once per patch.
    double wf2 = t.params.value("embed.W").data.squaredNorm();
    return cfg.lambda * static_cast<double>(cfg.tokens()) * wf2;
  }

  // Pooled encoder output: one reverse pass per component on scratch params.
  TopoTransformer scratch = t;
  EncodeCache cache;
  EncodeResult r = encode(x, scratch, &cache);
  const int T = cfg.tokens();
  const int d = cfg.d_model;
  double total = 0.0;
  for (int i = 0; i < d; ++i) {
    scratch.params.zero_grads();
    nn::Matrix dlatent = nn::Matrix::Zero(T, d);
    dlatent.col(i).setConstant(1.0 / static_cast<double>(T)); // mean-pool backward
    nn::Matrix dtokens =
        layer_stack_backward(dlatent, scratch.params, "enc", stack_config(cfg), cache.stack);
    // Through patch embedding to image pixels: d patches = dtokens * W.
    nn::Matrix dpatches = dtokens * scratch.params.value("embed.W").mat();
    total += dpatches.squaredNorm();
  }
  return cfg.lambda * total;
}

// ---- training ----

void TopoTrainConfig::validate() const {
  require(iters >= 1, "TopoTrainConfig: iters must be >= 1");
  require(spsa_probes >= 2, "TopoTrainConfig: spsa_probes must be >= 2");
  require(spsa_step > 0.0, "TopoTrainConfig: spsa_step must be > 0");
  require(penalty_probes >= 1, "TopoTrainConfig: penalty_probes must be >= 1");
}

std::vector<AngleImage> render_cluster(const ClusterFeatures& g, const ConstraintSet& c,
                                       const TopoConfig& cfg) {
  BuildOptions opts;
  opts.subdivisions = cfg.subdivisions;
  Scene scene = assemble_cluster(g, c, opts);
  ProjectionSpec spec;
  spec.thetas = cfg.thetas;
  spec.phis = cfg.phis;
  spec.size = cfg.image_size;
  spec.mode = cfg.mode;
  spec.world_extent = cfg.world_extent;
  return render_batch(scene, spec);
}

namespace {

double sample_recon_loss(const TopoTransformer& t, const ConstraintSet& c,
                         const Image& x, const Eigen::VectorXd& packed) {
  ClusterFeatures g = clamp_cluster_features(
      unpack_cluster_features(packed, t.cfg.layout, t.cfg.slots), c);
  return min_n_loss(x, render_cluster(g, c, t.cfg), t.cfg.n_min);
}

} // namespace

double mean_total_loss(const TopoTransformer& t, const std::vector<Image>& dataset,
                       const ConstraintSet& c) {
  require(!dataset.empty(), "mean_total_loss: empty dataset");
  double acc = 0.0;
  for (const Image& x : dataset) {
    EncodeResult r = encode(x, t);
    DecodeCache dc;
    decode_features(r.latent, t, c, &dc);
    acc += sample_recon_loss(t, c, x, dc.packed) + contractive_penalty(t, x);
  }
  return acc / static_cast<double>(dataset.size());
}

std::vector<TopoMetricsRow> train_transformer(TopoTransformer& t,
                                              const std::vector<Image>& dataset,
                                              const ConstraintSet& c,
                                              const TopoTrainConfig& cfg) {
  cfg.validate();
  require(!dataset.empty(), "train_transformer: empty dataset");
  Rng rng(cfg.seed);
  nn::Optimizer opt(nn::OptimizerKind::RmsProp);
  Eigen::VectorXd lo, hi;
  cluster_packed_bounds(t.cfg.layout, c, t.cfg.slots, lo, hi);

  std::vector<TopoMetricsRow> rows;
  for (int it = 0; it < cfg.iters; ++it) {
    const Image& x = dataset[static_cast<size_t>(it) % dataset.size()];

    EncodeCache ec;
    EncodeResult r = encode(x, t, &ec);
    DecodeCache dc;
    decode_features(r.latent, t, c, &dc);

    double recon = sample_recon_loss(t, c, x, dc.packed);
    auto packed_score = [&](const Eigen::VectorXd& v) {
      return sample_recon_loss(t, c, x, v);
    };
    Eigen::VectorXd g_packed = estimate_packed_grad(dc.packed, lo, hi, packed_score,
                                                    cfg.spsa_probes, cfg.spsa_step,
                                                    rng.next());

    t.params.zero_grads();
    Eigen::VectorXd d_pooled = decode_backward(t, c, dc, g_packed);
    const int T = t.cfg.tokens();
    nn::Matrix dlatent(T, t.cfg.d_model);
    for (int row = 0; row < T; ++row) {
      dlatent.row(row) = d_pooled.transpose() / static_cast<double>(T);
    }
    nn::Matrix dtokens =
        layer_stack_backward(dlatent, t.params, "enc", stack_config(t.cfg), ec.stack);
    t.params.grad("embed.W").mat() += dtokens.transpose() * ec.pe.patches;
    t.params.grad("embed.b").data += dtokens.colwise().sum().transpose();
    t.params.grad("pos").mat() += dtokens;

    // Contractive term: analytic value; parameter gradient estimated by a
    // central perturbation over the non-frozen parameter vector.
    double penalty = contractive_penalty(t, x);
    if (t.cfg.lambda > 0.0) {
      Eigen::VectorXd theta0 = t.params.flatten_values();
      Eigen::VectorXd g_theta = Eigen::VectorXd::Zero(theta0.size());
      for (int pr = 0; pr < cfg.penalty_probes; ++pr) {
        Eigen::VectorXd delta(theta0.size());
        for (long i = 0; i < delta.size(); ++i) delta[i] = rng.sign();
        t.params.set_flattened_values(theta0 + cfg.penalty_step * delta);
        double fp = contractive_penalty(t, x);
        t.params.set_flattened_values(theta0 - cfg.penalty_step * delta);
        double fm = contractive_penalty(t, x);
        g_theta += ((fp - fm) / (2.0 * cfg.penalty_step)) * delta;
      }
      t.params.set_flattened_values(theta0);
      g_theta /= static_cast<double>(cfg.penalty_probes);
      long k = 0;
      for (const auto& name : t.params.names()) {
        if (t.params.frozen(name)) continue;
        t.params.grad(name).data += g_theta.segment(k, t.params.value(name).size());
        k += t.params.value(name).size();
      }
    }

    opt.step(t.params, cfg.lr);
    rows.push_back(TopoMetricsRow{it, recon + penalty, recon, penalty});
  }
  return rows;
}

} // namespace cellsynth
