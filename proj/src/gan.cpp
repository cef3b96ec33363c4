#include "cellsynth/gan.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cellsynth {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

nn::Tensor image_to_tensor(const Image& img) {
  nn::Tensor t({4, img.height, img.width});
  long k = 0;
  for (int c = 0; c < 4; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) t.data[k++] = img.at(x, y, c);
    }
  }
  return t;
}

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Sylvester Hadamard entry H(r, c) = (-1)^popcount(r & c).
double hadamard_entry(int r, int c) {
  return (__builtin_popcount(static_cast<unsigned>(r & c)) & 1) ? -1.0 : 1.0;
}

} // namespace

// ---- generator ----

GeneratorNet GeneratorNet::init(const FeatureLayout& layout, int latent_dim,
                                int hidden_dim, std::uint64_t seed) {
  layout.validate();
  GeneratorNet g;
  g.layout = layout;
  g.latent_dim = latent_dim;
  g.hidden_dim = hidden_dim;
  Rng rng(seed);
  g.params.add("trunk.W", {hidden_dim, latent_dim});
  g.params.add("trunk.b", {hidden_dim});
  for (int k = 0; k < layout.tails; ++k) {
    std::string tp = "tail" + std::to_string(k);
    g.params.add(tp + ".W", {layout.tail_sizes[static_cast<size_t>(k)], hidden_dim});
    g.params.add(tp + ".b", {layout.tail_sizes[static_cast<size_t>(k)]});
  }
  for (const auto& name : g.params.names()) init_uniform_scaled(g.params, name, rng);
  return g;
}

CellFeatures generator_forward(const GeneratorNet& g, const Eigen::VectorXd& z,
                               const ConstraintSet& c, GeneratorCache* cache) {
  require(z.size() == g.latent_dim, "generator_forward: |z| != latent_dim");
  Eigen::VectorXd lo, hi;
  packed_bounds(g.layout, c, lo, hi);

  Eigen::VectorXd h =
      (g.params.value("trunk.W").mat() * z + g.params.value("trunk.b").data)
          .array()
          .tanh()
          .matrix();

  Eigen::VectorXd packed(g.layout.total_features);
  std::vector<Eigen::VectorXd> tails;
  int off = 0;
  for (int k = 0; k < g.layout.tails; ++k) {
    std::string tp = "tail" + std::to_string(k);
    int len = g.layout.tail_sizes[static_cast<size_t>(k)];
    Eigen::VectorXd t =
        (g.params.value(tp + ".W").mat() * h + g.params.value(tp + ".b").data)
            .array()
            .tanh()
            .matrix();
    packed.segment(off, len) =
        lo.segment(off, len).array() +
        (t.array() + 1.0) * 0.5 * (hi.segment(off, len) - lo.segment(off, len)).array();
    tails.push_back(std::move(t));
    off += len;
  }
  if (cache) {
    cache->z = z;
    cache->hidden = h;
    cache->tails = std::move(tails);
    cache->packed = packed;
  }
  return clamp_features(unpack_features(packed, g.layout), c);
}

void generator_backward(GeneratorNet& g, const ConstraintSet& c,
                        const GeneratorCache& cache, const Eigen::VectorXd& d_packed) {
  require(d_packed.size() == g.layout.total_features,
          "generator_backward: gradient length mismatch");
  Eigen::VectorXd lo, hi;
  packed_bounds(g.layout, c, lo, hi);

  Eigen::VectorXd dh = Eigen::VectorXd::Zero(g.hidden_dim);
  int off = 0;
  for (int k = 0; k < g.layout.tails; ++k) {
    std::string tp = "tail" + std::to_string(k);
    int len = g.layout.tail_sizes[static_cast<size_t>(k)];
    const Eigen::VectorXd& t = cache.tails[static_cast<size_t>(k)];
    // v = lo + (tanh(t_pre)+1)/2 * range  =>  dv/dt_pre = range/2 * (1 - t^2)
    Eigen::VectorXd dt_pre =
        (d_packed.segment(off, len).array() *
         (hi.segment(off, len) - lo.segment(off, len)).array() * 0.5 *
         (1.0 - t.array().square()))
            .matrix();
    g.params.grad(tp + ".W").mat() += dt_pre * cache.hidden.transpose();
    g.params.grad(tp + ".b").data += dt_pre;
    dh += g.params.value(tp + ".W").mat().transpose() * dt_pre;
    off += len;
  }
  Eigen::VectorXd dh_pre = (dh.array() * (1.0 - cache.hidden.array().square())).matrix();
  g.params.grad("trunk.W").mat() += dh_pre * cache.z.transpose();
  g.params.grad("trunk.b").data += dh_pre;
}

// ---- critic ----

CriticNet CriticNet::init(const CriticConfig& cfg, std::uint64_t seed) {
  CriticNet net;
  net.cfg = cfg;
  Rng rng(seed);
  net.params.add("conv1.W", {cfg.c1, 4, 3, 3});
  net.params.add("conv1.b", {cfg.c1});
  net.params.add("conv2.W", {cfg.c2, cfg.c1, 3, 3});
  net.params.add("conv2.b", {cfg.c2});
  net.params.add("conv3.W", {cfg.c3, cfg.c2, 3, 3});
  net.params.add("conv3.b", {cfg.c3});
  int h1 = (cfg.image_size + 2 - 3) / 2 + 1;
  int h2 = (h1 + 2 - 3) / 2 + 1;
  int h3 = (h2 + 2 - 3) / 2 + 1;
  net.params.add("head.W", {1, cfg.c3 * h3 * h3});
  net.params.add("head.b", {1});
  for (const auto& name : net.params.names()) init_uniform_scaled(net.params, name, rng);
  return net;
}

double critic_forward(const CriticNet& critic, const Image& img, CriticCache* cache) {
  require(img.width == critic.cfg.image_size && img.height == critic.cfg.image_size,
          "critic_forward: image size does not match critic config");
  nn::Tensor x = image_to_tensor(img);
  CriticCache local;
  CriticCache* cc = cache ? cache : &local;

  nn::Tensor h1 = nn::conv2d_forward(x, critic.params.value("conv1.W"),
                                     critic.params.value("conv1.b"), 2, 1, &cc->cc1);
  nn::tensor_tanh_inplace(h1);
  cc->a1 = h1;
  nn::Tensor h2 = nn::conv2d_forward(h1, critic.params.value("conv2.W"),
                                     critic.params.value("conv2.b"), 2, 1, &cc->cc2);
  nn::tensor_tanh_inplace(h2);
  cc->a2 = h2;
  nn::Tensor h3 = nn::conv2d_forward(h2, critic.params.value("conv3.W"),
                                     critic.params.value("conv3.b"), 2, 1, &cc->cc3);
  nn::tensor_tanh_inplace(h3);
  cc->a3 = h3;
  return critic.params.value("head.W").data.dot(h3.data) +
         critic.params.value("head.b").data[0];
}

void critic_backward(CriticNet& critic, const CriticCache& cache, double dscore) {
  critic.params.grad("head.W").data += dscore * cache.a3.data;
  critic.params.grad("head.b").data[0] += dscore;
  nn::Tensor d3 = cache.a3;
  d3.data = dscore * critic.params.value("head.W").data;
  d3.data = nn::tanh_backward_vec(d3.data, cache.a3.data);

  nn::Tensor d2 = nn::conv2d_backward(d3, critic.params.value("conv3.W"), cache.cc3, 2, 1,
                                      critic.params.grad("conv3.W"),
                                      critic.params.grad("conv3.b"));
  d2.data = nn::tanh_backward_vec(d2.data, cache.a2.data);
  nn::Tensor d1 = nn::conv2d_backward(d2, critic.params.value("conv2.W"), cache.cc2, 2, 1,
                                      critic.params.grad("conv2.W"),
                                      critic.params.grad("conv2.b"));
  d1.data = nn::tanh_backward_vec(d1.data, cache.a1.data);
  nn::conv2d_backward(d1, critic.params.value("conv1.W"), cache.cc1, 2, 1,
                      critic.params.grad("conv1.W"), critic.params.grad("conv1.b"));
}

// ---- losses ----

std::pair<double, double> wgan_losses(const std::vector<double>& f_real,
                                      const std::vector<double>& f_fake) {
  require(!f_real.empty() && !f_fake.empty(), "wgan_losses: empty score list");
  require(f_real.size() == f_fake.size(), "wgan_losses: list length mismatch");
  double mr = 0.0, mf = 0.0;
  for (double v : f_real) mr += v;
  for (double v : f_fake) mf += v;
  mr /= static_cast<double>(f_real.size());
  mf /= static_cast<double>(f_fake.size());
  return {-(mr - mf), -mf};
}

void weight_clip(nn::NetParams& p, double c) {
  require(c > 0.0, "weight_clip: c must be > 0");
  for (const auto& name : p.names()) {
    auto& d = p.value(name).data;
    d = d.cwiseMax(-c).cwiseMin(c);
  }
}

double exact_w1_1d(std::vector<double> a, std::vector<double> b) {
  require(!a.empty(), "exact_w1_1d: empty input");
  require(a.size() == b.size(), "exact_w1_1d: size mismatch");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

// ---- SPSA ----

Eigen::VectorXd estimate_packed_grad(const Eigen::VectorXd& v0, const Eigen::VectorXd& lo,
                                     const Eigen::VectorXd& hi,
                                     const std::function<double(const Eigen::VectorXd&)>& score,
                                     int probes, double step, std::uint64_t seed) {
  require(probes >= 2, "estimate_packed_grad: probes must be >= 2");
  require(step > 0.0, "estimate_packed_grad: step must be > 0");
  const int n = static_cast<int>(v0.size());
  require(lo.size() == n && hi.size() == n, "estimate_packed_grad: bounds size mismatch");

  Eigen::VectorXd range = hi - lo;
  Rng rng(seed);
  Eigen::VectorXd col_sign(n);
  for (int i = 0; i < n; ++i) col_sign[i] = rng.sign();

  const int block = next_pow2(n);
  const bool use_blocks = probes >= block;
  const int rows = use_blocks ? (probes / block) * block : probes;

  Eigen::VectorXd g_u = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd delta(n), vp(n), vm(n);
  for (int r = 0; r < rows; ++r) {
    if (use_blocks) {
      int hr = r % block;
      for (int i = 0; i < n; ++i) delta[i] = hadamard_entry(hr, i) * col_sign[i];
    } else {
      for (int i = 0; i < n; ++i) delta[i] = rng.sign();
    }
    vp = v0.array() + step * range.array() * delta.array();
    vm = v0.array() - step * range.array() * delta.array();
    double diff = (score(vp) - score(vm)) / (2.0 * step);
    g_u += diff * delta;
  }
  g_u /= static_cast<double>(rows);

  Eigen::VectorXd g_v(n);
  for (int i = 0; i < n; ++i) g_v[i] = range[i] > 0.0 ? g_u[i] / range[i] : 0.0;
  return g_v;
}

Eigen::VectorXd estimate_feature_grad(const CellFeatures& f, const ConstraintSet& c,
                                      const std::function<double(const CellFeatures&)>& score,
                                      int probes, double step, std::uint64_t seed) {
  Eigen::VectorXd lo, hi;
  packed_bounds(f.layout, c, lo, hi);
  const FeatureLayout layout = f.layout;
  auto packed_score = [&](const Eigen::VectorXd& v) {
    return score(unpack_features(v, layout));
  };
  return estimate_packed_grad(pack_features(f), lo, hi, packed_score, probes, step, seed);
}

// ---- training ----

void TrainConfig::validate() const {
  require(batch_m >= 1, "TrainConfig: batch_m must be >= 1");
  require(gen_batch >= 1, "TrainConfig: gen_batch must be >= 1");
  require(clip_c > 0.0, "TrainConfig: clip_c must be > 0");
  require(spsa_probes >= 2, "TrainConfig: spsa_probes must be >= 2");
  require(!thetas.empty() && !phis.empty(), "TrainConfig: empty angle grid");
  require(iters >= 1, "TrainConfig: iters must be >= 1");
}

std::vector<Image> render_cell_images(const CellFeatures& f, const ConstraintSet& c,
                                      const TrainConfig& cfg) {
  BuildOptions opts;
  opts.subdivisions = cfg.subdivisions;
  Scene scene;
  scene.meshes.push_back(PlacedMesh{build_cell(clamp_features(f, c), c, opts),
                                    Eigen::Isometry3d::Identity()});
  ProjectionSpec spec;
  spec.thetas = cfg.thetas;
  spec.phis = cfg.phis;
  spec.size = cfg.image_size;
  spec.mode = cfg.mode;
  spec.world_extent = cfg.world_extent;
  std::vector<Image> out;
  for (auto& ai : render_batch(scene, spec)) out.push_back(std::move(ai.image));
  return out;
}

namespace {

Eigen::VectorXd draw_latent(Rng& rng, int dim) {
  Eigen::VectorXd z(dim);
  for (int i = 0; i < dim; ++i) z[i] = rng.normal();
  return z;
}

} // namespace

StepMetrics train_step(GeneratorNet& gen, CriticNet& critic,
                       const std::vector<Image>& real_images, const ConstraintSet& c,
                       const TrainConfig& cfg, GanTrainState& state) {
  require(!real_images.empty(), "train_step: real image pool is empty");
  cfg.validate();
  StepMetrics out;

  // Critic updates.
  for (int step = 0; step < cfg.n_critic; ++step) {
    std::vector<Image> fake;
    for (int b = 0; b < cfg.batch_m; ++b) {
      CellFeatures f = generator_forward(gen, draw_latent(state.rng, gen.latent_dim), c);
      for (auto& img : render_cell_images(f, c, cfg)) fake.push_back(std::move(img));
    }
    std::vector<const Image*> real;
    for (size_t b = 0; b < fake.size(); ++b) {
      real.push_back(&real_images[static_cast<size_t>(
          state.rng.uniform_int(static_cast<int>(real_images.size())))]);
    }

    critic.params.zero_grads();
    std::vector<double> f_real, f_fake;
    const double d_real = -1.0 / static_cast<double>(real.size());
    const double d_fake = 1.0 / static_cast<double>(fake.size());
    for (const Image* img : real) {
      CriticCache cache;
      f_real.push_back(critic_forward(critic, *img, &cache));
      critic_backward(critic, cache, d_real);
    }
    for (const Image& img : fake) {
      CriticCache cache;
      f_fake.push_back(critic_forward(critic, img, &cache));
      critic_backward(critic, cache, d_fake);
    }
    auto [critic_loss, gen_loss_unused] = wgan_losses(f_real, f_fake);
    (void)gen_loss_unused;
    out.critic_loss = critic_loss;
    out.w_estimate = -critic_loss;
    state.critic_opt.step(critic.params, cfg.lr_critic);
    weight_clip(critic.params, cfg.clip_c);
  }

  // Generator update: SPSA through critic(render(build(.))), chained
  // analytically through the tails and trunk.
  Eigen::VectorXd lo, hi;
  packed_bounds(gen.layout, c, lo, hi);
  gen.params.zero_grads();
  double gen_score_sum = 0.0;
  const FeatureLayout layout = gen.layout;
  for (int b = 0; b < cfg.gen_batch; ++b) {
    GeneratorCache gcache;
    CellFeatures f = generator_forward(gen, draw_latent(state.rng, gen.latent_dim), c, &gcache);
    auto packed_score = [&](const Eigen::VectorXd& v) {
      CellFeatures pf = clamp_features(unpack_features(v, layout), c);
      double s = 0.0;
      std::vector<Image> imgs = render_cell_images(pf, c, cfg);
      for (const Image& img : imgs) s += critic_forward(critic, img);
      return s / static_cast<double>(imgs.size());
    };
    gen_score_sum += packed_score(gcache.packed);
    Eigen::VectorXd g = estimate_packed_grad(gcache.packed, lo, hi, packed_score,
                                             cfg.spsa_probes, cfg.spsa_step,
                                             state.rng.next());
    // gen_loss = -mean critic score, averaged over the generator batch.
    generator_backward(gen, c, gcache, (-1.0 / cfg.gen_batch) * g);
  }
  state.gen_opt.step(gen.params, cfg.lr_gen);
  out.gen_loss = -gen_score_sum / cfg.gen_batch;
  return out;
}

std::vector<MetricsRow> train_gan(GeneratorNet& gen, CriticNet& critic,
                                  const std::vector<Image>& real_images,
                                  const ConstraintSet& c, const TrainConfig& cfg) {
  cfg.validate();
  require(real_images.size() >= 2, "train_gan: need at least 2 real images");
  GanTrainState state(cfg.seed);

  // Fixed evaluation latents so the FID proxy tracks the same generator slice
  // over the whole run.
  Rng eval_rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
  std::vector<Eigen::VectorXd> eval_latents;
  for (int i = 0; i < cfg.fid_fake_samples; ++i) {
    eval_latents.push_back(draw_latent(eval_rng, cfg.latent_dim));
  }
  Embedder embedder(cfg.fid_dim, cfg.fid_seed, cfg.image_size);

  auto eval_fid = [&]() {
    std::vector<Image> fake;
    for (const auto& z : eval_latents) {
      CellFeatures f = generator_forward(gen, z, c);
      for (auto& img : render_cell_images(f, c, cfg)) fake.push_back(std::move(img));
    }
    return fid_report(real_images, fake, embedder).total;
  };

  // Row 0 is the initialization state; training steps are rows 1..iters.
  std::vector<MetricsRow> rows;
  double fid = eval_fid();
  rows.push_back(MetricsRow{0, 0.0, 0.0, 0.0, fid});
  for (int it = 1; it <= cfg.iters; ++it) {
    StepMetrics m = train_step(gen, critic, real_images, c, cfg, state);
    bool eval_now = (cfg.eval_every > 0 && it % cfg.eval_every == 0) || it == cfg.iters;
    if (eval_now) fid = eval_fid();
    rows.push_back(MetricsRow{it, m.critic_loss, m.gen_loss, m.w_estimate, fid});
  }
  return rows;
}

} // namespace cellsynth
