#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cellsynth/gan.hpp"
#include "cellsynth/pipeline.hpp"

using namespace cellsynth;

namespace {

// Minimal layout for oracle tests where budget size does not matter.
FeaturePreset small_preset() { return preset("table1-5"); }

} // namespace

TEST_CASE("wgan_losses arithmetic cases") {
  auto [cl0, gl0] = wgan_losses({1.0, 2.0}, {1.0, 2.0});
  CHECK(cl0 == 0.0);
  CHECK(gl0 == -1.5);

  auto [cl1, gl1] = wgan_losses({1.0, 1.0}, {0.0, 0.0});
  CHECK(cl1 == -1.0);
  CHECK(gl1 == 0.0);

  CHECK_THROWS_AS(wgan_losses({}, {}), std::invalid_argument);
}

TEST_CASE("wgan critic loss equals the negated mean difference on random lists") {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    int n = 1 + rng.uniform_int(10);
    std::vector<double> fr(static_cast<size_t>(n)), ff(static_cast<size_t>(n));
    double sr = 0.0, sf = 0.0;
    for (int i = 0; i < n; ++i) {
      fr[static_cast<size_t>(i)] = rng.uniform(-5, 5);
      ff[static_cast<size_t>(i)] = rng.uniform(-5, 5);
      sr += fr[static_cast<size_t>(i)];
      sf += ff[static_cast<size_t>(i)];
    }
    auto [cl, gl] = wgan_losses(fr, ff);
    CHECK(std::abs(cl - (-(sr / n - sf / n))) < 1e-12);
    CHECK(std::abs(gl - (-sf / n)) < 1e-12);
  }
}

TEST_CASE("wgan_losses translation covariance") {
  Rng rng(5);
  std::vector<double> fr{0.3, -1.2, 2.0}, ff{1.1, 0.0, -0.4};
  auto [cl, gl] = wgan_losses(fr, ff);
  const double k = 0.77;
  std::vector<double> frk = fr, ffk = ff;
  for (auto& v : frk) v += k;
  for (auto& v : ffk) v += k;
  auto [clk, glk] = wgan_losses(frk, ffk);
  CHECK(std::abs(clk - cl) < 1e-12);
  CHECK(std::abs(glk - (gl - k)) < 1e-12);
  (void)rng;
}

TEST_CASE("weight_clip clamps and is idempotent") {
  nn::NetParams p;
  p.add("W", {2, 2});
  p.value("W").data << 5.0, -0.005, 0.2, -3.0;
  weight_clip(p, 0.01);
  CHECK(p.value("W").data.cwiseAbs().maxCoeff() <= 0.01);
  CHECK(p.value("W").data[0] == 0.01);
  CHECK(p.value("W").data[1] == -0.005);
  Eigen::VectorXd after = p.value("W").data;
  weight_clip(p, 0.01);
  CHECK((p.value("W").data - after).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("exact_w1_1d basics and the exhaustive assignment cross-check") {
  CHECK(exact_w1_1d({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(exact_w1_1d({0}, {3}) == 3.0);
  CHECK(exact_w1_1d({0, 1}, {1, 2}) == 1.0);
  CHECK_THROWS_AS(exact_w1_1d({1}, {1, 2}), std::invalid_argument);

  // Brute-force minimum over permutations for random small multisets.
  Rng rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    int n = 2 + rng.uniform_int(4);
    std::vector<double> a(static_cast<size_t>(n)), b(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      a[static_cast<size_t>(i)] = rng.uniform_int(10);
      b[static_cast<size_t>(i)] = rng.uniform_int(10);
    }
    std::vector<int> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e300;
    do {
      double cost = 0.0;
      for (int i = 0; i < n; ++i) {
        cost += std::abs(a[static_cast<size_t>(i)] -
                         b[static_cast<size_t>(perm[static_cast<size_t>(i)])]);
      }
      best = std::min(best, cost / n);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(exact_w1_1d(a, b) == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("exact_w1_1d is a metric on equal-size multisets") {
  Rng rng(11);
  for (int rep = 0; rep < 60; ++rep) {
    int n = 1 + rng.uniform_int(5);
    auto draw = [&]() {
      std::vector<double> v(static_cast<size_t>(n));
      for (auto& x : v) x = rng.uniform_int(10);
      return v;
    };
    auto a = draw(), b = draw(), c = draw();
    double dab = exact_w1_1d(a, b);
    double dba = exact_w1_1d(b, a);
    double dac = exact_w1_1d(a, c);
    double dcb = exact_w1_1d(c, b);
    CHECK(dab == doctest::Approx(dba).epsilon(1e-12)); // symmetry
    CHECK(dab >= 0.0);
    CHECK(dab <= dac + dcb + 1e-12); // triangle inequality
    std::vector<double> sa = a, sb = b;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    if (sa == sb) CHECK(dab == 0.0); // identity of indiscernibles
    if (dab == 0.0) CHECK(sa == sb);
  }
}

TEST_CASE("SPSA: constant score gives the exact zero gradient") {
  FeaturePreset p = small_preset();
  CellFeatures f = random_features(p.layout, p.constraints, 3);
  auto score = [](const CellFeatures&) { return 4.2; };
  Eigen::VectorXd g = estimate_feature_grad(f, p.constraints, score, 8, 1e-2, 1);
  CHECK(g.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("SPSA: linear score recovered within 10% per coordinate (100 probes)") {
  FeaturePreset p = small_preset();
  CellFeatures f = random_features(p.layout, p.constraints, 5);
  Eigen::VectorXd a(5);
  a << 0.7, -1.3, 0.5, 2.0, -0.8;
  const FeatureLayout layout = p.layout;
  auto score = [&](const CellFeatures& cf) { return a.dot(pack_features(cf)); };
  Eigen::VectorXd g = estimate_feature_grad(f, p.constraints, score, 100, 1e-2, 2);
  for (int i = 0; i < 5; ++i) {
    CHECK(std::abs(g[i] - a[i]) <= 0.1 * std::abs(a[i]));
  }
  (void)layout;
}

TEST_CASE("SPSA: quadratic score gradient within 10% of 2*v0 (100 probes)") {
  FeaturePreset p = small_preset();
  CellFeatures f = random_features(p.layout, p.constraints, 9);
  auto score = [](const CellFeatures& cf) { return pack_features(cf).squaredNorm(); };
  Eigen::VectorXd v0 = pack_features(f);
  Eigen::VectorXd g = estimate_feature_grad(f, p.constraints, score, 100, 1e-2, 3);
  for (int i = 0; i < v0.size(); ++i) {
    double expected = 2.0 * v0[i];
    CHECK(std::abs(g[i] - expected) <= 0.1 * std::max(0.05, std::abs(expected)));
  }
}

TEST_CASE("generator forward: determinism, constraint satisfaction, latent sensitivity") {
  FeaturePreset p = preset("table1-32");
  GeneratorNet gen = GeneratorNet::init(p.layout, 8, 16, 4);
  Rng rng(6);
  Eigen::VectorXd z(8);
  for (int i = 0; i < 8; ++i) z[i] = rng.normal();

  CellFeatures a = generator_forward(gen, z, p.constraints);
  CellFeatures b = generator_forward(gen, z, p.constraints);
  CHECK((pack_features(a) - pack_features(b)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(satisfies_constraints(a, p.constraints));

  int differing = 0;
  for (int rep = 0; rep < 100; ++rep) {
    Eigen::VectorXd z1(8), z2(8);
    for (int i = 0; i < 8; ++i) {
      z1[i] = rng.normal();
      z2[i] = rng.normal();
    }
    CellFeatures f1 = generator_forward(gen, z1, p.constraints);
    CellFeatures f2 = generator_forward(gen, z2, p.constraints);
    if ((pack_features(f1) - pack_features(f2)).cwiseAbs().maxCoeff() > 0.0) ++differing;
  }
  CHECK(differing >= 99);
}

TEST_CASE("generator backward FD check through tails and trunk") {
  FeaturePreset p = small_preset();
  GeneratorNet gen = GeneratorNet::init(p.layout, 4, 6, 11);
  Rng rng(12);
  Eigen::VectorXd z(4);
  for (int i = 0; i < 4; ++i) z[i] = rng.normal();
  Eigen::VectorXd a(5);
  a << 0.3, -0.9, 1.2, 0.4, -0.5;

  auto fn = [&]() {
    gen.params.zero_grads();
    GeneratorCache cache;
    generator_forward(gen, z, p.constraints, &cache);
    double loss = a.dot(cache.packed);
    generator_backward(gen, p.constraints, cache, a);
    return loss;
  };
  CHECK(nn::grad_check(fn, gen.params) < 1e-4);
}

TEST_CASE("critic forward/backward FD check") {
  CriticConfig cc;
  cc.image_size = 16;
  cc.c1 = 3;
  cc.c2 = 4;
  cc.c3 = 4;
  CriticNet critic = CriticNet::init(cc, 13);
  Rng rng(14);
  Image img(16, 16);
  for (auto& v : img.data) v = rng.uniform01();

  auto fn = [&]() {
    critic.params.zero_grads();
    CriticCache cache;
    double s = critic_forward(critic, img, &cache);
    critic_backward(critic, cache, 1.0);
    return s;
  };
  CHECK(nn::grad_check(fn, critic.params) < 1e-4);
}

TEST_CASE("critic output is an unbounded real (no squashing)") {
  CriticConfig cc;
  cc.image_size = 16;
  CriticNet critic = CriticNet::init(cc, 5);
  // Scale the head up: outputs must follow linearly, proving there is no
  // saturating nonlinearity on the output.
  Image img(16, 16);
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = 0.5;
  double s1 = critic_forward(critic, img);
  critic.params.value("head.W").data *= 1000.0;
  critic.params.value("head.b").data *= 1000.0;
  double s2 = critic_forward(critic, img);
  CHECK(std::abs(s2 - 1000.0 * s1) < 1e-6 * std::max(1.0, std::abs(s2)));
}

TEST_CASE("train_step: determinism, clip invariant, constraint-satisfying outputs") {
  FeaturePreset p = small_preset();
  FixtureOptions fo;
  fo.per_class = 3;
  fo.image_size = 16;
  fo.seed = 21;
  FixtureDataset ds = make_fixture_dataset(p.layout, p.constraints, fo);

  TrainConfig cfg;
  cfg.batch_m = 2;
  cfg.gen_batch = 1;
  cfg.n_critic = 2;
  cfg.iters = 2;
  cfg.image_size = 16;
  cfg.subdivisions = 1;
  cfg.spsa_probes = 2;
  cfg.thetas = {0.0};
  cfg.phis = {0.0};
  cfg.clip_c = 0.02;
  cfg.seed = 33;

  auto run_once = [&]() {
    GeneratorNet gen = GeneratorNet::init(p.layout, cfg.latent_dim, cfg.hidden_dim, 1);
    CriticConfig cc;
    cc.image_size = 16;
    cc.c1 = 3;
    cc.c2 = 4;
    cc.c3 = 4;
    CriticNet critic = CriticNet::init(cc, 2);
    GanTrainState state(cfg.seed);
    std::vector<StepMetrics> ms;
    for (int i = 0; i < cfg.iters; ++i) {
      ms.push_back(train_step(gen, critic, ds.images, p.constraints, cfg, state));
      // Weight clip invariant after every step.
      for (const auto& name : critic.params.names()) {
        CHECK(critic.params.value(name).data.cwiseAbs().maxCoeff() <= cfg.clip_c + 1e-15);
      }
      // Generator output still satisfies the constraints.
      Eigen::VectorXd z(cfg.latent_dim);
      for (int k = 0; k < cfg.latent_dim; ++k) z[k] = 0.1 * k;
      CHECK(satisfies_constraints(generator_forward(gen, z, p.constraints), p.constraints));
    }
    return ms;
  };
  auto m1 = run_once();
  auto m2 = run_once();
  REQUIRE(m1.size() == m2.size());
  for (size_t i = 0; i < m1.size(); ++i) {
    CHECK(m1[i].critic_loss == m2[i].critic_loss);
    CHECK(m1[i].gen_loss == m2[i].gen_loss);
    CHECK(m1[i].w_estimate == m2[i].w_estimate);
  }
}

TEST_CASE("critic-only training reduces critic loss on fixed batches") {
  // Two fixed 1-D-embedded distributions rendered as flat gray images: the
  // critic's mean-difference estimate must grow (toward the Lipschitz-bounded
  // Wasserstein distance) as it trains.
  CriticConfig cc;
  cc.image_size = 16;
  cc.c1 = 3;
  cc.c2 = 4;
  cc.c3 = 4;

  auto gray = [&](double v) {
    Image img(16, 16);
    for (int y = 0; y < 16; ++y) {
      for (int x = 0; x < 16; ++x) {
        img.at(x, y, 0) = img.at(x, y, 1) = img.at(x, y, 2) = v;
        img.at(x, y, 3) = 1.0;
      }
    }
    return img;
  };
  std::vector<double> xs_real{0.75, 0.8, 0.85, 0.9};
  std::vector<double> xs_fake{0.2, 0.25, 0.3, 0.35};
  std::vector<Image> real, fake;
  for (double v : xs_real) real.push_back(gray(v));
  for (double v : xs_fake) fake.push_back(gray(v));

  int successes = 0;
  double w1 = exact_w1_1d(xs_real, xs_fake);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CriticNet critic = CriticNet::init(cc, seed);
    nn::Optimizer opt(nn::OptimizerKind::RmsProp);
    const double clip = 0.05;
    weight_clip(critic.params, clip);
    auto mean_diff = [&]() {
      double mr = 0, mf = 0;
      for (const auto& img : real) mr += critic_forward(critic, img);
      for (const auto& img : fake) mf += critic_forward(critic, img);
      return mr / real.size() - mf / fake.size();
    };
    double before = mean_diff();
    for (int it = 0; it < 50; ++it) {
      critic.params.zero_grads();
      for (const auto& img : real) {
        CriticCache cache;
        critic_forward(critic, img, &cache);
        critic_backward(critic, cache, -1.0 / real.size());
      }
      for (const auto& img : fake) {
        CriticCache cache;
        critic_forward(critic, img, &cache);
        critic_backward(critic, cache, 1.0 / fake.size());
      }
      opt.step(critic.params, 1e-3);
      weight_clip(critic.params, clip);
    }
    double after = mean_diff();
    if (after > before) ++successes;
    // Crude Lipschitz budget: product of per-layer L1 bounds under clipping.
    double lip = 1.0;
    lip *= clip * 9 * 4;   // conv1
    lip *= clip * 9 * cc.c1;
    lip *= clip * 9 * cc.c2;
    lip *= clip * cc.c3 * 5 * 5;
    CHECK(after <= w1 * lip);
  }
  CHECK(successes >= 4);
}
