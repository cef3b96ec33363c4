#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>

#include "cellsynth/pipeline.hpp"
#include "cellsynth/topo.hpp"

using namespace cellsynth;

namespace {

TopoConfig tiny_config() {
  TopoConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 8;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.blocks = 1;
  cfg.mlp_hidden = 12;
  cfg.slots = 2;
  cfg.n_min = 2;
  cfg.lambda = 1e-3;
  cfg.thetas = {0.0, 1.5707963267948966};
  cfg.phis = {0.0, 1.5707963267948966};
  cfg.subdivisions = 1;
  cfg.layout = preset("table1-5").layout;
  return cfg;
}

Image random_image(int size, Rng& rng) {
  Image img(size, size);
  for (auto& v : img.data) v = rng.uniform01();
  return img;
}

} // namespace

TEST_CASE("patch_embed token count and divisibility error") {
  TopoConfig cfg;
  cfg.image_size = 40;
  cfg.patch_size = 8;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.blocks = 1;
  cfg.mlp_hidden = 12;
  cfg.layout = preset("table1-5").layout;
  TopoTransformer t = TopoTransformer::init(cfg, 1);
  Rng rng(2);
  Image img = random_image(40, rng);
  nn::Matrix tokens = patch_embed(img, t);
  CHECK(tokens.rows() == 25);
  CHECK(tokens.cols() == 8);

  Image odd(24, 40);
  CHECK_THROWS_AS(patch_embed(odd, t), std::invalid_argument);
}

TEST_CASE("patch_embed with zero weights returns the position embeddings") {
  TopoConfig cfg = tiny_config();
  TopoTransformer t = TopoTransformer::init(cfg, 3);
  t.params.value("embed.W").data.setZero();
  t.params.value("embed.b").data.setZero();
  Image zero(cfg.image_size, cfg.image_size);
  nn::Matrix tokens = patch_embed(zero, t);
  CHECK((tokens - t.params.value("pos").mat()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("swapping two patches changes exactly those two tokens") {
  TopoConfig cfg = tiny_config();
  TopoTransformer t = TopoTransformer::init(cfg, 4);
  Rng rng(5);
  Image img = random_image(cfg.image_size, rng);
  // Swap patch (0,0) and patch (0,1): columns 0..7 and 8..15 of rows 0..7.
  Image swapped = img;
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      for (int ch = 0; ch < 4; ++ch) {
        swapped.at(x, y, ch) = img.at(x + 8, y, ch);
        swapped.at(x + 8, y, ch) = img.at(x, y, ch);
      }
    }
  }
  nn::Matrix ta = patch_embed(img, t);
  nn::Matrix tb = patch_embed(swapped, t);
  const nn::Matrix& pos = t.params.value("pos").mat();
  // Patch components swap; position components stay attached to the slots.
  CHECK(((ta.row(0) - pos.row(0)) - (tb.row(1) - pos.row(1))).cwiseAbs().maxCoeff() <
        1e-12);
  CHECK(((ta.row(1) - pos.row(1)) - (tb.row(0) - pos.row(0))).cwiseAbs().maxCoeff() <
        1e-12);
  for (int tok = 2; tok < ta.rows(); ++tok) {
    CHECK((ta.row(tok) - tb.row(tok)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("encode: residual identity with zeroed projections, and determinism") {
  TopoConfig cfg = tiny_config();
  TopoTransformer t = TopoTransformer::init(cfg, 6);
  for (int b = 0; b < cfg.blocks; ++b) {
    t.params.value("enc.b" + std::to_string(b) + ".attn.Wo").data.setZero();
    t.params.value("enc.b" + std::to_string(b) + ".mlp.W2").data.setZero();
    t.params.value("enc.b" + std::to_string(b) + ".mlp.b2").data.setZero();
  }
  Rng rng(7);
  Image img = random_image(cfg.image_size, rng);
  nn::Matrix embedded = patch_embed(img, t);
  EncodeResult r1 = encode(img, t);
  EncodeResult r2 = encode(img, t);
  CHECK((r1.latent - embedded).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((r1.latent - r2.latent).cwiseAbs().maxCoeff() == 0.0);
  CHECK(r1.hidden.size() == static_cast<size_t>(cfg.blocks));
}

TEST_CASE("permuting input patches changes the latent") {
  TopoConfig cfg = tiny_config();
  TopoTransformer t = TopoTransformer::init(cfg, 8);
  Rng rng(9);
  Image img = random_image(cfg.image_size, rng);
  EncodeResult base = encode(img, t);
  int changed = 0;
  for (int rep = 0; rep < 20; ++rep) {
    // Random patch permutation of the 2x2 grid.
    std::vector<int> perm{0, 1, 2, 3};
    for (int i = 3; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
    if (perm == std::vector<int>{0, 1, 2, 3}) {
      ++changed; // identity permutation keeps the latent; count as consistent
      continue;
    }
    Image shuffled(cfg.image_size, cfg.image_size);
    for (int tok = 0; tok < 4; ++tok) {
      int src = perm[static_cast<size_t>(tok)];
      int dx = (tok % 2) * 8, dy = (tok / 2) * 8;
      int sx = (src % 2) * 8, sy = (src / 2) * 8;
      for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
          for (int ch = 0; ch < 4; ++ch) {
            shuffled.at(dx + x, dy + y, ch) = img.at(sx + x, sy + y, ch);
          }
        }
      }
    }
    EncodeResult r = encode(shuffled, t);
    if ((r.latent - base.latent).cwiseAbs().maxCoeff() > 1e-9) ++changed;
  }
  CHECK(changed == 20);
}

TEST_CASE("decode_features: determinism, constraints, and the frozen contract") {
  TopoConfig cfg = tiny_config();
  TopoTransformer t = TopoTransformer::init(cfg, 10);
  FeaturePreset p = preset("table1-5");
  Rng rng(11);
  Image img = random_image(cfg.image_size, rng);
  EncodeResult r = encode(img, t);

  ClusterFeatures g1 = decode_features(r.latent, t, p.constraints);
  ClusterFeatures g2 = decode_features(r.latent, t, p.constraints);
  REQUIRE(g1.count() == cfg.slots);
  CHECK((pack_cluster_features(g1) - pack_cluster_features(g2)).cwiseAbs().maxCoeff() ==
        0.0);
  for (const auto& cell : g1.cells) CHECK(satisfies_constraints(cell, p.constraints));

  CHECK(t.params.frozen("dec.s0.tail0.W"));
  CHECK(!t.params.frozen("embed.W"));
}

TEST_CASE("pair loss and min-n selection arithmetic") {
  CHECK(sum_min_n({0.5, 0.2, 0.9}, 2) == doctest::Approx(0.7));
  CHECK(sum_min_n({0.5, 0.2, 0.9}, 3) == doctest::Approx(1.6));
  CHECK_THROWS_AS(sum_min_n({}, 1), std::invalid_argument);
  CHECK_THROWS_AS(sum_min_n({0.1}, 2), std::invalid_argument);

  Image a(8, 8), b(8, 8);
  // Identical images: loss 0.
  Rng rng(12);
  for (size_t i = 0; i < a.data.size(); i += 4) {
    a.data[i] = rng.uniform01();
    a.data[i + 3] = 1.0;
  }
  b = a;
  CHECK(pair_reconstruction_loss(a, b) == 0.0);

  std::vector<AngleImage> projections;
  projections.push_back({0.0, 0.0, b});
  CHECK(min_n_loss(a, projections, 1) == 0.0);
}

TEST_CASE("min_n_loss monotone in n, order-invariant, full-sum identity") {
  TopoConfig cfg = tiny_config();
  Rng rng(13);
  Image x = random_image(cfg.image_size, rng);
  std::vector<AngleImage> projections;
  for (int i = 0; i < 6; ++i) {
    projections.push_back({0.1 * i, 0.2 * i, random_image(cfg.image_size, rng)});
  }
  double prev = 0.0;
  for (int n = 1; n <= 6; ++n) {
    double v = min_n_loss(x, projections, n);
    CHECK(v >= prev - 1e-15);
    prev = v;
  }
  double full = 0.0;
  for (const auto& p : projections) full += pair_reconstruction_loss(x, p.image);
  CHECK(min_n_loss(x, projections, 6) == doctest::Approx(full).epsilon(1e-12));

  std::vector<AngleImage> shuffled = projections;
  std::swap(shuffled[0], shuffled[4]);
  std::swap(shuffled[2], shuffled[5]);
  CHECK(min_n_loss(x, shuffled, 3) == doctest::Approx(min_n_loss(x, projections, 3)));
}

TEST_CASE("contractive penalty: lambda scaling and the linear-layer identity") {
  TopoConfig cfg = tiny_config();
  // Designated layer = patch embedding over a single whole-image patch: a pure
  // linear map of the input, so the penalty must equal lambda * ||W||_F^2.
  cfg.patch_size = cfg.image_size;
  cfg.designated = ContractiveLayer::PatchEmbed;
  cfg.lambda = 0.37;
  TopoTransformer t = TopoTransformer::init(cfg, 14);
  Rng rng(15);
  Image x = random_image(cfg.image_size, rng);
  double wf2 = t.params.value("embed.W").data.squaredNorm();
  CHECK(contractive_penalty(t, x) == doctest::Approx(cfg.lambda * wf2).epsilon(1e-12));

  TopoTransformer t0 = t;
  t0.cfg.lambda = 0.0;
  CHECK(contractive_penalty(t0, x) == 0.0);
  t0.cfg.lambda = 2 * cfg.lambda;
  CHECK(contractive_penalty(t0, x) ==
        doctest::Approx(2.0 * contractive_penalty(t, x)).epsilon(1e-12));
}

TEST_CASE("contractive penalty matches the finite-difference Jacobian") {
  TopoConfig cfg = tiny_config();
  cfg.lambda = 1.0;
  cfg.designated = ContractiveLayer::PooledEncoder;
  TopoTransformer t = TopoTransformer::init(cfg, 16);
  Rng rng(17);
  Image x = random_image(cfg.image_size, rng);

  double analytic = contractive_penalty(t, x);

  const double eps = 1e-5;
  double fd_total = 0.0;
  Eigen::VectorXd a0 = designated_activation(t, x);
  for (size_t j = 0; j < x.data.size(); ++j) {
    Image xp = x, xm = x;
    xp.data[j] += eps;
    xm.data[j] -= eps;
    Eigen::VectorXd col =
        (designated_activation(t, xp) - designated_activation(t, xm)) / (2.0 * eps);
    fd_total += col.squaredNorm();
  }
  CHECK(std::abs(analytic - cfg.lambda * fd_total) /
            std::max(1e-12, std::abs(analytic)) <
        1e-4);
  (void)a0;
}

TEST_CASE("train_transformer: frozen decoder bytes, finite losses, determinism") {
  TopoConfig cfg = tiny_config();
  FeaturePreset p = preset("table1-5");
  std::vector<Image> data = make_fixture_cluster_images(cfg, p.constraints, 3, 18);

  auto run = [&]() {
    TopoTransformer t = TopoTransformer::init(cfg, 19);
    Eigen::VectorXd frozen_before = t.params.value("dec.s0.tail0.W").data;
    TopoTrainConfig ttc;
    ttc.iters = 3;
    ttc.spsa_probes = 2;
    ttc.seed = 20;
    std::vector<TopoMetricsRow> rows = train_transformer(t, data, p.constraints, ttc);
    for (const auto& r : rows) {
      CHECK(std::isfinite(r.total));
      CHECK(r.total >= 0.0);
      CHECK(r.penalty >= 0.0);
    }
    CHECK(std::memcmp(frozen_before.data(), t.params.value("dec.s0.tail0.W").data.data(),
                      sizeof(double) * static_cast<size_t>(frozen_before.size())) == 0);
    return rows;
  };
  auto r1 = run();
  auto r2 = run();
  REQUIRE(r1.size() == r2.size());
  for (size_t i = 0; i < r1.size(); ++i) {
    CHECK(r1[i].total == r2[i].total);
  }
}

TEST_CASE("decoder initialization from a generator checkpoint") {
  FeaturePreset p = preset("table1-5");
  GeneratorNet gen = GeneratorNet::init(p.layout, 4, 8, 21);
  auto path = std::filesystem::temp_directory_path() / "cellsynth_gen_for_topo.ckpt";
  nn::save_checkpoint(gen.params, path.string(), R"({"kind":"generator"})");

  TopoConfig cfg = tiny_config();
  cfg.d_model = 8; // must match the generator hidden width
  TopoTransformer t = TopoTransformer::init_with_decoder(cfg, 22, path.string());
  for (int s = 0; s < cfg.slots; ++s) {
    for (int k = 0; k < cfg.layout.tails; ++k) {
      std::string dst = "dec.s" + std::to_string(s) + ".tail" + std::to_string(k);
      CHECK((t.params.value(dst + ".W").data -
             gen.params.value("tail" + std::to_string(k) + ".W").data)
                .cwiseAbs()
                .maxCoeff() == 0.0);
    }
  }
  std::filesystem::remove(path);
}
