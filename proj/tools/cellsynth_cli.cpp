// Command-line front end: synthesis, rendering, training, evaluation and
// experiment orchestration.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cellsynth/eval.hpp"
#include "cellsynth/features.hpp"
#include "cellsynth/gan.hpp"
#include "cellsynth/mesh.hpp"
#include "cellsynth/pipeline.hpp"
#include "cellsynth/png_io.hpp"
#include "cellsynth/render.hpp"
#include "cellsynth/topo.hpp"

namespace fs = std::filesystem;
using namespace cellsynth;

namespace {

std::vector<double> parse_angles_deg(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stod(tok) * M_PI / 180.0);
  }
  if (out.empty()) throw std::invalid_argument("empty angle list: " + csv);
  return out;
}

FeaturePreset preset_by_budget(int features) {
  return preset("table1-" + std::to_string(features));
}

std::vector<Image> load_pngs(const std::string& dir) {
  std::vector<fs::path> paths;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  std::vector<Image> out;
  for (const auto& p : paths) out.push_back(read_png(p.string()));
  return out;
}

// Loads images plus class labels inferred from normal/ and cancer/ path parts.
void load_labeled_pngs(const std::string& dir, std::vector<Image>& images,
                       std::vector<ClassLabel>& labels, bool& any_labels) {
  std::vector<fs::path> paths;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  any_labels = false;
  for (const auto& p : paths) {
    images.push_back(read_png(p.string()));
    ClassLabel label = ClassLabel::Normal;
    for (const auto& part : p) {
      if (part == "cancer") {
        label = ClassLabel::Cancer;
        any_labels = true;
      } else if (part == "normal") {
        any_labels = true;
      }
    }
    labels.push_back(label);
  }
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"cellsynth: synthetic 3-D cell models, rendering, training, evaluation"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  std::string out_dir = ".";
  std::string config_path;
  app.add_option("--seed", seed, "global random seed")->capture_default_str();
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--config", config_path, "JSON config file (run-experiment)");

  // ---- synth-cell ----
  auto* synth_cell = app.add_subcommand("synth-cell", "synthesize one cell mesh");
  std::string sc_preset = "table1-32";
  std::string sc_obj = "cell.obj";
  std::string sc_png;
  synth_cell->add_option("--preset", sc_preset, "feature preset")->capture_default_str();
  synth_cell->add_option("--obj", sc_obj, "output OBJ path")->capture_default_str();
  synth_cell->add_option("--png", sc_png, "also write a projection PNG here");

  // ---- synth-cluster ----
  auto* synth_cluster = app.add_subcommand("synth-cluster", "synthesize a cell cluster");
  std::string cl_preset = "table1-32";
  int cl_count = 3;
  std::string cl_obj = "cluster.obj";
  synth_cluster->add_option("--preset", cl_preset, "feature preset")->capture_default_str();
  synth_cluster->add_option("--count", cl_count, "cells in the cluster")->capture_default_str();
  synth_cluster->add_option("--obj", cl_obj, "output OBJ path")->capture_default_str();

  // ---- render ----
  auto* render_cmd = app.add_subcommand("render", "render projections or cross-sections");
  std::string r_mode = "projection";
  std::string r_thetas = "0,90";
  std::string r_phis = "0,90";
  int r_size = 128;
  double r_extent = 4.0;
  std::string r_obj;
  std::string r_preset = "table1-32";
  render_cmd->add_option("--mode", r_mode, "projection|cross-section")->capture_default_str();
  render_cmd->add_option("--thetas", r_thetas, "polar angles, degrees, comma separated")
      ->capture_default_str();
  render_cmd->add_option("--phis", r_phis, "azimuth angles, degrees")->capture_default_str();
  render_cmd->add_option("--size", r_size, "image size in px")->capture_default_str();
  render_cmd->add_option("--extent", r_extent, "world units per image edge")
      ->capture_default_str();
  render_cmd->add_option("--obj", r_obj, "scene OBJ to render (default: synthesize)");
  render_cmd->add_option("--preset", r_preset, "preset when synthesizing")->capture_default_str();

  // ---- train-gan ----
  auto* train_gan_cmd = app.add_subcommand("train-gan", "train the single-cell WGAN");
  std::string tg_class = "normal";
  int tg_features = 32;
  int tg_tails = 0;
  int tg_iters = 100;
  std::string tg_data;
  train_gan_cmd->add_option("--class", tg_class, "normal|cancer")->capture_default_str();
  train_gan_cmd->add_option("--features", tg_features, "5|32|1165|4129")->capture_default_str();
  train_gan_cmd->add_option("--tails", tg_tails, "override tail count (0 = preset value)");
  train_gan_cmd->add_option("--iters", tg_iters, "training iterations")->capture_default_str();
  train_gan_cmd->add_option("--data", tg_data,
                            "PNG directory of real patches (default: bundled fixture)");

  // ---- train-topo ----
  auto* train_topo_cmd = app.add_subcommand("train-topo", "train the topology transformer");
  std::string tt_grid = "0,45,90,135:0,60,120";
  int tt_min_n = 3;
  double tt_lambda = 1e-4;
  std::string tt_decoder;
  int tt_iters = 200;
  int tt_images = 10;
  std::string tt_data;
  train_topo_cmd->add_option("--grid", tt_grid, "thetas:phis in degrees")->capture_default_str();
  train_topo_cmd->add_option("--min-n", tt_min_n, "n smallest pair losses summed")
      ->capture_default_str();
  train_topo_cmd->add_option("--lambda", tt_lambda, "contractive weight")->capture_default_str();
  train_topo_cmd->add_option("--decoder-ckpt", tt_decoder, "generator checkpoint for the decoder");
  train_topo_cmd->add_option("--iters", tt_iters, "training iterations")->capture_default_str();
  train_topo_cmd->add_option("--images", tt_images, "fixture images when no --data")
      ->capture_default_str();
  train_topo_cmd->add_option("--data", tt_data, "PNG directory of cluster patches");

  // ---- eval-fid ----
  auto* eval_fid_cmd = app.add_subcommand("eval-fid", "Frechet distance between image sets");
  std::string ef_real, ef_fake;
  int ef_dim = 64;
  eval_fid_cmd->add_option("--real", ef_real, "directory of real PNGs")->required();
  eval_fid_cmd->add_option("--fake", ef_fake, "directory of generated PNGs")->required();
  eval_fid_cmd->add_option("--dim", ef_dim, "embedding dimension")->capture_default_str();

  // ---- export-dataset ----
  auto* export_cmd = app.add_subcommand("export-dataset", "segment patches into a dataset");
  std::string ed_source;
  std::string ed_class = "normal";
  int ed_patch = 64;
  int ed_stride = 64;
  bool ed_fixture = false;
  int ed_per_class = 16;
  std::string ed_preset = "table1-32";
  export_cmd->add_option("--source", ed_source, "source image PNG to segment");
  export_cmd->add_option("--class", ed_class, "class label of the source")->capture_default_str();
  export_cmd->add_option("--patch", ed_patch, "patch size")->capture_default_str();
  export_cmd->add_option("--stride", ed_stride, "patch stride")->capture_default_str();
  export_cmd->add_flag("--synthetic-fixture", ed_fixture, "emit the bundled fixture dataset");
  export_cmd->add_option("--per-class", ed_per_class, "fixture cells per class")
      ->capture_default_str();
  export_cmd->add_option("--preset", ed_preset, "preset for the fixture")->capture_default_str();

  // ---- run-experiment ----
  auto* run_cmd = app.add_subcommand("run-experiment", "orchestrate train + eval from a config");

  // Let global flags (--seed/--out/--config) appear after the subcommand too.
  for (CLI::App* sc : app.get_subcommands([](const CLI::App*) { return true; })) {
    sc->fallthrough();
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cell) {
      FeaturePreset p = preset(sc_preset);
      CellFeatures f = random_features(p.layout, p.constraints, seed);
      Scene scene;
      scene.meshes.push_back(
          PlacedMesh{build_cell(f, p.constraints), Eigen::Isometry3d::Identity()});
      export_obj(scene, sc_obj);
      std::cout << "wrote " << sc_obj << "\n";
      if (!sc_png.empty()) {
        write_png(project(scene, 0.0, 0.0, 256, 4.0), sc_png);
        std::cout << "wrote " << sc_png << "\n";
      }
    } else if (*synth_cluster) {
      FeaturePreset p = preset(cl_preset);
      ClusterFeatures g = random_cluster_features(p.layout, p.constraints, cl_count, seed);
      Scene scene = assemble_cluster(g, p.constraints);
      export_obj(scene, cl_obj);
      std::cout << "wrote " << cl_obj << " (" << scene.meshes.size() << " cells)\n";
    } else if (*render_cmd) {
      Scene scene;
      if (!r_obj.empty()) {
        scene = import_obj(r_obj);
      } else {
        FeaturePreset p = preset(r_preset);
        CellFeatures f = random_features(p.layout, p.constraints, seed);
        scene.meshes.push_back(
            PlacedMesh{build_cell(f, p.constraints), Eigen::Isometry3d::Identity()});
      }
      ProjectionSpec spec;
      spec.thetas = parse_angles_deg(r_thetas);
      spec.phis = parse_angles_deg(r_phis);
      spec.size = r_size;
      spec.world_extent = r_extent;
      if (r_mode == "projection") {
        spec.mode = RenderMode::Projection;
      } else if (r_mode == "cross-section") {
        spec.mode = RenderMode::CrossSection;
      } else {
        throw std::invalid_argument("--mode must be projection or cross-section");
      }
      fs::create_directories(out_dir);
      int idx = 0;
      for (const auto& ai : render_batch(scene, spec)) {
        std::ostringstream name;
        name << r_mode << "_" << idx++ << ".png";
        write_png(ai.image, (fs::path(out_dir) / name.str()).string());
      }
      std::cout << "wrote " << idx << " images to " << out_dir << "\n";
    } else if (*train_gan_cmd) {
      FeaturePreset p = preset_by_budget(tg_features);
      if (tg_tails > 0 && tg_tails != p.layout.tails) {
        // Re-split the packed vector into tg_tails near-equal contiguous spans.
        p.layout.tails = tg_tails;
        p.layout.tail_sizes.assign(static_cast<size_t>(tg_tails),
                                   p.layout.total_features / tg_tails);
        for (int i = 0; i < p.layout.total_features % tg_tails; ++i) {
          ++p.layout.tail_sizes[static_cast<size_t>(i)];
        }
        p.layout.validate();
      }
      TrainConfig cfg;
      cfg.cls = class_label_from_name(tg_class);
      cfg.seed = seed;
      cfg.iters = tg_iters;
      std::vector<Image> reals;
      if (!tg_data.empty()) {
        reals = load_pngs(tg_data);
      } else {
        FixtureOptions fo;
        fo.seed = seed ^ 0xF1D0ull;
        fo.image_size = cfg.image_size;
        FixtureDataset ds = make_fixture_dataset(p.layout, p.constraints, fo);
        for (size_t i = 0; i < ds.images.size(); ++i) {
          if (ds.labels[i] == cfg.cls) reals.push_back(std::move(ds.images[i]));
        }
      }
      if (reals.empty()) throw std::runtime_error("train-gan: no real images");
      GeneratorNet gen = GeneratorNet::init(p.layout, cfg.latent_dim, cfg.hidden_dim,
                                            seed ^ 0xA5A5A5A5ull);
      CriticConfig cc;
      cc.image_size = cfg.image_size;
      CriticNet critic = CriticNet::init(cc, seed ^ 0x5A5A5A5Aull);
      std::vector<MetricsRow> rows = train_gan(gen, critic, reals, p.constraints, cfg);
      fs::create_directories(out_dir);
      write_metrics_csv(rows, (fs::path(out_dir) / "metrics.csv").string());
      nn::save_checkpoint(gen.params, (fs::path(out_dir) / "gen.ckpt").string(),
                          nlohmann::json{{"kind", "generator"},
                                         {"preset", p.name},
                                         {"latent_dim", gen.latent_dim},
                                         {"hidden_dim", gen.hidden_dim}}
                              .dump());
      nn::save_checkpoint(critic.params, (fs::path(out_dir) / "critic.ckpt").string(),
                          nlohmann::json{{"kind", "critic"}}.dump());
      std::cout << "final fid_proxy " << rows.back().fid_proxy << "; metrics in "
                << out_dir << "/metrics.csv\n";
    } else if (*train_topo_cmd) {
      FeaturePreset p = preset("table1-32");
      TopoConfig cfg;
      cfg.layout = p.layout;
      if (!tt_decoder.empty()) {
        // The frozen decoder tails plug into the pooled representation, so the
        // encoder width must match the generator hidden width.
        nlohmann::json meta =
            nlohmann::json::parse(nn::load_checkpoint(tt_decoder).meta_json);
        if (meta.contains("hidden_dim")) cfg.d_model = meta["hidden_dim"].get<int>();
        if (meta.contains("preset")) p = preset(meta["preset"].get<std::string>());
        cfg.layout = p.layout;
      }
      auto colon = tt_grid.find(':');
      if (colon == std::string::npos) {
        throw std::invalid_argument("--grid must be thetas:phis");
      }
      cfg.thetas = parse_angles_deg(tt_grid.substr(0, colon));
      cfg.phis = parse_angles_deg(tt_grid.substr(colon + 1));
      cfg.n_min = tt_min_n;
      cfg.lambda = tt_lambda;
      std::vector<Image> data;
      if (!tt_data.empty()) {
        data = load_pngs(tt_data);
        for (const auto& img : data) {
          if (img.width != cfg.image_size || img.height != cfg.image_size) {
            throw std::runtime_error("train-topo: images must be " +
                                     std::to_string(cfg.image_size) + "px square");
          }
        }
      } else {
        data = make_fixture_cluster_images(cfg, p.constraints, tt_images, seed ^ 0x7070ull);
      }
      TopoTransformer topo =
          tt_decoder.empty() ? TopoTransformer::init(cfg, seed ^ 0x1111ull)
                             : TopoTransformer::init_with_decoder(cfg, seed ^ 0x1111ull,
                                                                  tt_decoder);
      TopoTrainConfig ttc;
      ttc.iters = tt_iters;
      ttc.seed = seed;
      std::vector<TopoMetricsRow> rows = train_transformer(topo, data, p.constraints, ttc);
      fs::create_directories(out_dir);
      std::ofstream out(fs::path(out_dir) / "metrics_topo.csv", std::ios::binary);
      out << "iter,total,recon,penalty\n";
      for (const auto& r : rows) {
        out << r.iter << "," << format_double(r.total) << "," << format_double(r.recon)
            << "," << format_double(r.penalty) << "\n";
      }
      nn::save_checkpoint(topo.params, (fs::path(out_dir) / "topo.ckpt").string(),
                          nlohmann::json{{"kind", "topo"}}.dump());
      std::cout << "final total loss " << rows.back().total << "; metrics in " << out_dir
                << "/metrics_topo.csv\n";
    } else if (*eval_fid_cmd) {
      std::vector<Image> real, fake;
      std::vector<ClassLabel> rl, fl;
      bool real_labeled = false, fake_labeled = false;
      load_labeled_pngs(ef_real, real, rl, real_labeled);
      load_labeled_pngs(ef_fake, fake, fl, fake_labeled);
      if (real.empty() || fake.empty()) {
        throw std::runtime_error("eval-fid: empty image directory");
      }
      Embedder e(ef_dim, seed, real[0].width);
      bool labeled = real_labeled && fake_labeled;
      FidReport r = fid_report(real, fake, e, labeled ? &rl : nullptr,
                               labeled ? &fl : nullptr);
      nlohmann::json j;
      j["total"] = r.total;
      j["regular"] = r.regular ? nlohmann::json(*r.regular) : nlohmann::json();
      j["cancer"] = r.cancer ? nlohmann::json(*r.cancer) : nlohmann::json();
      j["n_real"] = r.n_real;
      j["n_fake"] = r.n_fake;
      j["seed"] = r.seed;
      std::cout << j.dump(2) << "\n";
    } else if (*export_cmd) {
      if (ed_fixture) {
        FeaturePreset p = preset(ed_preset);
        FixtureOptions fo;
        fo.per_class = ed_per_class;
        fo.seed = seed;
        FixtureDataset ds = make_fixture_dataset(p.layout, p.constraints, fo);
        std::vector<PatchRecord> recs;
        for (size_t i = 0; i < ds.images.size(); ++i) {
          PatchRecord r;
          r.image = std::move(ds.images[i]);
          r.label = ds.labels[i];
          r.source_id = "fixture";
          recs.push_back(std::move(r));
        }
        DatasetManifest m = export_dataset(recs, out_dir, ed_preset, {seed});
        std::cout << "wrote " << m.records.size() << " fixture patches to " << out_dir
                  << "\n";
      } else {
        if (ed_source.empty()) {
          throw std::invalid_argument("export-dataset: --source or --synthetic-fixture required");
        }
        Image src = read_png(ed_source);
        ClassLabel label = class_label_from_name(ed_class);
        std::string source_id = fs::path(ed_source).stem().string();
        std::vector<PatchRecord> recs;
        for (const Image& patch : extract_patches(src, ed_patch, ed_stride)) {
          for (auto& rec : segment_blobs(patch, label, source_id)) {
            recs.push_back(std::move(rec));
          }
        }
        DatasetManifest m = export_dataset(recs, out_dir, ed_preset, {seed});
        std::cout << "wrote " << m.records.size() << " blobs to " << out_dir << "\n";
      }
    } else if (*run_cmd) {
      if (config_path.empty()) {
        throw std::invalid_argument("run-experiment: --config is required");
      }
      ExperimentConfig cfg = load_experiment_config(config_path);
      if (app.count("--seed") > 0) cfg.seed = seed;
      ExperimentReport report = run_experiment(cfg, out_dir);
      std::cout << "run dir: " << report.run_dir << "\n";
      for (const auto& [cls, fid] : report.final_fid) {
        std::cout << cls << " final fid_proxy " << fid << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
