#include "cellsynth/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "cellsynth/mesh.hpp"
#include "cellsynth/png_io.hpp"
#include "cellsynth/render.hpp"

namespace fs = std::filesystem;

namespace cellsynth {

namespace {

using nlohmann::json;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

} // namespace

std::string class_label_name(ClassLabel c) {
  return c == ClassLabel::Normal ? "normal" : "cancer";
}

ClassLabel class_label_from_name(const std::string& name) {
  if (name == "normal") return ClassLabel::Normal;
  if (name == "cancer") return ClassLabel::Cancer;
  throw std::invalid_argument("unknown class label: " + name);
}

std::vector<Image> extract_patches(const Image& image, int size, int stride) {
  require(size >= 1 && stride >= 1, "extract_patches: size and stride must be >= 1");
  require(size <= image.width && size <= image.height,
          "extract_patches: patch size exceeds image dimensions");
  std::vector<Image> out;
  for (int y = 0; y + size <= image.height; y += stride) {
    for (int x = 0; x + size <= image.width; x += stride) {
      Image p(size, size);
      for (int yy = 0; yy < size; ++yy) {
        for (int xx = 0; xx < size; ++xx) {
          for (int ch = 0; ch < 4; ++ch) p.at(xx, yy, ch) = image.at(x + xx, y + yy, ch);
        }
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::vector<PatchRecord> segment_blobs(const Image& patch, ClassLabel label,
                                       const std::string& source_id,
                                       const SegmentOptions& opts) {
  const int w = patch.width, h = patch.height;
  std::vector<int> comp(static_cast<size_t>(w) * h, 0);
  auto is_blob = [&](int x, int y) {
    double r = patch.at(x, y, 0), g = patch.at(x, y, 1), b = patch.at(x, y, 2);
    return b - 0.5 * (r + g) > opts.tau;
  };

  int n_comp = 0;
  std::vector<int> stack;
  std::vector<std::vector<int>> members;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      size_t idx = static_cast<size_t>(y) * w + x;
      if (comp[idx] != 0 || !is_blob(x, y)) continue;
      ++n_comp;
      members.emplace_back();
      comp[idx] = n_comp;
      stack.push_back(static_cast<int>(idx));
      while (!stack.empty()) {
        int cur = stack.back();
        stack.pop_back();
        members.back().push_back(cur);
        int cx = cur % w, cy = cur / w;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0) continue;
            int nx = cx + dx, ny = cy + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            size_t nidx = static_cast<size_t>(ny) * w + nx;
            if (comp[nidx] == 0 && is_blob(nx, ny)) {
              comp[nidx] = n_comp;
              stack.push_back(static_cast<int>(nidx));
            }
          }
        }
      }
    }
  }

  std::vector<PatchRecord> out;
  for (int c = 0; c < n_comp; ++c) {
    const auto& px = members[static_cast<size_t>(c)];
    if (static_cast<int>(px.size()) < opts.min_area) continue;
    int x0 = w, y0 = h, x1 = -1, y1 = -1;
    for (int idx : px) {
      int cx = idx % w, cy = idx / w;
      x0 = std::min(x0, cx);
      x1 = std::max(x1, cx);
      y0 = std::min(y0, cy);
      y1 = std::max(y1, cy);
    }
    PatchRecord rec;
    rec.source_id = source_id;
    rec.label = label;
    rec.x = x0;
    rec.y = y0;
    rec.image = Image(x1 - x0 + 1, y1 - y0 + 1);
    for (int idx : px) {
      int cx = idx % w, cy = idx / w;
      for (int ch = 0; ch < 3; ++ch) {
        rec.image.at(cx - x0, cy - y0, ch) = patch.at(cx, cy, ch);
      }
      rec.image.at(cx - x0, cy - y0, 3) = 1.0;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

// ---- manifest ----

std::map<std::string, int> DatasetManifest::class_counts() const {
  std::map<std::string, int> counts{{"normal", 0}, {"cancer", 0}};
  for (const auto& r : records) ++counts[class_label_name(r.label)];
  return counts;
}

void write_manifest(const DatasetManifest& m, const std::string& dir) {
  json j;
  j["version"] = m.version;
  j["feature_preset"] = m.feature_preset;
  j["features"] = m.total_features;
  j["tails"] = m.tails;
  j["seeds"] = m.seeds;
  j["class_counts"] = m.class_counts();
  json recs = json::array();
  for (const auto& r : m.records) {
    recs.push_back({{"path", r.path},
                    {"source", r.source_id},
                    {"label", class_label_name(r.label)},
                    {"x", r.x},
                    {"y", r.y},
                    {"width", r.width},
                    {"height", r.height}});
  }
  j["records"] = recs;
  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!out) throw std::runtime_error("write_manifest: cannot write in " + dir);
  out << j.dump(2) << "\n";
}

DatasetManifest read_manifest(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw std::runtime_error("read_manifest: no manifest.json in " + dir);
  json j = json::parse(in);
  DatasetManifest m;
  m.version = j.at("version").get<int>();
  m.feature_preset = j.at("feature_preset").get<std::string>();
  m.total_features = j.at("features").get<int>();
  m.tails = j.at("tails").get<int>();
  m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  for (const auto& r : j.at("records")) {
    ManifestRecord rec;
    rec.path = r.at("path").get<std::string>();
    rec.source_id = r.at("source").get<std::string>();
    rec.label = class_label_from_name(r.at("label").get<std::string>());
    rec.x = r.at("x").get<int>();
    rec.y = r.at("y").get<int>();
    rec.width = r.at("width").get<int>();
    rec.height = r.at("height").get<int>();
    m.records.push_back(std::move(rec));
  }
  // Stored counts must agree with the record list.
  auto counts = m.class_counts();
  for (const auto& [k, v] : j.at("class_counts").items()) {
    if (counts[k] != v.get<int>()) {
      throw std::runtime_error("read_manifest: inconsistent class counts");
    }
  }
  return m;
}

void validate_manifest(const DatasetManifest& m, const std::string& dir) {
  // The referenced file set must equal the PNG contents of the directory.
  std::set<std::string> referenced;
  for (const auto& r : m.records) {
    fs::path p = fs::path(dir) / r.path;
    if (!fs::exists(p)) {
      throw std::runtime_error("validate_manifest: missing file " + p.string());
    }
    referenced.insert(fs::path(r.path).generic_string());
  }
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".png") continue;
    std::string rel = fs::relative(e.path(), dir).generic_string();
    if (!referenced.count(rel)) {
      throw std::runtime_error("validate_manifest: unreferenced file " + rel);
    }
  }
}

DatasetManifest export_dataset(const std::vector<PatchRecord>& records,
                               const std::string& dir, const std::string& preset_name,
                               const std::vector<std::uint64_t>& seeds) {
  DatasetManifest m;
  m.feature_preset = preset_name;
  try {
    FeaturePreset p = preset(preset_name);
    m.total_features = p.layout.total_features;
    m.tails = p.layout.tails;
  } catch (const std::invalid_argument&) {
    // Non-builtin preset name: leave the budget fields at zero.
  }
  m.seeds = seeds;
  std::map<std::string, int> counter;
  for (const auto& rec : records) {
    std::string cls = class_label_name(rec.label);
    fs::path sub = fs::path(cls) / rec.source_id;
    fs::create_directories(fs::path(dir) / sub);
    int idx = counter[cls + "/" + rec.source_id]++;
    fs::path rel = sub / (std::to_string(idx) + ".png");
    write_png(rec.image, (fs::path(dir) / rel).string());
    ManifestRecord mr;
    mr.path = rel.generic_string();
    mr.source_id = rec.source_id;
    mr.label = rec.label;
    mr.x = rec.x;
    mr.y = rec.y;
    mr.width = rec.image.width;
    mr.height = rec.image.height;
    m.records.push_back(std::move(mr));
  }
  write_manifest(m, dir);
  return m;
}

// ---- fixtures ----

CellFeatures fixture_cell_features(ClassLabel cls, const FeatureLayout& layout,
                                   const ConstraintSet& c, Rng& rng) {
  CellFeatures f;
  f.layout = layout;
  f.deformation = Eigen::VectorXd::Zero(layout.deformation_count);
  f.nucleus_deformation =
      Eigen::VectorXd::Zero(layout.has_nucleus ? layout.deformation_count : 0);

  if (cls == ClassLabel::Normal) {
    f.scale = rng.uniform(0.8, 1.0);
    double mg = rng.uniform(0.72, 0.9);
    double ng = rng.uniform(0.45, 0.6);
    f.membrane_color = Eigen::Vector4d(mg, mg, mg, 1.0);
    f.nucleus_color = Eigen::Vector4d(ng, ng, ng, 1.0);
    f.surface_strength = 0.0;
    f.surface_distance = 0.3;
    f.nucleus_offset = Eigen::Vector3d(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                                       rng.uniform(-0.05, 0.05));
  } else {
    f.scale = rng.uniform(0.7, 0.95);
    double mg = rng.uniform(0.38, 0.48);
    double ng = rng.uniform(0.04, 0.1);
    f.membrane_color = Eigen::Vector4d(mg, mg, mg, 1.0);
    f.nucleus_color = Eigen::Vector4d(ng, ng, ng, 1.0);
    f.surface_strength = rng.uniform(-0.1, 0.1);
    f.surface_distance = rng.uniform(0.2, 0.5);
    f.nucleus_offset = Eigen::Vector3d(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
                                       rng.uniform(-0.2, 0.2));
    if (layout.deformation_count > 0) {
      // Ellipsoidal membrane: radial offsets from an ellipsoid with a random
      // long axis, elongation e.
      double e = rng.uniform(0.35, 0.5);
      Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
      axis.normalize();
      double a = 1.0 + e;
      double b = 1.0 / std::sqrt(1.0 + e);
      auto anchors = fibonacci_directions(layout.deformation_count);
      for (int i = 0; i < layout.deformation_count; ++i) {
        double ca = anchors[static_cast<size_t>(i)].dot(axis);
        double r = 1.0 / std::sqrt(ca * ca / (a * a) + (1.0 - ca * ca) / (b * b));
        f.deformation[i] = r - 1.0;
      }
    }
  }
  return clamp_features(f, c);
}

FixtureDataset make_fixture_dataset(const FeatureLayout& layout, const ConstraintSet& c,
                                    const FixtureOptions& opts) {
  Rng rng(opts.seed);
  BuildOptions build;
  build.subdivisions = opts.subdivisions;
  ProjectionSpec spec;
  spec.thetas = opts.thetas;
  spec.phis = opts.phis;
  spec.size = opts.image_size;
  spec.mode = opts.mode;
  spec.world_extent = opts.world_extent;

  FixtureDataset ds;
  for (ClassLabel cls : {ClassLabel::Normal, ClassLabel::Cancer}) {
    for (int i = 0; i < opts.per_class; ++i) {
      CellFeatures f = fixture_cell_features(cls, layout, c, rng);
      Scene scene;
      scene.meshes.push_back(
          PlacedMesh{build_cell(f, c, build), Eigen::Isometry3d::Identity()});
      for (auto& ai : render_batch(scene, spec)) {
        ds.images.push_back(std::move(ai.image));
        ds.labels.push_back(cls);
      }
    }
  }
  return ds;
}

std::vector<Image> make_fixture_cluster_images(const TopoConfig& cfg,
                                               const ConstraintSet& c, int count,
                                               std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Image> out;
  const int grid = static_cast<int>(cfg.thetas.size() * cfg.phis.size());
  for (int i = 0; i < count; ++i) {
    int cells = 2 + rng.uniform_int(2);
    ClusterFeatures g;
    for (int k = 0; k < cells; ++k) {
      g.cells.push_back(fixture_cell_features(
          rng.uniform01() < 0.5 ? ClassLabel::Normal : ClassLabel::Cancer, cfg.layout, c,
          rng));
      g.positions.emplace_back(rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2),
                               rng.uniform(-0.4, 0.4));
    }
    std::vector<AngleImage> batch = render_cluster(g, c, cfg);
    out.push_back(std::move(batch[static_cast<size_t>(i % grid)].image));
  }
  return out;
}

// ---- metrics CSV ----

const char* kMetricsCsvHeader = "iter,critic_loss,gen_loss,w_estimate,fid_proxy";

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path);
  out << kMetricsCsvHeader << "\n";
  for (const auto& r : rows) {
    out << r.iter << "," << format_double(r.critic_loss) << ","
        << format_double(r.gen_loss) << "," << format_double(r.w_estimate) << ","
        << format_double(r.fid_proxy) << "\n";
  }
  if (!out) throw std::runtime_error("write_metrics_csv: write failure on " + path);
}

// ---- experiment orchestration ----

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ExperimentConfig cfg;
  if (j.contains("run_id")) cfg.run_id = j.at("run_id").get<std::string>();
  if (j.contains("preset")) cfg.preset_name = j.at("preset").get<std::string>();
  if (j.contains("classes")) {
    cfg.classes.clear();
    for (const auto& c : j.at("classes")) {
      cfg.classes.push_back(class_label_from_name(c.get<std::string>()));
    }
  }
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("iters")) cfg.iters = j.at("iters").get<int>();
  if (j.contains("fixture")) {
    const json& f = j.at("fixture");
    if (f.contains("per_class")) cfg.fixture.per_class = f.at("per_class").get<int>();
    if (f.contains("seed")) cfg.fixture.seed = f.at("seed").get<std::uint64_t>();
    if (f.contains("image_size")) cfg.fixture.image_size = f.at("image_size").get<int>();
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    if (t.contains("batch_m")) cfg.train.batch_m = t.at("batch_m").get<int>();
    if (t.contains("gen_batch")) cfg.train.gen_batch = t.at("gen_batch").get<int>();
    if (t.contains("clip_c")) cfg.train.clip_c = t.at("clip_c").get<double>();
    if (t.contains("lr_critic")) cfg.train.lr_critic = t.at("lr_critic").get<double>();
    if (t.contains("lr_gen")) cfg.train.lr_gen = t.at("lr_gen").get<double>();
    if (t.contains("n_critic")) cfg.train.n_critic = t.at("n_critic").get<int>();
    if (t.contains("spsa_probes")) cfg.train.spsa_probes = t.at("spsa_probes").get<int>();
    if (t.contains("spsa_step")) cfg.train.spsa_step = t.at("spsa_step").get<double>();
    if (t.contains("eval_every")) cfg.train.eval_every = t.at("eval_every").get<int>();
    if (t.contains("fid_dim")) cfg.train.fid_dim = t.at("fid_dim").get<int>();
    if (t.contains("latent_dim")) cfg.train.latent_dim = t.at("latent_dim").get<int>();
    if (t.contains("hidden_dim")) cfg.train.hidden_dim = t.at("hidden_dim").get<int>();
  }
  if (j.contains("train_topo")) cfg.train_topo = j.at("train_topo").get<bool>();
  if (j.contains("topo_images")) cfg.topo_images = j.at("topo_images").get<int>();
  if (j.contains("sample_meshes")) cfg.sample_meshes = j.at("sample_meshes").get<int>();
  return cfg;
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["run_id"] = run_id;
  j["preset"] = preset_name;
  json cls = json::array();
  for (ClassLabel c : classes) cls.push_back(class_label_name(c));
  j["classes"] = cls;
  j["seed"] = seed;
  j["iters"] = iters;
  j["fixture"] = {{"per_class", fixture.per_class},
                  {"seed", fixture.seed},
                  {"image_size", fixture.image_size}};
  j["train"] = {{"batch_m", train.batch_m},
                {"gen_batch", train.gen_batch},
                {"clip_c", train.clip_c},
                {"lr_critic", train.lr_critic},
                {"lr_gen", train.lr_gen},
                {"n_critic", train.n_critic},
                {"spsa_probes", train.spsa_probes},
                {"spsa_step", train.spsa_step},
                {"eval_every", train.eval_every},
                {"fid_dim", train.fid_dim},
                {"latent_dim", train.latent_dim},
                {"hidden_dim", train.hidden_dim}};
  j["train_topo"] = train_topo;
  j["topo_images"] = topo_images;
  j["sample_meshes"] = sample_meshes;
  return j.dump(2) + "\n";
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ExperimentConfig::from_json(ss.str());
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  // Validate everything before any work.
  require(!cfg.classes.empty(), "run_experiment: no classes configured");
  require(cfg.iters >= 1, "run_experiment: iters must be >= 1");
  FeaturePreset preset_cfg = preset(cfg.preset_name);
  TrainConfig train = cfg.train;
  train.iters = cfg.iters;
  train.seed = cfg.seed;
  train.image_size = cfg.fixture.image_size;
  train.thetas = cfg.fixture.thetas;
  train.phis = cfg.fixture.phis;
  train.mode = cfg.fixture.mode;
  train.world_extent = cfg.fixture.world_extent;
  train.subdivisions = cfg.fixture.subdivisions;
  train.validate();

  fs::path run_dir = fs::path(out_dir) / cfg.run_id;
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec || !fs::is_directory(run_dir)) {
    throw std::runtime_error("run_experiment: cannot create output dir " +
                             run_dir.string());
  }
  {
    std::ofstream probe(run_dir / ".write_probe", std::ios::binary);
    if (!probe) {
      throw std::runtime_error("run_experiment: output dir not writable: " +
                               run_dir.string());
    }
  }
  fs::remove(run_dir / ".write_probe");

  std::ofstream cfg_out(run_dir / "config.json", std::ios::binary);
  cfg_out << cfg.to_json();
  cfg_out.close();

  ExperimentReport report;
  report.run_dir = run_dir.string();

  FixtureDataset fixture = make_fixture_dataset(preset_cfg.layout, preset_cfg.constraints,
                                                cfg.fixture);
  // Persist the fixture dataset in the standard layout.
  {
    std::vector<PatchRecord> recs;
    for (size_t i = 0; i < fixture.images.size(); ++i) {
      PatchRecord r;
      r.image = fixture.images[i];
      r.label = fixture.labels[i];
      r.source_id = "fixture";
      recs.push_back(std::move(r));
    }
    export_dataset(recs, (run_dir / "data").string(), cfg.preset_name,
                   {cfg.seed, cfg.fixture.seed});
  }

  json fid_json;
  for (ClassLabel cls : cfg.classes) {
    std::string cname = class_label_name(cls);
    std::vector<Image> reals;
    for (size_t i = 0; i < fixture.images.size(); ++i) {
      if (fixture.labels[i] == cls) reals.push_back(fixture.images[i]);
    }
    require(reals.size() >= 2, "run_experiment: fixture produced too few images");

    TrainConfig tc = train;
    tc.cls = cls;
    tc.seed = cfg.seed + static_cast<std::uint64_t>(cls == ClassLabel::Cancer ? 1 : 0) * 7919;
    GeneratorNet gen = GeneratorNet::init(preset_cfg.layout, tc.latent_dim, tc.hidden_dim,
                                          tc.seed ^ 0xA5A5A5A5ull);
    CriticConfig cc;
    cc.image_size = tc.image_size;
    CriticNet critic = CriticNet::init(cc, tc.seed ^ 0x5A5A5A5Aull);

    std::vector<MetricsRow> rows = train_gan(gen, critic, reals, preset_cfg.constraints, tc);
    std::string csv_rel = "metrics_" + cname + ".csv";
    write_metrics_csv(rows, (run_dir / csv_rel).string());
    report.metrics_csv[cname] = csv_rel;
    report.final_fid[cname] = rows.back().fid_proxy;
    fid_json[cname] = rows.back().fid_proxy;

    nn::save_checkpoint(gen.params, (run_dir / ("gen_" + cname + ".ckpt")).string(),
                        json{{"kind", "generator"},
                             {"preset", cfg.preset_name},
                             {"latent_dim", gen.latent_dim},
                             {"hidden_dim", gen.hidden_dim}}
                            .dump());
    nn::save_checkpoint(critic.params, (run_dir / ("critic_" + cname + ".ckpt")).string(),
                        json{{"kind", "critic"}, {"image_size", cc.image_size}}.dump());

    // Sample meshes and projection grids from the trained generator.
    Rng sample_rng(tc.seed ^ 0xC0FFEEull);
    for (int i = 0; i < cfg.sample_meshes; ++i) {
      Eigen::VectorXd z(gen.latent_dim);
      for (int k = 0; k < gen.latent_dim; ++k) z[k] = sample_rng.normal();
      CellFeatures f = generator_forward(gen, z, preset_cfg.constraints);
      BuildOptions bo;
      bo.subdivisions = tc.subdivisions;
      Scene scene;
      scene.meshes.push_back(PlacedMesh{build_cell(f, preset_cfg.constraints, bo),
                                        Eigen::Isometry3d::Identity()});
      export_obj(scene, (run_dir / ("sample_" + cname + "_" + std::to_string(i) + ".obj"))
                            .string());
      std::vector<Image> imgs = render_cell_images(f, preset_cfg.constraints, tc);
      write_png(imgs[0],
                (run_dir / ("sample_" + cname + "_" + std::to_string(i) + ".png")).string());
    }
  }
  {
    std::ofstream fid_out(run_dir / "fid_report.json", std::ios::binary);
    fid_out << fid_json.dump(2) << "\n";
  }

  if (cfg.train_topo) {
    TopoConfig topo_cfg;
    topo_cfg.layout = preset_cfg.layout;
    topo_cfg.d_model = cfg.train.hidden_dim; // decoder tails plug straight in
    std::vector<Image> cluster_imgs = make_fixture_cluster_images(
        topo_cfg, preset_cfg.constraints, cfg.topo_images, cfg.seed ^ 0x7070ull);
    std::string gen_ckpt =
        (run_dir / ("gen_" + class_label_name(cfg.classes[0]) + ".ckpt")).string();
    TopoTransformer topo =
        TopoTransformer::init_with_decoder(topo_cfg, cfg.seed ^ 0x1111ull, gen_ckpt);
    TopoTrainConfig ttc = cfg.topo_train;
    ttc.seed = cfg.seed;
    std::vector<TopoMetricsRow> topo_rows =
        train_transformer(topo, cluster_imgs, preset_cfg.constraints, ttc);
    std::ofstream out(run_dir / "metrics_topo.csv", std::ios::binary);
    out << "iter,total,recon,penalty\n";
    for (const auto& r : topo_rows) {
      out << r.iter << "," << format_double(r.total) << "," << format_double(r.recon)
          << "," << format_double(r.penalty) << "\n";
    }
    nn::save_checkpoint(topo.params, (run_dir / "topo.ckpt").string(),
                        json{{"kind", "topo"}}.dump());
  }

  // Run-level manifest: every artifact written above.
  json run_manifest;
  run_manifest["run_id"] = cfg.run_id;
  run_manifest["preset"] = cfg.preset_name;
  run_manifest["seed"] = cfg.seed;
  json files = json::array();
  for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
    if (entry.is_regular_file()) {
      files.push_back(fs::relative(entry.path(), run_dir).generic_string());
    }
  }
  std::sort(files.begin(), files.end());
  run_manifest["files"] = files;
  std::ofstream rm_out(run_dir / "run_manifest.json", std::ios::binary);
  rm_out << run_manifest.dump(2) << "\n";

  return report;
}

} // namespace cellsynth
