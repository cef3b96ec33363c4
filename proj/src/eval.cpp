#include "cellsynth/eval.hpp"

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

} // namespace

Embedder::Embedder(int dim, std::uint64_t seed, int input_size)
    : dim_(dim), input_size_(input_size), seed_(seed) {
  require(dim >= 2, "Embedder: dim must be >= 2");
  require(input_size >= 8, "Embedder: input size must be >= 8");
  Rng rng(seed);
  params_.add("c1.W", {8, 4, 3, 3});
  params_.add("c1.b", {8});
  params_.add("c2.W", {16, 8, 3, 3});
  params_.add("c2.b", {16});
  int h1 = (input_size + 2 - 3) / 2 + 1;
  int h2 = (h1 + 2 - 3) / 2 + 1;
  flat_size_ = 16 * h2 * h2;
  params_.add("head.W", {dim, flat_size_});
  params_.add("head.b", {dim});
  for (const auto& name : params_.names()) init_uniform_scaled(params_, name, rng);
  // Biases stay zero; the head bias is irrelevant to Frechet distances anyway.
  params_.freeze_group("default");
}

Eigen::VectorXd Embedder::embed_one(const Image& img) const {
  require(img.width == input_size_ && img.height == input_size_,
          "Embedder: image size does not match embedder input size");
  nn::Tensor x = image_to_tensor(img);
  nn::Tensor h1 = nn::conv2d_forward(x, params_.value("c1.W"), params_.value("c1.b"), 2, 1);
  nn::tensor_tanh_inplace(h1);
  nn::Tensor h2 = nn::conv2d_forward(h1, params_.value("c2.W"), params_.value("c2.b"), 2, 1);
  nn::tensor_tanh_inplace(h2);
  nn::ConstMatMap W = params_.value("head.W").mat();
  return W * h2.data + params_.value("head.b").data;
}

Eigen::MatrixXd embed(const std::vector<Image>& images, const Embedder& e) {
  require(!images.empty(), "embed: empty image list");
  for (const auto& img : images) {
    require(img.width == images[0].width && img.height == images[0].height,
            "embed: images must have uniform size");
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), e.dim());
  for (size_t i = 0; i < images.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = e.embed_one(images[i]).transpose();
  }
  return out;
}

FrechetStats fit_gaussian(const Eigen::MatrixXd& features) {
  const Eigen::Index n = features.rows();
  require(n >= 2, "fit_gaussian: needs at least 2 rows");
  FrechetStats s;
  s.mu = features.colwise().mean().transpose();
  Eigen::MatrixXd centered = features.rowwise() - s.mu.transpose();
  s.sigma = centered.transpose() * centered / static_cast<double>(n - 1);
  s.sigma = 0.5 * (s.sigma + s.sigma.transpose()).eval();
  return s;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev[i] = ev[i] > 0.0 ? std::sqrt(ev[i]) : 0.0;
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double frechet_distance(const FrechetStats& a, const FrechetStats& b) {
  require(a.mu.size() == b.mu.size(), "frechet_distance: dimension mismatch");
  require(a.sigma.rows() == a.mu.size() && b.sigma.rows() == b.mu.size(),
          "frechet_distance: sigma dimension mismatch");
  require(a.mu.allFinite() && b.mu.allFinite() && a.sigma.allFinite() && b.sigma.allFinite(),
          "frechet_distance: non-finite input");

  Eigen::MatrixXd sa_half = psd_sqrt(a.sigma);
  Eigen::MatrixXd inner = sa_half * b.sigma * sa_half;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()));
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    double ev = es.eigenvalues()[i];
    if (ev > 1e-10) tr_sqrt += std::sqrt(ev); // negatives below 1e-10 clipped
  }
  double d2 = (a.mu - b.mu).squaredNorm() + a.sigma.trace() + b.sigma.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, d2);
}

FidReport fid_report(const std::vector<Image>& real, const std::vector<Image>& fake,
                     const Embedder& e, const std::vector<ClassLabel>* real_labels,
                     const std::vector<ClassLabel>* fake_labels) {
  require(real.size() >= 2 && fake.size() >= 2, "fid_report: both sets need >= 2 images");
  Eigen::MatrixXd fr = embed(real, e);
  Eigen::MatrixXd ff = embed(fake, e);
  FidReport r;
  r.n_real = static_cast<int>(real.size());
  r.n_fake = static_cast<int>(fake.size());
  r.seed = e.seed();
  r.total = frechet_distance(fit_gaussian(fr), fit_gaussian(ff));

  if (real_labels && fake_labels) {
    require(real_labels->size() == real.size() && fake_labels->size() == fake.size(),
            "fid_report: label count mismatch");
    for (ClassLabel cls : {ClassLabel::Normal, ClassLabel::Cancer}) {
      std::vector<Eigen::Index> ri, fi;
      for (size_t i = 0; i < real.size(); ++i) {
        if ((*real_labels)[i] == cls) ri.push_back(static_cast<Eigen::Index>(i));
      }
      for (size_t i = 0; i < fake.size(); ++i) {
        if ((*fake_labels)[i] == cls) fi.push_back(static_cast<Eigen::Index>(i));
      }
      if (ri.size() < 2 || fi.size() < 2) continue;
      Eigen::MatrixXd sr(static_cast<Eigen::Index>(ri.size()), e.dim());
      Eigen::MatrixXd sf(static_cast<Eigen::Index>(fi.size()), e.dim());
      for (size_t i = 0; i < ri.size(); ++i) sr.row(static_cast<Eigen::Index>(i)) = fr.row(ri[i]);
      for (size_t i = 0; i < fi.size(); ++i) sf.row(static_cast<Eigen::Index>(i)) = ff.row(fi[i]);
      double d = frechet_distance(fit_gaussian(sr), fit_gaussian(sf));
      if (cls == ClassLabel::Normal) {
        r.regular = d;
      } else {
        r.cancer = d;
      }
    }
  }
  return r;
}

} // namespace cellsynth
