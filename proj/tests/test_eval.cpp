#include <doctest.h>

#include <cmath>

#include "cellsynth/eval.hpp"
#include "cellsynth/rng.hpp"

using namespace cellsynth;

namespace {

Image flat_image(int size, double r, double g, double b) {
  Image img(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      img.at(x, y, 0) = r;
      img.at(x, y, 1) = g;
      img.at(x, y, 2) = b;
      img.at(x, y, 3) = 1.0;
    }
  }
  return img;
}

Eigen::MatrixXd random_psd(int d, Rng& rng) {
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) a(i, j) = rng.uniform(-1.0, 1.0);
  }
  return a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d);
}

} // namespace

TEST_CASE("embedder determinism, shape, and sensitivity to distinct fixtures") {
  Embedder e(16, 5, 16);
  Image red = flat_image(16, 0.9, 0.1, 0.1);
  Image blue = flat_image(16, 0.1, 0.1, 0.9);

  Eigen::MatrixXd m = embed({red, red, blue}, e);
  CHECK(m.rows() == 3);
  CHECK(m.cols() == 16);
  CHECK((m.row(0) - m.row(1)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((m.row(0) - m.row(2)).norm() > 0.0);

  Embedder e2(16, 5, 16);
  Eigen::MatrixXd m2 = embed({red, red, blue}, e2);
  CHECK((m - m2).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(embed({}, e), std::invalid_argument);
  Image small(8, 8);
  CHECK_THROWS_AS(embed({small}, e), std::invalid_argument);
}

TEST_CASE("fit_gaussian hand arithmetic and degenerate case") {
  Eigen::MatrixXd rows(2, 2);
  rows << 0, 0, 2, 2;
  FrechetStats s = fit_gaussian(rows);
  CHECK(s.mu.isApprox(Eigen::Vector2d(1, 1)));
  Eigen::MatrixXd expected(2, 2);
  expected << 2, 2, 2, 2;
  CHECK((s.sigma - expected).cwiseAbs().maxCoeff() < 1e-12);

  Eigen::MatrixXd same(3, 2);
  same << 1, 2, 1, 2, 1, 2;
  FrechetStats z = fit_gaussian(same);
  CHECK(z.sigma.cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(fit_gaussian(Eigen::MatrixXd::Zero(1, 4)), std::invalid_argument);
}

TEST_CASE("fit_gaussian matches an independent two-pass covariance computation") {
  Rng rng(9);
  Eigen::MatrixXd rows(5, 3);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 3; ++j) rows(i, j) = rng.uniform(-2.0, 2.0);
  }
  FrechetStats s = fit_gaussian(rows);
  // Two-pass: mean first, then explicit outer-product accumulation.
  Eigen::Vector3d mu = Eigen::Vector3d::Zero();
  for (int i = 0; i < 5; ++i) mu += rows.row(i).transpose();
  mu /= 5.0;
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (int i = 0; i < 5; ++i) {
    Eigen::Vector3d d = rows.row(i).transpose() - mu;
    cov += d * d.transpose();
  }
  cov /= 4.0;
  CHECK((s.mu - mu).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((s.sigma - cov).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fit_gaussian covariance is PSD up to tolerance") {
  Rng rng(10);
  Eigen::MatrixXd rows(12, 6);
  for (int i = 0; i < rows.size(); ++i) rows.data()[i] = rng.uniform(-1.0, 1.0);
  FrechetStats s = fit_gaussian(rows);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s.sigma);
  CHECK(es.eigenvalues().minCoeff() > -1e-10);
}

TEST_CASE("frechet_distance: identity, mean shift, diagonal closed form") {
  Rng rng(11);
  FrechetStats a;
  a.mu = Eigen::VectorXd::Zero(4);
  a.sigma = random_psd(4, rng);
  CHECK(frechet_distance(a, a) < 1e-8);

  FrechetStats b = a;
  Eigen::VectorXd d(4);
  d << 0.5, -1.0, 2.0, 0.25;
  b.mu = a.mu + d;
  CHECK(std::abs(frechet_distance(a, b) - d.squaredNorm()) < 1e-8);

  // Diagonal case.
  FrechetStats da, db;
  da.mu = Eigen::VectorXd::Zero(5);
  db.mu = Eigen::VectorXd::Zero(5);
  Eigen::VectorXd sr(5), sg(5);
  for (int i = 0; i < 5; ++i) {
    sr[i] = rng.uniform(0.1, 3.0);
    sg[i] = rng.uniform(0.1, 3.0);
    da.mu[i] = rng.uniform(-1, 1);
    db.mu[i] = rng.uniform(-1, 1);
  }
  da.sigma = sr.asDiagonal();
  db.sigma = sg.asDiagonal();
  double expected = (da.mu - db.mu).squaredNorm();
  for (int i = 0; i < 5; ++i) {
    double t = std::sqrt(sr[i]) - std::sqrt(sg[i]);
    expected += t * t;
  }
  CHECK(std::abs(frechet_distance(da, db) - expected) < 1e-8);

  FrechetStats wrong;
  wrong.mu = Eigen::VectorXd::Zero(3);
  wrong.sigma = Eigen::MatrixXd::Identity(3, 3);
  CHECK_THROWS_AS(frechet_distance(a, wrong), std::invalid_argument);
}

TEST_CASE("frechet_distance is symmetric and rotation invariant") {
  Rng rng(13);
  for (int rep = 0; rep < 5; ++rep) {
    FrechetStats a, b;
    a.mu = Eigen::VectorXd::Zero(4);
    b.mu = Eigen::VectorXd::Zero(4);
    for (int i = 0; i < 4; ++i) {
      a.mu[i] = rng.uniform(-1, 1);
      b.mu[i] = rng.uniform(-1, 1);
    }
    a.sigma = random_psd(4, rng);
    b.sigma = random_psd(4, rng);
    double dab = frechet_distance(a, b);
    double dba = frechet_distance(b, a);
    CHECK(std::abs(dab - dba) < 1e-10);

    // Random rotation from QR of a random matrix.
    Eigen::MatrixXd m(4, 4);
    for (int i = 0; i < 16; ++i) m.data()[i] = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    Eigen::MatrixXd q = qr.householderQ();
    FrechetStats ar, br;
    ar.mu = q * a.mu;
    br.mu = q * b.mu;
    ar.sigma = q * a.sigma * q.transpose();
    br.sigma = q * b.sigma * q.transpose();
    CHECK(std::abs(frechet_distance(ar, br) - dab) < 1e-6);
  }
}

TEST_CASE("psd_sqrt squares back to the input") {
  Rng rng(14);
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::MatrixXd s = random_psd(6, rng);
    Eigen::MatrixXd r = psd_sqrt(s);
    CHECK((r * r - s).norm() / s.norm() < 1e-8);
  }
}

TEST_CASE("fid_report: identical sets, separation, symmetry, per-class") {
  Embedder e(8, 3, 16);
  std::vector<Image> reds, blues;
  Rng rng(15);
  for (int i = 0; i < 6; ++i) {
    reds.push_back(flat_image(16, 0.8 + 0.02 * rng.uniform01(), 0.1, 0.1));
    blues.push_back(flat_image(16, 0.1, 0.1, 0.8 + 0.02 * rng.uniform01()));
  }
  FidReport same = fid_report(reds, reds, e);
  CHECK(same.total < 1e-6);
  FidReport diff = fid_report(reds, blues, e);
  CHECK(diff.total > 0.0);
  FidReport rev = fid_report(blues, reds, e);
  CHECK(std::abs(diff.total - rev.total) < 1e-10);

  std::vector<ClassLabel> labels{ClassLabel::Normal, ClassLabel::Normal,
                                 ClassLabel::Normal, ClassLabel::Cancer,
                                 ClassLabel::Cancer, ClassLabel::Cancer};
  FidReport per = fid_report(reds, blues, e, &labels, &labels);
  CHECK(per.regular.has_value());
  CHECK(per.cancer.has_value());
  CHECK(per.n_real == 6);
  CHECK(per.n_fake == 6);

  std::vector<Image> one{reds[0]};
  CHECK_THROWS_AS(fid_report(one, blues, e), std::invalid_argument);
}
