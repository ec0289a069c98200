// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "eepose/scorenet.hpp"

using namespace eepose;
namespace fs = std::filesystem;

namespace {

ScoreNetConfig tiny_config() {
  ScoreNetConfig cfg;
  cfg.enc_widths = {8, 8};
  cfg.global_width = 8;
  cfg.time_freq_pairs = 4;
  cfg.time_width = 8;
  cfg.pose_widths = {8, 8};
  cfg.trunk_widths = {8, 8};
  cfg.scale_output = true;
  cfg.scale_sigma_min = 0.01;
  cfg.scale_sigma_max = 5.0;
  return cfg;
}

PointCloud random_cloud(Rng& rng, int n) {
  // Desk-scale extents in meters, matching the clouds the encoder sees.
  PointCloud c(n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) c.pts(i, k) = 0.2 * rng.normal();
  }
  return c;
}

Vec12 random_pose_vec(Rng& rng) {
  Vec12 v;
  for (int i = 0; i < 12; ++i) v[i] = rng.normal();
  return v;
}

// Flattened views over every parameter scalar.
std::vector<double*> flatten(ScoreNetParams& p) {
  std::vector<double*> out;
  for_each_tensor(p, [&](const std::string&, Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(m.data() + i);
  });
  return out;
}

}  // namespace

TEST_CASE("encode_cloud is permutation invariant bit-for-bit") {
  Rng rng(31);
  const ScoreNetParams params = init_params(tiny_config(), 5);
  const PointCloud cloud = random_cloud(rng, 40);
  const Eigen::VectorXd base = encode_cloud(params, cloud);

  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> order(40);
    for (int i = 0; i < 40; ++i) order[i] = i;
    rng.shuffle(order);
    PointCloud shuffled(40);
    for (int i = 0; i < 40; ++i) shuffled.pts.row(i) = cloud.pts.row(order[i]);
    const Eigen::VectorXd feat = encode_cloud(params, shuffled);
    CHECK((feat - base).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("encode_cloud of a repeated point matches the single point") {
  Rng rng(32);
  const ScoreNetParams params = init_params(tiny_config(), 6);
  PointCloud one(1);
  one.pts.row(0) = Vec3(0.3, -0.7, 1.1).transpose();
  const Eigen::VectorXd base = encode_cloud(params, one);
  for (int n : {2, 5, 64}) {
    PointCloud rep(n);
    for (int i = 0; i < n; ++i) rep.pts.row(i) = one.pts.row(0);
    CHECK((encode_cloud(params, rep) - base).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK_THROWS_AS(encode_cloud(params, PointCloud{}), EmptyCloud);
}

TEST_CASE("encode_cloud with zero weights propagates the biases") {
  ScoreNetConfig cfg = tiny_config();
  cfg.enc_widths = {2, 2};
  cfg.global_width = 2;
  ScoreNetParams params = init_params(cfg, 7);
  for (DenseLayer* l : {&params.enc[0], &params.enc[1], &params.global}) {
    l->w.setZero();
  }
  params.enc[0].b << 0.5, -0.3;
  params.enc[1].b << 0.1, 0.2;
  params.global.b << -0.4, 0.25;

  Rng rng(33);
  const Eigen::VectorXd feat = encode_cloud(params, random_cloud(rng, 9));
  // Hand trace: with zero weights the relu chain reduces to relu of each bias.
  CHECK(feat[0] == 0.0);
  CHECK(feat[1] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("zero-initialized heads give a zero score for any input") {
  const ScoreNetParams params = init_params(tiny_config(), 8);
  Rng rng(34);
  for (int trial = 0; trial < 5; ++trial) {
    const PointCloud cloud = random_cloud(rng, 16);
    const Vec12 out =
        forward_score(params, PoseVec12::from_flat(random_pose_vec(rng)),
                      rng.uniform(0.01, 1.0), cloud);
    CHECK(out.cwiseAbs().maxCoeff() == 0.0);
    CHECK(out.size() == 12);
  }
}

TEST_CASE("forward_score is pure") {
  ScoreNetParams params = init_params(tiny_config(), 9);
  Rng wrng(35);
  for (DenseLayer* h :
       {&params.head_rx, &params.head_ry, &params.head_s, &params.head_t}) {
    for (Eigen::Index i = 0; i < h->w.size(); ++i) {
      h->w.data()[i] = wrng.normal() * 0.1;
    }
  }
  Rng rng(36);
  const PointCloud cloud = random_cloud(rng, 20);
  const PoseVec12 pose = PoseVec12::from_flat(random_pose_vec(rng));
  const Vec12 a = forward_score(params, pose, 0.37, cloud);
  const Vec12 b = forward_score(params, pose, 0.37, cloud);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single linear layer gradient matches the hand derivation") {
  DenseLayer layer = DenseLayer::make(3, 1, DenseLayer::Act::kNone);
  layer.w << 0.2, -0.5, 0.8;
  layer.b << 0.1;

  Eigen::MatrixXd x(1, 3);
  x << 1.5, -0.4, 0.9;
  const double y_target = 0.3;

  Eigen::MatrixXd z;
  const Eigen::MatrixXd y = layer.forward_pre(x, &z);
  const double residual = y(0, 0) - y_target;

  Eigen::MatrixXd dw = Eigen::MatrixXd::Zero(1, 3);
  Eigen::MatrixXd db = Eigen::MatrixXd::Zero(1, 1);
  Eigen::MatrixXd dy(1, 1);
  dy << residual;  // d(0.5 r^2)/dy
  const Eigen::MatrixXd dx = layer.backward(x, z, dy, &dw, &db);

  // d(0.5(Wx+b-y)^2)/dW = r x^T, /db = r, /dx = r W.
  for (int i = 0; i < 3; ++i) {
    CHECK(dw(0, i) == doctest::Approx(residual * x(0, i)).epsilon(1e-10));
    CHECK(dx(0, i) == doctest::Approx(residual * layer.w(0, i)).epsilon(1e-10));
  }
  CHECK(db(0, 0) == doctest::Approx(residual).epsilon(1e-10));
}

TEST_CASE("constant loss closure yields all-zero gradients") {
  const ScoreNetParams params = init_params(tiny_config(), 10);
  Rng rng(37);
  const PointCloud c0 = random_cloud(rng, 12);
  const PointCloud c1 = random_cloud(rng, 12);
  Eigen::MatrixXd poses(2, 12);
  poses.row(0) = random_pose_vec(rng).transpose();
  poses.row(1) = random_pose_vec(rng).transpose();
  Eigen::VectorXd ts(2);
  ts << 0.4, 0.9;

  GradientSet grads;
  const double loss = backward(
      params, {&c0, &c1}, poses, ts,
      [](const Eigen::MatrixXd& phi) {
        return std::make_pair(3.25,
                              Eigen::MatrixXd::Zero(phi.rows(), 12).eval());
      },
      &grads);
  CHECK(loss == 3.25);
  for_each_tensor(grads, [](const std::string&, Eigen::MatrixXd& m) {
    CHECK(m.cwiseAbs().maxCoeff() == 0.0);
  });
}

TEST_CASE("full-network gradients match central finite differences") {
  ScoreNetParams params = init_params(tiny_config(), 11);
  Rng wrng(38);
  for (DenseLayer* h :
       {&params.head_rx, &params.head_ry, &params.head_s, &params.head_t}) {
    for (Eigen::Index i = 0; i < h->w.size(); ++i) {
      h->w.data()[i] = wrng.normal() * 0.2;
    }
  }

  Rng rng(43);
  std::vector<PointCloud> clouds;
  for (int i = 0; i < 3; ++i) clouds.push_back(random_cloud(rng, 16));
  std::vector<const PointCloud*> cloud_ptrs;
  for (const PointCloud& c : clouds) cloud_ptrs.push_back(&c);
  Eigen::MatrixXd poses(3, 12);
  for (int i = 0; i < 3; ++i) poses.row(i) = random_pose_vec(rng).transpose();
  Eigen::VectorXd ts(3);
  ts << 0.15, 0.55, 0.95;

  // Fixed quadratic loss over the score outputs.
  Eigen::MatrixXd coeff(3, 12);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 12; ++j) coeff(i, j) = rng.normal();
  }
  const LossClosure loss = [&coeff](const Eigen::MatrixXd& phi) {
    const Eigen::MatrixXd c2 = coeff.cwiseProduct(coeff);
    const double value = 0.5 * phi.cwiseProduct(phi).cwiseProduct(c2).sum() +
                         phi.cwiseProduct(coeff).sum();
    Eigen::MatrixXd dphi = phi.cwiseProduct(c2) + coeff;
    return std::make_pair(value, dphi);
  };

  GradientSet grads;
  backward(params, cloud_ptrs, poses, ts, loss, &grads);

  std::vector<double*> theta = flatten(params);
  std::vector<double*> gflat = flatten(grads);
  REQUIRE(theta.size() == gflat.size());

  auto eval_loss = [&]() {
    const BatchForward f = forward_batch(params, cloud_ptrs, poses, ts);
    return loss(f.phi).first;
  };

  const double step = 1e-5;
  int checked = 0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = *theta[i];
    *theta[i] = saved + step;
    const double up = eval_loss();
    *theta[i] = saved - step;
    const double down = eval_loss();
    *theta[i] = saved;
    const double fd = (up - down) / (2.0 * step);
    const double analytic = *gflat[i];
    const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-6});
    CHECK(std::abs(fd - analytic) / denom < 1e-4);
    ++checked;
  }
  CHECK(checked > 700);  // every parameter of the reduced network
}

TEST_CASE("adam leaves parameters alone under zero gradients") {
  ScoreNetParams params = init_params(tiny_config(), 12);
  OptimizerState opt = OptimizerState::create(params);
  adam_step(opt, params, zeros_like(params));
  CHECK(opt.step == 1);
  ScoreNetParams reference = init_params(tiny_config(), 12);
  std::vector<double*> a = flatten(params);
  std::vector<double*> b = flatten(reference);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
}

TEST_CASE("adam first step matches the bias-corrected formula") {
  ScoreNetParams params = init_params(tiny_config(), 13);
  GradientSet grads = zeros_like(params);
  const double before = params.enc[0].w(0, 0);
  grads.enc[0].w(0, 0) = 0.1;
  OptimizerState opt = OptimizerState::create(params, 1e-3);
  adam_step(opt, params, grads);
  // Step 1: mhat = g, vhat = g^2, delta = -lr g / (|g| + eps).
  const double expected = -1e-3 * 0.1 / (0.1 + 1e-8);
  CHECK(params.enc[0].w(0, 0) - before ==
        doctest::Approx(expected).epsilon(1e-9));
  CHECK(params.enc[0].w(1, 0) == init_params(tiny_config(), 13).enc[0].w(1, 0));
}

TEST_CASE("adam descends a 1-D quadratic monotonically") {
  ScoreNetParams params = init_params(tiny_config(), 14);
  params.enc[0].w(0, 0) = 2.0;
  OptimizerState opt = OptimizerState::create(params, 1e-2);
  double prev_loss = 1e300;
  for (int i = 0; i < 10; ++i) {
    const double w = params.enc[0].w(0, 0);
    const double loss = 0.5 * (w - 1.0) * (w - 1.0);
    CHECK(loss < prev_loss);
    prev_loss = loss;
    GradientSet grads = zeros_like(params);
    grads.enc[0].w(0, 0) = w - 1.0;
    adam_step(opt, params, grads);
  }
}

TEST_CASE("adam rejects shape mismatches") {
  ScoreNetParams params = init_params(tiny_config(), 15);
  ScoreNetConfig other = tiny_config();
  other.enc_widths = {4, 8};
  GradientSet bad = zeros_like(init_params(other, 15));
  OptimizerState opt = OptimizerState::create(params);
  CHECK_THROWS_AS(adam_step(opt, params, bad), ShapeMismatch);
}

TEST_CASE("model serialization round trips bit-identically") {
  ScoreNetConfig cfg = tiny_config();
  cfg.trans_scale = 0.4;
  cfg.schedule_eps = 2e-3;
  ScoreNetParams params = init_params(cfg, 16);
  Rng rng(40);
  for_each_tensor(params, [&](const std::string&, Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  });

  const std::string path =
      (fs::temp_directory_path() / "eepose_model_test.teep").string();
  save_params(params, path);
  const ScoreNetParams loaded = load_params(path);

  CHECK(loaded.cfg.trans_scale == cfg.trans_scale);
  CHECK(loaded.cfg.schedule_eps == cfg.schedule_eps);
  CHECK(loaded.cfg.enc_widths == cfg.enc_widths);

  ScoreNetParams mutable_loaded = loaded;
  std::vector<double*> a = flatten(params);
  std::vector<double*> b = flatten(mutable_loaded);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
}

TEST_CASE("model loader rejects truncation, bad magic and bad versions") {
  const std::string path =
      (fs::temp_directory_path() / "eepose_model_bad.teep").string();
  ScoreNetParams params = init_params(tiny_config(), 17);
  save_params(params, path);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  in.close();

  {
    std::ofstream out(path, std::ios::binary);
    out << bytes.substr(0, bytes.size() / 2);
  }
  CHECK_THROWS_AS(load_params(path), FormatError);

  {
    std::string corrupt = bytes;
    corrupt[0] = 'X';
    std::ofstream out(path, std::ios::binary);
    out << corrupt;
  }
  CHECK_THROWS_AS(load_params(path), FormatError);

  {
    std::string corrupt = bytes;
    corrupt[4] = 9;  // unsupported version
    std::ofstream out(path, std::ios::binary);
    out << corrupt;
  }
  CHECK_THROWS_WITH_AS(load_params(path), doctest::Contains("supported"),
                       FormatError);

  CHECK_THROWS_AS(load_params("/nonexistent/model.teep"), ModelMissing);
}
