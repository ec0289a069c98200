// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>
#include <vector>

#include "eepose/common.hpp"
#include "eepose/geometry.hpp"
#include "eepose/metrics.hpp"

namespace eepose {

/// Fully connected layer; rows of the input are batch items.
struct DenseLayer {
  enum class Act { kRelu, kNone };

  Eigen::MatrixXd w;  // out x in
  Eigen::MatrixXd b;  // out x 1
  Act act = Act::kRelu;

  static DenseLayer make(int in, int out, Act act);

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  // Forward that keeps the pre-activation for the backward pass.
  Eigen::MatrixXd forward_pre(const Eigen::MatrixXd& x,
                              Eigen::MatrixXd* z) const;
  // Accumulates dw/db and returns the gradient w.r.t. the input.
  Eigen::MatrixXd backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z,
                           const Eigen::MatrixXd& dy, Eigen::MatrixXd* dw,
                           Eigen::MatrixXd* db) const;
};

/// Network topology plus the fixed decode metadata carried with the weights.
struct ScoreNetConfig {
  std::vector<int> enc_widths{64, 128, 256};  // shared per-point MLP, input 3
  int global_width = 256;                     // post-pool layer
  int time_freq_pairs = 32;                   // sinusoid dim = 2 * pairs
  int time_width = 64;
  std::vector<int> pose_widths{64, 64};  // input 12
  std::vector<int> trunk_widths{256, 256};

  // Variance-exploding preconditioning: the pose input is scaled by
  // 1/sqrt(sigma(t)^2 + sigma_data^2) and the head output by 1/sigma(t), so
  // both the network inputs and its regression targets stay O(1) across the
  // whole noise range. Zero heads still give a zero score.
  bool scale_output = true;
  double scale_sigma_min = 0.01;
  double scale_sigma_max = 5.0;
  double sigma_data = 0.5;
  double schedule_eps = 1e-3;  // minimum time of the training schedule

  // Translation components are diffused divided by this bound (meters).
  double trans_scale = 1.0;
  // Constant input normalization for the point encoder; desk-scale clouds in
  // meters are small against unit-variance embeddings without it.
  double cloud_scale = 4.0;
  // Zero-center the cloud before encoding. Absolute position swamps the
  // orientation signal in max-pooled features; the estimator adds the
  // centroid back to the decoded translation.
  bool center_cloud = true;

  int trunk_input_dim() const {
    return global_width + time_width + pose_widths.back();
  }
  double reference_sigma(double t) const {
    return scale_sigma_min * std::pow(scale_sigma_max / scale_sigma_min, t);
  }
};

/// All learnable tensors of the score network.
struct ScoreNetParams {
  ScoreNetConfig cfg;
  std::vector<DenseLayer> enc;      // per-point shared MLP
  DenseLayer global;                // pooled feature -> global feature
  DenseLayer time_fc;               // sinusoid -> time embedding
  std::vector<DenseLayer> pose_fc;  // 12 -> pose embedding
  std::vector<DenseLayer> trunk;
  DenseLayer head_rx, head_ry, head_s, head_t;  // linear 3-vector heads
};

// Glorot-uniform weights, zero biases, zero-initialized heads (so the
// untrained score is exactly zero).
ScoreNetParams init_params(const ScoreNetConfig& cfg, std::uint64_t seed);

// Same layer shapes, all values zero. Used for gradients and moments.
ScoreNetParams zeros_like(const ScoreNetParams& p);
using GradientSet = ScoreNetParams;

// Visits every tensor in a fixed order as (name, matrix).
template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  auto layer = [&fn](const std::string& name, auto& l) {
    fn(name + ".w", l.w);
    fn(name + ".b", l.b);
  };
  for (std::size_t i = 0; i < p.enc.size(); ++i) {
    layer("enc" + std::to_string(i), p.enc[i]);
  }
  layer("global", p.global);
  layer("time", p.time_fc);
  for (std::size_t i = 0; i < p.pose_fc.size(); ++i) {
    layer("pose" + std::to_string(i), p.pose_fc[i]);
  }
  for (std::size_t i = 0; i < p.trunk.size(); ++i) {
    layer("trunk" + std::to_string(i), p.trunk[i]);
  }
  layer("head_rx", p.head_rx);
  layer("head_ry", p.head_ry);
  layer("head_s", p.head_s);
  layer("head_t", p.head_t);
}

// Sinusoidal features of t: [sin(w_k t), cos(w_k t)] over log-spaced w_k.
Eigen::VectorXd time_features(const ScoreNetConfig& cfg, double t);

// Column means computed over sorted values, so permuting the rows cannot
// change the summation order (keeps encode_cloud bit-for-bit permutation
// invariant).
Vec3 order_invariant_centroid(const PointCloud& cloud);

/// Cached encoder state for one cloud; the per-point activations are
/// recomputed for the pooled argmax rows during the backward pass.
struct EncodeCache {
  Eigen::MatrixXd x0;       // N x 3
  Eigen::VectorXd pooled;   // coordinate-wise max over points
  std::vector<int> argmax;  // winning row per pooled feature
  Eigen::VectorXd global_z;
  Eigen::VectorXd feature;  // post-global, consumed by the trunk
};

EncodeCache encode_cloud_cached(const ScoreNetParams& p, const PointCloud& cloud);

// Permutation-invariant cloud feature: shared per-point MLP, coordinate-wise
// max over points, global MLP.
Eigen::VectorXd encode_cloud(const ScoreNetParams& p, const PointCloud& cloud);

/// Everything the backward pass needs from one batched forward evaluation.
/// Identical cloud pointers within a batch share one encoder evaluation.
struct BatchForward {
  std::vector<EncodeCache> enc;  // one per distinct cloud
  std::vector<int> enc_index;    // batch row -> enc entry
  Eigen::MatrixXd time_in, time_z;  // B x sinusoid / B x time_width
  std::vector<Eigen::MatrixXd> pose_x, pose_z;
  std::vector<Eigen::MatrixXd> trunk_x, trunk_z;
  Eigen::MatrixXd trunk_out;
  Eigen::VectorXd out_scale;  // per-row output multiplier
  Eigen::MatrixXd phi;        // B x 12 score estimates
};

BatchForward forward_batch(const ScoreNetParams& p,
                           const std::vector<const PointCloud*>& clouds,
                           const Eigen::MatrixXd& poses,  // B x 12
                           const Eigen::VectorXd& ts);

// Reverse-mode gradients of a scalar loss given dL/dphi.
GradientSet backward_batch(const ScoreNetParams& p, const BatchForward& f,
                           const Eigen::MatrixXd& dphi);

// Score estimate in [rx|ry|s|t] order for a single observation.
Vec12 forward_score(const ScoreNetParams& p, const PoseVec12& pose, double t,
                    const PointCloud& cloud);

// Trunk-only evaluation against a precomputed cloud feature; the encoder does
// not depend on (pose, t), so samplers reuse one feature per cloud.
Vec12 score_from_feature(const ScoreNetParams& p,
                         const Eigen::VectorXd& feature, const Vec12& pose,
                         double t);

/// Loss closure: maps the batch score estimates to (loss, dL/dphi).
using LossClosure = std::function<std::pair<double, Eigen::MatrixXd>(
    const Eigen::MatrixXd& phi)>;

// Runs the batched forward, applies the closure, and backpropagates. Throws
// NonFiniteLoss when the scalar loss is not finite.
double backward(const ScoreNetParams& p,
                const std::vector<const PointCloud*>& clouds,
                const Eigen::MatrixXd& poses, const Eigen::VectorXd& ts,
                const LossClosure& loss, GradientSet* grads);

/// Adam accumulators, shape-congruent with the parameters.
struct OptimizerState {
  GradientSet m, v;
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerState create(const ScoreNetParams& params, double lr = 1e-3);
};

// Bias-corrected adaptive-moment update, in place.
void adam_step(OptimizerState& state, ScoreNetParams& params,
               const GradientSet& grads);

// Model file: magic "TEEP", version, then named tensors as 64-bit values.
void save_params(const ScoreNetParams& params, const std::string& path);
ScoreNetParams load_params(const std::string& path);

}  // namespace eepose
