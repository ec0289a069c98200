// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "eepose/common.hpp"
#include "eepose/geometry.hpp"
#include "eepose/metrics.hpp"
#include "eepose/scorenet.hpp"

namespace eepose {

/// Variance-exploding noise process: sigma(t) = sigma_min * (sigma_max /
/// sigma_min)^t, monotone increasing on [eps, 1].
struct SdeSchedule {
  double sigma_min = 0.01;
  double sigma_max = 5.0;
  double eps = 1e-3;

  void validate() const;
};

double sigma_of_t(const SdeSchedule& s, double t);
// sigma(t) * d sigma / dt = sigma(t)^2 * ln(sigma_max / sigma_min).
double sigma_dsigma(const SdeSchedule& s, double t);

// p0 + sigma(t) * z, z standard Gaussian in R^12.
Vec12 perturb_with_noise(const Vec12& p0, double t, const SdeSchedule& s,
                         const Vec12& z);
PoseVec12 perturb(const PoseVec12& p0, double t, const SdeSchedule& s, Rng& rng);

struct TrainSample {
  Vec12 pose;  // [rx|ry|s|t], translation already divided by trans_scale
  const PointCloud* cloud = nullptr;
};

struct TrainConfig {
  int epochs = 60;
  int batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  SdeSchedule schedule;

  void validate() const;
};

struct SampleConfig {
  int k = 50;
  int ode_steps = 500;
  SdeSchedule schedule;
  std::uint64_t seed = 0;

  void validate() const;
};

// Denoising score matching: per sample draw t ~ U(eps, 1), perturb the pose,
// and penalize sigma(t)^2 * |score - (p0 - pt) / sigma(t)^2|^2; batch mean.
double dsm_loss(const ScoreNetParams& params,
                const std::vector<TrainSample>& batch, const SdeSchedule& s,
                Rng& rng);

// Same draws, also producing parameter gradients.
double dsm_loss_grad(const ScoreNetParams& params,
                     const std::vector<TrainSample>& batch,
                     const SdeSchedule& s, Rng& rng, GradientSet* grads);

/// Score substitute for oracle tests: (sample index, perturbed pose, t) -> score.
using BatchScoreFn =
    std::function<Vec12(std::size_t, const Vec12&, double)>;

// dsm_loss with an arbitrary score function in place of the network. Uses the
// same noise draws as dsm_loss for a given rng state.
double dsm_loss_with_score(const BatchScoreFn& score,
                           const std::vector<TrainSample>& batch,
                           const SdeSchedule& s, Rng& rng);

// Shuffled minibatch adam on dsm_loss; returns per-epoch mean losses.
std::vector<double> train(ScoreNetParams& params,
                          const std::vector<TrainSample>& dataset,
                          const TrainConfig& cfg);

/// Score function bound to one observation: (pose state, t) -> score.
using ScoreFn = std::function<Vec12(const Vec12&, double)>;

// Probability-flow sampling: initialize p(1) ~ N(0, sigma_max^2 I) and run
// explicit Euler from t = 1 down to t = eps with drift
// -sigma(t) * dsigma(t) * score. Throws NonFiniteState on NaN/Inf states.
Vec12 sample_ode_with_score(const ScoreFn& score, const SampleConfig& cfg,
                            Rng& rng);
Vec12 sample_ode(const ScoreNetParams& params, const PointCloud& cloud,
                 const SampleConfig& cfg, Rng& rng);

struct EstimateResult {
  Pose pose;
  SymmetryFlags flags;
  Vec3 s{0.0, 0.0, 0.0};  // pooled symmetry confidence, clamped to [0, 1]
  PoseVec12 pooled;       // raw mean-pooled 12-vector (normalized translation)
};

// K candidates from the ODE sampler, mean pooling, Gram-Schmidt decode,
// 0.5-thresholded symmetry flags, and optional symmetric-axis refinement
// against a reference orientation.
EstimateResult estimate_pose(const ScoreNetParams& params,
                             const PointCloud& cloud, const SampleConfig& cfg,
                             const std::optional<Rotation>& refine_reference = {});

}  // namespace eepose
