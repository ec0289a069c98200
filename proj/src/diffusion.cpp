// SPDX-License-Identifier: Apache-2.0

#include "eepose/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace eepose {

void SdeSchedule::validate() const {
  if (!(sigma_min > 0.0)) throw ConfigError("schedule: sigma_min must be positive");
  if (!(sigma_max > sigma_min)) {
    throw ConfigError("schedule: sigma_max must exceed sigma_min");
  }
  if (!(eps > 0.0 && eps < 1.0)) throw ConfigError("schedule: eps must be in (0, 1)");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train: epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("train: learning rate must be positive");
  schedule.validate();
}

void SampleConfig::validate() const {
  if (k < 1) throw ConfigError("sample: k must be at least 1");
  if (ode_steps < 1) throw ConfigError("sample: ode_steps must be at least 1");
  schedule.validate();
}

double sigma_of_t(const SdeSchedule& s, double t) {
  return s.sigma_min * std::pow(s.sigma_max / s.sigma_min, t);
}

double sigma_dsigma(const SdeSchedule& s, double t) {
  const double sig = sigma_of_t(s, t);
  return sig * sig * std::log(s.sigma_max / s.sigma_min);
}

Vec12 perturb_with_noise(const Vec12& p0, double t, const SdeSchedule& s,
                         const Vec12& z) {
  return p0 + sigma_of_t(s, t) * z;
}

PoseVec12 perturb(const PoseVec12& p0, double t, const SdeSchedule& s,
                  Rng& rng) {
  Vec12 z;
  for (int i = 0; i < 12; ++i) z[i] = rng.normal();
  return PoseVec12::from_flat(perturb_with_noise(p0.flat(), t, s, z));
}

namespace {

struct PerturbedBatch {
  std::vector<const PointCloud*> clouds;
  Eigen::MatrixXd poses;    // B x 12 perturbed states
  Eigen::VectorXd ts;
  Eigen::MatrixXd targets;  // B x 12, (p0 - pt) / sigma^2
  Eigen::VectorXd weights;  // lambda(t) = sigma(t)^2
};

// One draw of (t, z) per sample; shared by every loss entry point so an
// injected oracle sees exactly the same perturbations as the network.
PerturbedBatch draw_perturbations(const std::vector<TrainSample>& batch,
                                  const SdeSchedule& s, Rng& rng) {
  if (batch.empty()) throw EmptyInput("dsm_loss: empty batch");
  const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  PerturbedBatch out;
  out.clouds.reserve(batch.size());
  out.poses.resize(b, 12);
  out.ts.resize(b);
  out.targets.resize(b, 12);
  out.weights.resize(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const TrainSample& smp = batch[static_cast<std::size_t>(i)];
    out.clouds.push_back(smp.cloud);
    const double t = s.eps + (1.0 - s.eps) * rng.uniform();
    Vec12 z;
    for (int c = 0; c < 12; ++c) z[c] = rng.normal();
    const double sig = sigma_of_t(s, t);
    const Vec12 pt = smp.pose + sig * z;
    out.ts[i] = t;
    out.poses.row(i) = pt.transpose();
    out.targets.row(i) = ((smp.pose - pt) / (sig * sig)).transpose();
    out.weights[i] = sig * sig;
  }
  return out;
}

double weighted_residual_loss(const PerturbedBatch& pb,
                              const Eigen::MatrixXd& phi,
                              Eigen::MatrixXd* dphi) {
  const Eigen::Index b = phi.rows();
  const Eigen::MatrixXd residual = phi - pb.targets;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    loss += pb.weights[i] * residual.row(i).squaredNorm();
  }
  loss /= static_cast<double>(b);
  if (dphi != nullptr) {
    *dphi = residual;
    dphi->array().colwise() *=
        2.0 * pb.weights.array() / static_cast<double>(b);
  }
  if (!std::isfinite(loss)) throw NonFiniteLoss("dsm_loss is not finite");
  return loss;
}

}  // namespace

double dsm_loss(const ScoreNetParams& params,
                const std::vector<TrainSample>& batch, const SdeSchedule& s,
                Rng& rng) {
  const PerturbedBatch pb = draw_perturbations(batch, s, rng);
  const BatchForward f = forward_batch(params, pb.clouds, pb.poses, pb.ts);
  return weighted_residual_loss(pb, f.phi, nullptr);
}

double dsm_loss_grad(const ScoreNetParams& params,
                     const std::vector<TrainSample>& batch,
                     const SdeSchedule& s, Rng& rng, GradientSet* grads) {
  const PerturbedBatch pb = draw_perturbations(batch, s, rng);
  return backward(
      params, pb.clouds, pb.poses, pb.ts,
      [&pb](const Eigen::MatrixXd& phi) {
        Eigen::MatrixXd dphi;
        const double loss = weighted_residual_loss(pb, phi, &dphi);
        return std::make_pair(loss, dphi);
      },
      grads);
}

double dsm_loss_with_score(const BatchScoreFn& score,
                           const std::vector<TrainSample>& batch,
                           const SdeSchedule& s, Rng& rng) {
  const PerturbedBatch pb = draw_perturbations(batch, s, rng);
  Eigen::MatrixXd phi(pb.poses.rows(), 12);
  for (Eigen::Index i = 0; i < pb.poses.rows(); ++i) {
    phi.row(i) = score(static_cast<std::size_t>(i), pb.poses.row(i).transpose(),
                       pb.ts[i])
                     .transpose();
  }
  return weighted_residual_loss(pb, phi, nullptr);
}

std::vector<double> train(ScoreNetParams& params,
                          const std::vector<TrainSample>& dataset,
                          const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw InsufficientData("train: empty training split");

  OptimizerState opt = OptimizerState::create(params, cfg.lr);
  std::vector<double> history;
  history.reserve(cfg.epochs);
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", epoch));
    shuffle_rng.shuffle(order);
    Rng noise_rng(derive_seed(cfg.seed, "noise", epoch));

    double epoch_loss = 0.0;
    int batches = 0;
    const std::size_t bsz = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t start = 0; start < order.size(); start += bsz) {
      // Batches are padded by wrapping around the shuffled order, so tiny
      // datasets still train on full batches of independent perturbations.
      std::vector<TrainSample> batch;
      batch.reserve(bsz);
      for (std::size_t i = start; i < start + bsz; ++i) {
        batch.push_back(dataset[order[i % order.size()]]);
      }
      GradientSet grads;
      double loss;
      try {
        loss = dsm_loss_grad(params, batch, cfg.schedule, noise_rng, &grads);
      } catch (const NonFiniteLoss& e) {
        throw NonFiniteLoss(std::string(e.what()) + " (epoch " +
                            std::to_string(epoch) + ", batch " +
                            std::to_string(batches) + ")");
      }
      adam_step(opt, params, grads);
      epoch_loss += loss;
      ++batches;
    }
    history.push_back(epoch_loss / std::max(1, batches));
  }
  return history;
}

Vec12 sample_ode_with_score(const ScoreFn& score, const SampleConfig& cfg,
                            Rng& rng) {
  cfg.validate();
  Vec12 p;
  for (int i = 0; i < 12; ++i) p[i] = cfg.schedule.sigma_max * rng.normal();

  const double dt = (1.0 - cfg.schedule.eps) / cfg.ode_steps;
  for (int k = 0; k < cfg.ode_steps; ++k) {
    const double t = 1.0 - k * dt;
    const Vec12 phi = score(p, t);
    p += dt * sigma_dsigma(cfg.schedule, t) * phi;
    if (!p.allFinite()) {
      throw NonFiniteState("sample_ode: non-finite state at step " +
                           std::to_string(k));
    }
  }
  return p;
}

Vec12 sample_ode(const ScoreNetParams& params, const PointCloud& cloud,
                 const SampleConfig& cfg, Rng& rng) {
  const Eigen::VectorXd feature = encode_cloud(params, cloud);
  return sample_ode_with_score(
      [&](const Vec12& pose, double t) {
        return score_from_feature(params, feature, pose, t);
      },
      cfg, rng);
}

EstimateResult estimate_pose(const ScoreNetParams& params,
                             const PointCloud& cloud, const SampleConfig& cfg,
                             const std::optional<Rotation>& refine_reference) {
  cfg.validate();
  const Eigen::VectorXd feature = encode_cloud(params, cloud);
  const ScoreFn score = [&](const Vec12& pose, double t) {
    return score_from_feature(params, feature, pose, t);
  };

  std::vector<PoseVec12> candidates;
  candidates.reserve(cfg.k);
  for (int i = 0; i < cfg.k; ++i) {
    Rng rng(derive_seed(cfg.seed, "candidate", i));
    candidates.push_back(
        PoseVec12::from_flat(sample_ode_with_score(score, cfg, rng)));
  }

  EstimateResult out;
  out.pooled = mean_pool_poses(candidates);
  out.s = out.pooled.s.cwiseMax(0.0).cwiseMin(1.0);
  out.flags = SymmetryFlags::from_confidence(out.s);
  out.pose.rot = rot6d_to_matrix(out.pooled.rx, out.pooled.ry);
  out.pose.trans = out.pooled.t * params.cfg.trans_scale;
  if (params.cfg.center_cloud) {
    // The model works in centroid-anchored coordinates.
    out.pose.trans += order_invariant_centroid(cloud);
  }
  if (refine_reference.has_value() && out.flags.any()) {
    out.pose = refine_symmetric_axis(out.pose, out.flags, *refine_reference);
  }
  return out;
}

}  // namespace eepose
