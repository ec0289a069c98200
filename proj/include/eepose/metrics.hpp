// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "eepose/common.hpp"
#include "eepose/geometry.hpp"

namespace eepose {

/// N x 3 array of points in meters.
struct PointCloud {
  Eigen::Matrix<double, Eigen::Dynamic, 3> pts;

  PointCloud() = default;
  explicit PointCloud(Eigen::Index n) : pts(n, 3) {}

  Eigen::Index size() const { return pts.rows(); }
  bool empty() const { return pts.rows() == 0; }
  Vec3 point(Eigen::Index i) const { return pts.row(i).transpose(); }
  Vec3 centroid() const {
    return pts.colwise().mean().transpose();
  }
  PointCloud transformed(const Pose& pose) const;
  PointCloud transformed_inverse(const Pose& pose) const;
};

// Squared Euclidean distances, |p1| x |p2|, clamped at zero.
Eigen::MatrixXd pairwise_sqdist(const PointCloud& p1, const PointCloud& p2);

// 0.5 * [mean_i min_j |x_i - y_j| + mean_j min_i |y_j - x_i|], unsquared.
double chamfer(const PointCloud& p1, const PointCloud& p2);

// max of the two directed maxima of nearest-neighbor distances.
double hausdorff(const PointCloud& p1, const PointCloud& p2);

// (1/n) * min over permutations of the summed pair distances, solved exactly
// by the Hungarian method. Requires |p1| == |p2| <= 512.
double emd_exact(const PointCloud& p1, const PointCloud& p2);

// Entropic-regularized transport cost with uniform weights 1/n, 1/m,
// log-domain updates and epsilon scaling. Throws NonConvergence when the
// marginal violation exceeds 1e-6 after `iters` total iterations.
double emd_sinkhorn(const PointCloud& p1, const PointCloud& p2, double reg,
                    int iters);

// Rotation error that discounts rotations about flagged symmetric body axes:
// no flags -> geodesic angle; one flag -> angle between the mapped axes;
// two or more flags -> 0.
double rotation_error_symaware(const Rotation& pred, const Rotation& gt,
                               const SymmetryFlags& flags);

double translation_error(const Pose& pred, const Pose& gt);

/// Error margin pair, e.g. 5 degrees / 2 cm.
struct ThresholdSpec {
  double rot_deg = 5.0;
  double trans_m = 0.02;

  std::string label() const;  // "5deg2cm"
};

struct PoseError {
  double rot_rad = 0.0;
  double trans_m = 0.0;
};

// Fraction of samples with rot error strictly below rot_deg AND trans error
// strictly below trans_m, per threshold.
std::vector<double> map_at_thresholds(const std::vector<PoseError>& errors,
                                      const std::vector<ThresholdSpec>& thresholds);

enum class Centering { kObjectCentric, kEeCentric };

std::string centering_name(Centering c);

struct ConsistencyEntry {
  std::string category;
  Centering centering = Centering::kObjectCentric;
  PointCloud cloud;
};

struct MetricStats {
  double mean = 0.0;
  double variance = 0.0;  // population variance over the pairwise values
};

struct ConsistencyRow {
  std::string category;
  Centering centering = Centering::kObjectCentric;
  MetricStats cd, hd, emd;
  int cloud_count = 0;
};

// All unordered pairwise CD/HD/EMD values within each (category, centering)
// group. Clouds must already be in their canonical frames with equal point
// counts (EMD is exact assignment). Throws InsufficientData when a group has
// fewer than two clouds.
std::vector<ConsistencyRow> consistency_report(
    const std::vector<ConsistencyEntry>& dataset);

}  // namespace eepose
