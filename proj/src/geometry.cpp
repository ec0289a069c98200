// SPDX-License-Identifier: Apache-2.0

#include "eepose/geometry.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>

namespace eepose {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kOrthoTol = 1e-9;
constexpr double kDegenerateTol = 1e-12;

}  // namespace

Rotation Rotation::from_matrix(const Mat3& m) {
  const double ortho = (m.transpose() * m - Mat3::Identity())
                           .cwiseAbs()
                           .maxCoeff();
  if (!(ortho <= kOrthoTol)) {
    throw DegenerateInput("rotation matrix is not orthonormal (|R^T R - I| = " +
                          std::to_string(ortho) + ")");
  }
  if (std::abs(m.determinant() - 1.0) > kOrthoTol) {
    throw DegenerateInput("rotation matrix determinant is not +1");
  }
  return Rotation(m);
}

Rotation rot6d_to_matrix(const Vec3& rx, const Vec3& ry) {
  const double nx = rx.norm();
  if (nx < kDegenerateTol) {
    throw DegenerateInput("rot6d: rx has near-zero norm");
  }
  const Vec3 c1 = rx / nx;
  Vec3 c2 = ry - ry.dot(c1) * c1;
  const double ny = c2.norm();
  if (ny < kDegenerateTol) {
    throw DegenerateInput("rot6d: ry is parallel to rx");
  }
  c2 /= ny;
  const Vec3 c3 = c1.cross(c2);
  Mat3 m;
  m.col(0) = c1;
  m.col(1) = c2;
  m.col(2) = c3;
  return Rotation::from_matrix_unchecked(m);
}

std::pair<Vec3, Vec3> matrix_to_rot6d(const Rotation& r) {
  return {r.matrix().col(0), r.matrix().col(1)};
}

Rotation axis_angle(const Vec3& axis, double angle) {
  if (std::abs(axis.norm() - 1.0) > 1e-9) {
    throw DegenerateInput("axis_angle: axis must be unit length");
  }
  Mat3 k;
  k << 0.0, -axis.z(), axis.y(),  //
      axis.z(), 0.0, -axis.x(),   //
      -axis.y(), axis.x(), 0.0;
  const Mat3 m = Mat3::Identity() + std::sin(angle) * k +
                 (1.0 - std::cos(angle)) * k * k;
  return Rotation::from_matrix_unchecked(m);
}

double geodesic_angle(const Rotation& r1, const Rotation& r2) {
  const double tr = (r1.matrix().transpose() * r2.matrix()).trace();
  const double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

PoseVec12 mean_pool_poses(const std::vector<PoseVec12>& candidates) {
  if (candidates.empty()) {
    throw EmptyInput("mean_pool_poses: no candidates");
  }
  Vec12 acc = Vec12::Zero();
  for (const PoseVec12& c : candidates) acc += c.flat();
  acc /= static_cast<double>(candidates.size());
  return PoseVec12::from_flat(acc);
}

namespace {

// Geodesic distance to the reference after rotating about body axis i.
double refine_objective(const Rotation& pred, int axis_index, double theta,
                        const Rotation& reference) {
  Vec3 a = Vec3::Zero();
  a[axis_index] = 1.0;
  return geodesic_angle(Rotation::from_matrix_unchecked(
                            pred.matrix() * axis_angle(a, theta).matrix()),
                        reference);
}

double golden_section(const Rotation& pred, int axis_index,
                      const Rotation& reference, double lo, double hi,
                      double tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = refine_objective(pred, axis_index, c, reference);
  double fd = refine_objective(pred, axis_index, d, reference);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = refine_objective(pred, axis_index, c, reference);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = refine_objective(pred, axis_index, d, reference);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace

Pose refine_symmetric_axis(const Pose& pred, const SymmetryFlags& flags,
                           const Rotation& reference) {
  Pose out = pred;
  for (int i = 0; i < 3; ++i) {
    if (!flags.axis[i]) continue;
    constexpr int kGridPoints = 360;
    const double step = 2.0 * kPi / kGridPoints;
    double best_theta = 0.0;
    double best_val = refine_objective(out.rot, i, 0.0, reference);
    for (int g = 1; g < kGridPoints; ++g) {
      const double theta = g * step;
      const double val = refine_objective(out.rot, i, theta, reference);
      if (val < best_val) {
        best_val = val;
        best_theta = theta;
      }
    }
    const double theta_star = golden_section(
        out.rot, i, reference, best_theta - step, best_theta + step, 1e-8);
    // Keep the grid winner if refinement drifted uphill near a flat minimum.
    const double refined = refine_objective(out.rot, i, theta_star, reference);
    const double chosen = refined <= best_val ? theta_star : best_theta;
    Vec3 a = Vec3::Zero();
    a[i] = 1.0;
    out.rot = Rotation::from_matrix_unchecked(
        out.rot.matrix() * axis_angle(a, chosen).matrix());
  }
  return out;
}

nlohmann::json pose_to_json(const Pose& pose, const Vec3& s) {
  std::vector<double> rot(9);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) rot[3 * r + c] = pose.rot.matrix()(r, c);
  }
  return nlohmann::json{
      {"rot", rot},
      {"t", {pose.trans.x(), pose.trans.y(), pose.trans.z()}},
      {"s", {s.x(), s.y(), s.z()}},
  };
}

std::pair<Pose, Vec3> pose_from_json(const nlohmann::json& j) {
  if (!j.contains("rot") || !j.contains("t")) {
    throw FormatError("pose JSON requires \"rot\" and \"t\" fields");
  }
  const auto& rot = j.at("rot");
  const auto& t = j.at("t");
  if (rot.size() != 9 || t.size() != 3) {
    throw FormatError("pose JSON: \"rot\" must have 9 entries, \"t\" 3");
  }
  Mat3 m;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m(r, c) = rot.at(3 * r + c).get<double>();
  }
  Pose pose;
  pose.rot = Rotation::from_matrix(m);
  pose.trans = Vec3(t.at(0).get<double>(), t.at(1).get<double>(),
                    t.at(2).get<double>());
  Vec3 s = Vec3::Zero();
  if (j.contains("s")) {
    const auto& sj = j.at("s");
    if (sj.size() != 3) throw FormatError("pose JSON: \"s\" must have 3 entries");
    s = Vec3(sj.at(0).get<double>(), sj.at(1).get<double>(),
             sj.at(2).get<double>());
  }
  return {pose, s};
}

}  // namespace eepose
