// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <array>
#include <utility>
#include <vector>

#include "eepose/common.hpp"
#include "json.hpp"

namespace eepose {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec12 = Eigen::Matrix<double, 12, 1>;

/// 3x3 orthonormal matrix with determinant +1. Construction validates the
/// invariants once so downstream code can assume them.
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  static Rotation from_matrix(const Mat3& m);
  static Rotation from_matrix_unchecked(const Mat3& m) { return Rotation(m); }

  const Mat3& matrix() const { return m_; }

  Rotation operator*(const Rotation& o) const { return Rotation(m_ * o.m_); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  Rotation inverse() const { return Rotation(m_.transpose()); }

  Vec3 col(int i) const { return m_.col(i); }

 private:
  explicit Rotation(const Mat3& m) : m_(m) {}
  Mat3 m_;
};

/// Rigid transform: rotation plus translation in meters.
struct Pose {
  Rotation rot;
  Vec3 trans{0.0, 0.0, 0.0};

  Vec3 apply(const Vec3& p) const { return rot * p + trans; }
  Vec3 apply_inverse(const Vec3& p) const {
    return rot.matrix().transpose() * (p - trans);
  }
};

/// Flat 12-vector [rx|ry|s|t]: the two 3-vectors of the continuous rotation
/// representation, per-axis symmetry confidence, and translation.
struct PoseVec12 {
  Vec3 rx{1.0, 0.0, 0.0};
  Vec3 ry{0.0, 1.0, 0.0};
  Vec3 s{0.0, 0.0, 0.0};
  Vec3 t{0.0, 0.0, 0.0};

  Vec12 flat() const {
    Vec12 v;
    v << rx, ry, s, t;
    return v;
  }
  static PoseVec12 from_flat(const Vec12& v) {
    PoseVec12 p;
    p.rx = v.segment<3>(0);
    p.ry = v.segment<3>(3);
    p.s = v.segment<3>(6);
    p.t = v.segment<3>(9);
    return p;
  }
};

/// Per-axis continuous-symmetry indicator in the EE canonical frame.
struct SymmetryFlags {
  std::array<bool, 3> axis{false, false, false};

  bool any() const { return axis[0] || axis[1] || axis[2]; }
  int count() const {
    return static_cast<int>(axis[0]) + static_cast<int>(axis[1]) +
           static_cast<int>(axis[2]);
  }
  bool operator==(const SymmetryFlags& o) const { return axis == o.axis; }

  // Strictly-greater-than-0.5 thresholding of a confidence vector.
  static SymmetryFlags from_confidence(const Vec3& s) {
    SymmetryFlags f;
    for (int i = 0; i < 3; ++i) f.axis[i] = s[i] > 0.5;
    return f;
  }
  Vec3 to_confidence() const {
    return Vec3(axis[0] ? 1.0 : 0.0, axis[1] ? 1.0 : 0.0, axis[2] ? 1.0 : 0.0);
  }
};

// Gram-Schmidt construction of a rotation from the 6D representation.
// Throws DegenerateInput when rx is near zero or ry is near parallel to rx.
Rotation rot6d_to_matrix(const Vec3& rx, const Vec3& ry);

// First two columns of the matrix; inverse of rot6d_to_matrix on SO(3).
std::pair<Vec3, Vec3> matrix_to_rot6d(const Rotation& r);

// Rodrigues rotation about a unit axis, right-hand rule.
Rotation axis_angle(const Vec3& axis, double angle);

// arccos(clamp((trace(r1^T r2) - 1)/2)) in [0, pi].
double geodesic_angle(const Rotation& r1, const Rotation& r2);

// Component-wise arithmetic mean of the 12-vectors. The averaged rx/ry are
// re-orthonormalized only when decoded through rot6d_to_matrix.
PoseVec12 mean_pool_poses(const std::vector<PoseVec12>& candidates);

// For each flagged body axis (x,y,z order), right-composes the rotation about
// that axis that minimizes the geodesic distance to the reference. 360-point
// grid scan followed by golden-section refinement to 1e-8 rad.
Pose refine_symmetric_axis(const Pose& pred, const SymmetryFlags& flags,
                           const Rotation& reference);

// Dataset-wide pose JSON: {"rot": [9 row-major], "t": [3], "s": [3]}.
nlohmann::json pose_to_json(const Pose& pose, const Vec3& s);
std::pair<Pose, Vec3> pose_from_json(const nlohmann::json& j);

}  // namespace eepose
