// SPDX-License-Identifier: Apache-2.0

#include "eepose/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

namespace eepose {

namespace {

void require_nonempty(const PointCloud& p, const char* who) {
  if (p.empty()) throw EmptyCloud(std::string(who) + ": empty point cloud");
}

std::string trim_number(double v) {
  char buf[32];
  if (v == std::floor(v) && std::abs(v) < 1e6) {
    std::snprintf(buf, sizeof(buf), "%d", static_cast<int>(v));
  } else {
    std::snprintf(buf, sizeof(buf), "%g", v);
  }
  return buf;
}

}  // namespace

PointCloud PointCloud::transformed(const Pose& pose) const {
  PointCloud out;
  out.pts = (pts * pose.rot.matrix().transpose()).rowwise() +
            pose.trans.transpose();
  return out;
}

PointCloud PointCloud::transformed_inverse(const Pose& pose) const {
  PointCloud out;
  out.pts = (pts.rowwise() - pose.trans.transpose()) * pose.rot.matrix();
  return out;
}

Eigen::MatrixXd pairwise_sqdist(const PointCloud& p1, const PointCloud& p2) {
  const Eigen::VectorXd n1 = p1.pts.rowwise().squaredNorm();
  const Eigen::VectorXd n2 = p2.pts.rowwise().squaredNorm();
  Eigen::MatrixXd d = -2.0 * (p1.pts * p2.pts.transpose());
  d.colwise() += n1;
  d.rowwise() += n2.transpose();
  return d.cwiseMax(0.0);
}

namespace {

// Nearest-neighbor distances row-wise. The GEMM expansion locates each
// nearest neighbor; the returned distance is recomputed exactly so that
// identical clouds yield exact zeros.
Eigen::VectorXd nn_distances(const Eigen::MatrixXd& d2, const PointCloud& from,
                             const PointCloud& to) {
  Eigen::VectorXd out(d2.rows());
  for (Eigen::Index i = 0; i < d2.rows(); ++i) {
    Eigen::Index j = 0;
    d2.row(i).minCoeff(&j);
    out[i] = (from.pts.row(i) - to.pts.row(j)).norm();
  }
  return out;
}

// Exact |p1| x |p2| Euclidean distance matrix for the transport solvers.
Eigen::MatrixXd exact_dist_matrix(const PointCloud& p1, const PointCloud& p2) {
  Eigen::MatrixXd d(p1.size(), p2.size());
  for (Eigen::Index i = 0; i < p1.size(); ++i) {
    d.row(i) = (p2.pts.rowwise() - p1.pts.row(i)).rowwise().norm().transpose();
  }
  return d;
}

}  // namespace

double chamfer(const PointCloud& p1, const PointCloud& p2) {
  require_nonempty(p1, "chamfer");
  require_nonempty(p2, "chamfer");
  const Eigen::MatrixXd d2 = pairwise_sqdist(p1, p2);
  const double fwd = nn_distances(d2, p1, p2).mean();
  const double bwd = nn_distances(d2.transpose(), p2, p1).mean();
  return 0.5 * (fwd + bwd);
}

double hausdorff(const PointCloud& p1, const PointCloud& p2) {
  require_nonempty(p1, "hausdorff");
  require_nonempty(p2, "hausdorff");
  const Eigen::MatrixXd d2 = pairwise_sqdist(p1, p2);
  const double fwd = nn_distances(d2, p1, p2).maxCoeff();
  const double bwd = nn_distances(d2.transpose(), p2, p1).maxCoeff();
  return std::max(fwd, bwd);
}

namespace {

// O(n^3) Hungarian method with potentials on a square cost matrix.
// Returns the minimal assignment cost.
double hungarian_min_cost(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j) total += cost(p[j] - 1, j - 1);
  return total;
}

}  // namespace

double emd_exact(const PointCloud& p1, const PointCloud& p2) {
  require_nonempty(p1, "emd_exact");
  require_nonempty(p2, "emd_exact");
  if (p1.size() != p2.size()) {
    throw SizeMismatch("emd_exact: clouds must have equal point counts (" +
                       std::to_string(p1.size()) + " vs " +
                       std::to_string(p2.size()) + ")");
  }
  if (p1.size() > 512) {
    throw TooLarge("emd_exact: assignment limited to 512 points, got " +
                   std::to_string(p1.size()));
  }
  const Eigen::MatrixXd cost = exact_dist_matrix(p1, p2);
  return hungarian_min_cost(cost) / static_cast<double>(p1.size());
}

namespace {

// Log-domain potential update toward the row marginals of exp((f+g-C)/reg):
// f_i = reg * (log a - logsumexp_j((g_j - C_ij) / reg)). Vectorized over rows.
void update_potential(const Eigen::MatrixXd& cost, double reg,
                      const Eigen::VectorXd& other, double log_marginal,
                      Eigen::VectorXd* pot) {
  Eigen::MatrixXd m = (-cost).rowwise() + other.transpose();
  m /= reg;
  const Eigen::VectorXd rmax = m.rowwise().maxCoeff();
  m.colwise() -= rmax;
  const Eigen::VectorXd lse =
      rmax.array() + m.array().exp().rowwise().sum().log();
  *pot = reg * (log_marginal - lse.array());
}

double row_marginal_violation(const Eigen::MatrixXd& cost, double reg,
                              const Eigen::VectorXd& f,
                              const Eigen::VectorXd& g, double a) {
  Eigen::MatrixXd m = ((-cost).rowwise() + g.transpose()).colwise() + f;
  const Eigen::VectorXd row_sums = (m / reg).array().exp().rowwise().sum();
  return (row_sums.array() - a).abs().maxCoeff();
}

}  // namespace

double emd_sinkhorn(const PointCloud& p1, const PointCloud& p2, double reg,
                    int iters) {
  require_nonempty(p1, "emd_sinkhorn");
  require_nonempty(p2, "emd_sinkhorn");
  if (reg <= 0.0) throw ConfigError("emd_sinkhorn: reg must be positive");
  if (iters <= 0) throw ConfigError("emd_sinkhorn: iters must be positive");

  const Eigen::Index n = p1.size();
  const Eigen::Index m = p2.size();
  const double a = 1.0 / static_cast<double>(n);
  const double b = 1.0 / static_cast<double>(m);
  const Eigen::MatrixXd cost = exact_dist_matrix(p1, p2);
  const Eigen::MatrixXd cost_t = cost.transpose();

  // Epsilon scaling: geometric descent from a coarse regularizer warm-starts
  // the potentials before the sharp final stage.
  std::vector<double> stages;
  double cur = std::max(cost.maxCoeff() * 0.5, reg);
  while (cur > reg * 1.0001) {
    stages.push_back(cur);
    cur *= 0.35;
  }
  stages.push_back(reg);

  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(m);
  int budget = iters;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const double r = stages[s];
    const bool final_stage = (s + 1 == stages.size());
    const double tol = final_stage ? 5e-7 : 1e-4;
    int since_check = 0;
    while (budget > 0) {
      --budget;
      update_potential(cost, r, g, std::log(a), &f);
      update_potential(cost_t, r, f, std::log(b), &g);
      // The violation scan costs one more matrix pass; amortize it.
      if (++since_check >= (final_stage ? 25 : 5) || budget == 0) {
        since_check = 0;
        if (row_marginal_violation(cost, r, f, g, a) <= tol) break;
      }
    }
  }
  if (row_marginal_violation(cost, reg, f, g, a) > 1e-6) {
    throw NonConvergence("emd_sinkhorn: marginal violation above 1e-6 after " +
                         std::to_string(iters) + " iterations");
  }
  const Eigen::MatrixXd plan =
      ((((-cost).rowwise() + g.transpose()).colwise() + f) / reg).array().exp();
  return plan.cwiseProduct(cost).sum();
}

double rotation_error_symaware(const Rotation& pred, const Rotation& gt,
                               const SymmetryFlags& flags) {
  const int n = flags.count();
  if (n == 0) return geodesic_angle(pred, gt);
  if (n >= 2) return 0.0;
  int axis = 0;
  for (int i = 0; i < 3; ++i) {
    if (flags.axis[i]) axis = i;
  }
  const Vec3 pa = pred.matrix().col(axis);
  const Vec3 ga = gt.matrix().col(axis);
  return std::acos(std::clamp(pa.dot(ga), -1.0, 1.0));
}

double translation_error(const Pose& pred, const Pose& gt) {
  return (pred.trans - gt.trans).norm();
}

std::string ThresholdSpec::label() const {
  return trim_number(rot_deg) + "deg" + trim_number(trans_m * 100.0) + "cm";
}

std::vector<double> map_at_thresholds(
    const std::vector<PoseError>& errors,
    const std::vector<ThresholdSpec>& thresholds) {
  if (errors.empty()) throw EmptyInput("map_at_thresholds: no errors");
  constexpr double kDegToRad = 3.14159265358979323846 / 180.0;
  std::vector<double> out;
  out.reserve(thresholds.size());
  for (const ThresholdSpec& th : thresholds) {
    if (th.rot_deg <= 0.0 || th.trans_m <= 0.0) {
      throw ConfigError("threshold margins must be strictly positive");
    }
    int hits = 0;
    for (const PoseError& e : errors) {
      if (e.rot_rad < th.rot_deg * kDegToRad && e.trans_m < th.trans_m) ++hits;
    }
    out.push_back(static_cast<double>(hits) /
                  static_cast<double>(errors.size()));
  }
  return out;
}

std::string centering_name(Centering c) {
  return c == Centering::kObjectCentric ? "object_centric" : "ee_centric";
}

namespace {

MetricStats stats_of(const std::vector<double>& values) {
  MetricStats s;
  double acc = 0.0;
  for (double v : values) acc += v;
  s.mean = acc / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.variance = var / static_cast<double>(values.size());
  return s;
}

}  // namespace

std::vector<ConsistencyRow> consistency_report(
    const std::vector<ConsistencyEntry>& dataset) {
  // Group by (category, centering), preserving first-seen category order.
  std::vector<std::pair<std::string, Centering>> order;
  std::map<std::pair<std::string, int>, std::vector<const PointCloud*>> groups;
  for (const ConsistencyEntry& e : dataset) {
    const auto key = std::make_pair(e.category, static_cast<int>(e.centering));
    if (groups.find(key) == groups.end()) {
      order.emplace_back(e.category, e.centering);
    }
    groups[key].push_back(&e.cloud);
  }
  if (groups.empty()) throw InsufficientData("consistency_report: no clouds");

  std::vector<ConsistencyRow> rows;
  for (const auto& [category, centering] : order) {
    const auto& clouds =
        groups.at(std::make_pair(category, static_cast<int>(centering)));
    if (clouds.size() < 2) {
      throw InsufficientData("consistency_report: group " + category + "/" +
                             centering_name(centering) +
                             " has fewer than 2 clouds");
    }
    std::vector<double> cds, hds, emds;
    for (std::size_t i = 0; i < clouds.size(); ++i) {
      for (std::size_t j = i + 1; j < clouds.size(); ++j) {
        cds.push_back(chamfer(*clouds[i], *clouds[j]));
        hds.push_back(hausdorff(*clouds[i], *clouds[j]));
        emds.push_back(emd_exact(*clouds[i], *clouds[j]));
      }
    }
    ConsistencyRow row;
    row.category = category;
    row.centering = centering;
    row.cd = stats_of(cds);
    row.hd = stats_of(hds);
    row.emd = stats_of(emds);
    row.cloud_count = static_cast<int>(clouds.size());
    rows.push_back(row);
  }
  return rows;
}

}  // namespace eepose
