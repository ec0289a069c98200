// SPDX-License-Identifier: Apache-2.0

#include "eepose/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

namespace eepose {

namespace {

constexpr double kPi = 3.14159265358979323846;

const char* const kCategoryNames[4] = {"hammer_head", "hammer_grip",
                                       "screwdriver_head", "wrench_head"};

std::map<std::string, ParamRange> hammer_ranges() {
  return {
      {"handle_radius", {0.012, 0.018}}, {"handle_length", {0.22, 0.30}},
      {"head_radius", {0.015, 0.023}},   {"head_length", {0.075, 0.11}},
      {"grip_frac", {0.30, 0.48}},
  };
}

std::map<std::string, ParamRange> screwdriver_ranges() {
  return {
      {"tip_cone_height", {0.008, 0.014}}, {"shaft_radius", {0.0025, 0.004}},
      {"shaft_length", {0.07, 0.12}},      {"handle_radius", {0.013, 0.019}},
      {"handle_length", {0.09, 0.13}},
  };
}

std::map<std::string, ParamRange> wrench_ranges() {
  return {
      {"bar_width", {0.016, 0.026}},
      {"bar_length", {0.13, 0.19}},
      {"thickness", {0.004, 0.007}},
      {"jaw_inner_radius", {0.009, 0.015}},
      {"head_outer_radius", {0.018, 0.027}},
      {"opening_half_angle_deg", {24.0, 38.0}},
      {"head_twist_deg", {10.0, 20.0}},
  };
}

std::string tool_kind_of(const std::string& category) {
  if (category == "hammer_head" || category == "hammer_grip") return "hammer";
  if (category == "screwdriver_head") return "screwdriver";
  if (category == "wrench_head") return "wrench";
  throw ConfigError("unknown category \"" + category + "\"");
}

SymmetryFlags z_symmetric() {
  SymmetryFlags f;
  f.axis[2] = true;
  return f;
}

CategorySpec default_spec(const std::string& name) {
  CategorySpec spec;
  spec.name = name;
  if (name == "hammer_head") {
    spec.ee_count_per_tool = 2;
    spec.symmetry_gt = z_symmetric();
    spec.shape_param_ranges = hammer_ranges();
    spec.crop_radius = 0.22;
  } else if (name == "hammer_grip") {
    spec.ee_count_per_tool = 2;
    spec.symmetry_gt = z_symmetric();  // dropped when the crop reaches the head
    spec.shape_param_ranges = hammer_ranges();
    spec.crop_radius = 0.26;
  } else if (name == "screwdriver_head") {
    spec.ee_count_per_tool = 1;
    spec.symmetry_gt = z_symmetric();
    spec.shape_param_ranges = screwdriver_ranges();
    spec.crop_radius = 0.20;
  } else if (name == "wrench_head") {
    spec.ee_count_per_tool = 1;
    spec.symmetry_gt = SymmetryFlags{};
    spec.shape_param_ranges = wrench_ranges();
    spec.crop_radius = 0.18;
  } else {
    throw ConfigError("unknown category \"" + name + "\"");
  }
  return spec;
}

}  // namespace

std::vector<CategorySpec> GenConfig::active_categories() const {
  if (category_filter.empty()) return categories;
  std::vector<CategorySpec> out;
  for (const std::string& name : category_filter) {
    bool found = false;
    for (const CategorySpec& spec : categories) {
      if (spec.name == name) {
        out.push_back(spec);
        found = true;
        break;
      }
    }
    if (!found) {
      throw ConfigError("category_filter: unknown category \"" + name + "\"");
    }
  }
  return out;
}

GenConfig GenConfig::defaults() {
  GenConfig cfg;
  for (const char* name : kCategoryNames) cfg.categories.push_back(default_spec(name));
  return cfg;
}

namespace {

double require_number(const nlohmann::json& j, const std::string& field) {
  if (!j.is_number()) throw ConfigError("config field \"" + field + "\" must be a number");
  return j.get<double>();
}

int require_positive_int(const nlohmann::json& j, const std::string& field) {
  const double v = require_number(j, field);
  if (v <= 0 || v != std::floor(v)) {
    throw ConfigError("config field \"" + field + "\" must be a positive integer");
  }
  return static_cast<int>(v);
}

ParamRange require_range(const nlohmann::json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 2) {
    throw ConfigError("config field \"" + field + "\" must be [lo, hi]");
  }
  ParamRange r{require_number(j.at(0), field), require_number(j.at(1), field)};
  if (!(r.lo <= r.hi)) {
    throw ConfigError("config field \"" + field + "\" has lo > hi");
  }
  return r;
}

}  // namespace

GenConfig GenConfig::from_json(const nlohmann::json& j) {
  GenConfig cfg = defaults();
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "samples_per_category") {
      cfg.samples_per_category = require_positive_int(value, key);
    } else if (key == "instances_per_category") {
      cfg.instances_per_category = require_positive_int(value, key);
    } else if (key == "points_per_tool") {
      cfg.points_per_tool = require_positive_int(value, key);
    } else if (key == "min_ee_points") {
      cfg.min_ee_points = require_positive_int(value, key);
    } else if (key == "resample_points") {
      cfg.resample_points = require_positive_int(value, key);
    } else if (key == "translation_halfwidth") {
      cfg.translation_halfwidth = require_number(value, key);
    } else if (key == "z_extra") {
      cfg.z_extra = require_number(value, key);
    } else if (key == "scale_range") {
      cfg.scale_range = require_range(value, key);
    } else if (key == "occluder_radius_range") {
      cfg.occluder_radius_range = require_range(value, key);
    } else if (key == "jitter_sigma") {
      cfg.jitter_sigma = require_number(value, key);
    } else if (key == "train_fraction") {
      cfg.train_fraction = require_number(value, key);
    } else if (key == "max_retries") {
      cfg.max_retries = require_positive_int(value, key);
    } else if (key == "category_filter") {
      if (!value.is_array()) throw ConfigError("config field \"category_filter\" must be a list");
      cfg.category_filter.clear();
      for (const auto& v : value) cfg.category_filter.push_back(v.get<std::string>());
    } else if (key == "categories") {
      if (!value.is_object()) throw ConfigError("config field \"categories\" must be an object");
      for (const auto& [cat, overrides] : value.items()) {
        CategorySpec* spec = nullptr;
        for (CategorySpec& s : cfg.categories) {
          if (s.name == cat) spec = &s;
        }
        if (spec == nullptr) throw ConfigError("config field \"categories." + cat + "\": unknown category");
        for (const auto& [okey, oval] : overrides.items()) {
          if (okey == "crop_radius") {
            spec->crop_radius = require_number(oval, "categories." + cat + ".crop_radius");
          } else if (okey == "params") {
            for (const auto& [pkey, pval] : oval.items()) {
              if (spec->shape_param_ranges.find(pkey) == spec->shape_param_ranges.end()) {
                throw ConfigError("config field \"categories." + cat + ".params." + pkey + "\": unknown parameter");
              }
              spec->shape_param_ranges[pkey] =
                  require_range(pval, "categories." + cat + ".params." + pkey);
            }
          } else {
            throw ConfigError("config field \"categories." + cat + "." + okey + "\": unknown key");
          }
        }
      }
    } else {
      throw ConfigError("config field \"" + key + "\" is not recognized");
    }
  }
  cfg.validate();
  return cfg;
}

nlohmann::json GenConfig::to_json() const {
  nlohmann::json cats;
  for (const CategorySpec& s : categories) {
    nlohmann::json params;
    for (const auto& [k, r] : s.shape_param_ranges) params[k] = {r.lo, r.hi};
    cats[s.name] = {{"crop_radius", s.crop_radius}, {"params", params}};
  }
  nlohmann::json j{
      {"samples_per_category", samples_per_category},
      {"instances_per_category", instances_per_category},
      {"points_per_tool", points_per_tool},
      {"min_ee_points", min_ee_points},
      {"resample_points", resample_points},
      {"translation_halfwidth", translation_halfwidth},
      {"z_extra", z_extra},
      {"scale_range", {scale_range.lo, scale_range.hi}},
      {"occluder_radius_range", {occluder_radius_range.lo, occluder_radius_range.hi}},
      {"jitter_sigma", jitter_sigma},
      {"train_fraction", train_fraction},
      {"max_retries", max_retries},
      {"categories", cats},
  };
  if (!category_filter.empty()) j["category_filter"] = category_filter;
  return j;
}

void GenConfig::validate() const {
  if (categories.size() != 4) {
    throw ConfigError("config field \"categories\" must keep the 4 default categories");
  }
  auto positive = [](double v, const char* field) {
    if (!(v > 0.0)) throw ConfigError(std::string("config field \"") + field + "\" must be positive");
  };
  positive(translation_halfwidth, "translation_halfwidth");
  if (z_extra < 0.0) throw ConfigError("config field \"z_extra\" must be non-negative");
  positive(scale_range.lo, "scale_range");
  if (occluder_radius_range.lo < 0.0) {
    throw ConfigError("config field \"occluder_radius_range\" must be non-negative");
  }
  if (jitter_sigma < 0.0) throw ConfigError("config field \"jitter_sigma\" must be non-negative");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("config field \"train_fraction\" must be in (0, 1)");
  }
  if (resample_points < min_ee_points) {
    throw ConfigError("config field \"resample_points\" must be >= min_ee_points");
  }
  for (const CategorySpec& s : categories) {
    positive(s.crop_radius, "crop_radius");
    for (const auto& [k, r] : s.shape_param_ranges) {
      if (!(r.lo > 0.0) || !(r.hi >= r.lo)) {
        throw ConfigError("config field \"categories." + s.name + ".params." + k +
                          "\" must satisfy 0 < lo <= hi");
      }
    }
  }
  active_categories();  // validates category_filter names
}

double ShapeParams::at(const std::string& key) const {
  auto it = values.find(key);
  if (it == values.end()) {
    throw ConfigError("shape parameter \"" + key + "\" missing for " + category);
  }
  return it->second;
}

// ---------------------------------------------------------------------------
// Area-weighted surface sampling of the parametric primitives.
// ---------------------------------------------------------------------------

namespace {

struct SurfacePatch {
  double area = 0.0;
  int label = 0;
  std::function<Vec3(Rng&)> draw;  // in tool frame
};

// Cylinder with axis mapped from local +z via `rot`, base center at `base`.
void add_cylinder(std::vector<SurfacePatch>* patches, const Mat3& rot,
                  const Vec3& base, double radius, double length, int label,
                  bool bottom_cap, bool top_cap) {
  // Explicit Vec3 return: an Eigen expression template would dangle here.
  auto to_tool = [rot, base](const Vec3& local) -> Vec3 {
    return rot * local + base;
  };
  patches->push_back(
      {2.0 * kPi * radius * length, label, [=](Rng& rng) {
         const double theta = rng.uniform(0.0, 2.0 * kPi);
         const double z = rng.uniform(0.0, length);
         return to_tool(Vec3(radius * std::cos(theta), radius * std::sin(theta), z));
       }});
  auto cap = [=](double z_at) {
    return [=](Rng& rng) {
      const double rho = radius * std::sqrt(rng.uniform());
      const double theta = rng.uniform(0.0, 2.0 * kPi);
      return to_tool(Vec3(rho * std::cos(theta), rho * std::sin(theta), z_at));
    };
  };
  if (bottom_cap) patches->push_back({kPi * radius * radius, label, cap(0.0)});
  if (top_cap) patches->push_back({kPi * radius * radius, label, cap(length)});
}

// Lateral cone surface, apex at `apex`, widening along local +z to radius
// `base_radius` at height `height`.
void add_cone(std::vector<SurfacePatch>* patches, const Mat3& rot,
              const Vec3& apex, double base_radius, double height, int label) {
  const double slant = std::sqrt(base_radius * base_radius + height * height);
  patches->push_back(
      {kPi * base_radius * slant, label, [=](Rng& rng) -> Vec3 {
         const double z = height * std::sqrt(rng.uniform());
         const double rho = base_radius * z / height;
         const double theta = rng.uniform(0.0, 2.0 * kPi);
         return rot * Vec3(rho * std::cos(theta), rho * std::sin(theta), z) + apex;
       }});
}

// Axis-aligned box given min corner and size; all six faces.
void add_box(std::vector<SurfacePatch>* patches, const Vec3& corner,
             const Vec3& size, int label) {
  for (int axis = 0; axis < 3; ++axis) {
    const int u = (axis + 1) % 3;
    const int v = (axis + 2) % 3;
    const double area = size[u] * size[v];
    for (int side = 0; side < 2; ++side) {
      patches->push_back({area, label, [=](Rng& rng) {
                            Vec3 p = corner;
                            p[axis] += side * size[axis];
                            p[u] += rng.uniform(0.0, size[u]);
                            p[v] += rng.uniform(0.0, size[v]);
                            return p;
                          }});
    }
  }
}

// C-profile: annulus sector extruded along z, centered at the origin. The
// material spans theta in [gap_center + gap_half, gap_center + 2*pi - gap_half].
void add_c_profile(std::vector<SurfacePatch>* patches, double r_inner,
                   double r_outer, double thickness, double gap_center,
                   double gap_half, int label) {
  const double span = 2.0 * kPi - 2.0 * gap_half;
  const double theta0 = gap_center + gap_half;
  auto theta_draw = [=](Rng& rng) { return theta0 + rng.uniform(0.0, span); };
  // Top and bottom annulus faces.
  const double face_area = 0.5 * span * (r_outer * r_outer - r_inner * r_inner);
  for (int side = 0; side < 2; ++side) {
    const double z = (side == 0 ? -0.5 : 0.5) * thickness;
    patches->push_back({face_area, label, [=](Rng& rng) {
                          const double theta = theta_draw(rng);
                          const double rho = std::sqrt(
                              r_inner * r_inner +
                              rng.uniform() * (r_outer * r_outer - r_inner * r_inner));
                          return Vec3(rho * std::cos(theta), rho * std::sin(theta), z);
                        }});
  }
  // Outer and inner walls.
  for (const double rho : {r_outer, r_inner}) {
    patches->push_back({span * rho * thickness, label, [=](Rng& rng) {
                          const double theta = theta_draw(rng);
                          const double z = rng.uniform(-0.5, 0.5) * thickness;
                          return Vec3(rho * std::cos(theta), rho * std::sin(theta), z);
                        }});
  }
  // Radial cut faces at both gap edges.
  for (const double theta : {theta0, gap_center - gap_half}) {
    patches->push_back(
        {(r_outer - r_inner) * thickness, label, [=](Rng& rng) {
           const double rho = rng.uniform(r_inner, r_outer);
           const double z = rng.uniform(-0.5, 0.5) * thickness;
           return Vec3(rho * std::cos(theta), rho * std::sin(theta), z);
         }});
  }
}

struct ToolBuild {
  std::vector<SurfacePatch> patches;
  std::vector<EeFrame> ee_frames;
};

Mat3 axis_z_to_x() {
  Mat3 m;
  m << 0, 0, 1, 0, 1, 0, -1, 0, 0;  // maps local +z to tool +x
  return m;
}

ToolBuild build_hammer(const ShapeParams& p) {
  const double rh = p.at("handle_radius");
  const double lh = p.at("handle_length");
  const double rd = p.at("head_radius");
  const double ld = p.at("head_length");
  ToolBuild b;
  add_cylinder(&b.patches, Mat3::Identity(), Vec3(0, 0, 0), rh, lh, kPartHandle,
               /*bottom_cap=*/true, /*top_cap=*/true);
  // Head cylinder orthogonal to the handle, resting on its top.
  const Vec3 head_base(-0.5 * ld, 0.0, lh + rd);
  add_cylinder(&b.patches, axis_z_to_x(), head_base, rd, ld, kPartHead,
               /*bottom_cap=*/true, /*top_cap=*/true);

  // Striking-face frame: z along the head axis, pointing out of the face.
  Mat3 head_rot;
  head_rot << 0, 0, 1, 0, -1, 0, 1, 0, 0;  // columns x_ee, y_ee, z_ee
  b.ee_frames.push_back({"hammer_head", Rotation::from_matrix(head_rot),
                         Vec3(0.5 * ld, 0.0, lh + rd)});
  b.ee_frames.push_back({"hammer_grip", Rotation(),
                         Vec3(0.0, 0.0, p.at("grip_frac") * lh)});
  return b;
}

ToolBuild build_screwdriver(const ShapeParams& p) {
  const double hc = p.at("tip_cone_height");
  const double rs = p.at("shaft_radius");
  const double ls = p.at("shaft_length");
  const double rhd = p.at("handle_radius");
  const double lhd = p.at("handle_length");
  ToolBuild b;
  add_cone(&b.patches, Mat3::Identity(), Vec3(0, 0, 0), rs, hc, kPartHead);
  add_cylinder(&b.patches, Mat3::Identity(), Vec3(0, 0, hc), rs, ls, kPartShaft,
               /*bottom_cap=*/false, /*top_cap=*/false);
  add_cylinder(&b.patches, Mat3::Identity(), Vec3(0, 0, hc + ls), rhd, lhd,
               kPartHandle, /*bottom_cap=*/true, /*top_cap=*/true);

  // Tip frame: z points from the shaft through the tip into the workpiece.
  Mat3 rot;
  rot << 1, 0, 0, 0, -1, 0, 0, 0, -1;
  b.ee_frames.push_back(
      {"screwdriver_head", Rotation::from_matrix(rot), Vec3(0, 0, 0)});
  return b;
}

ToolBuild build_wrench(const ShapeParams& p) {
  const double wb = p.at("bar_width");
  const double lb = p.at("bar_length");
  const double t = p.at("thickness");
  const double ri = p.at("jaw_inner_radius");
  const double ro = p.at("head_outer_radius");
  const double gap_half = p.at("opening_half_angle_deg") * kPi / 180.0;
  const double twist = p.at("head_twist_deg") * kPi / 180.0;
  ToolBuild b;
  // Opening faces away from the handle; the twist breaks the 180-degree flip
  // symmetry so the pose is observable.
  add_c_profile(&b.patches, ri, ro, t, 0.5 * kPi + twist, gap_half, kPartHead);
  const double bar_start = -0.6 * ro;
  add_box(&b.patches, Vec3(-0.5 * wb, bar_start - lb, -0.5 * t),
          Vec3(wb, lb, t), kPartHandle);
  // Jaw frame: z along the nut axis (extrusion normal), origin at jaw center.
  b.ee_frames.push_back({"wrench_head", Rotation(), Vec3(0, 0, 0)});
  return b;
}

}  // namespace

ToolModel sample_shape(const CategorySpec& spec, Rng& rng, int points) {
  if (points < 1) throw ConfigError("points_per_tool must be positive");
  ShapeParams params;
  params.category = spec.name;
  for (const auto& [key, range] : spec.shape_param_ranges) {
    params.values[key] = rng.uniform(range.lo, range.hi);
  }

  const std::string kind = tool_kind_of(spec.name);
  ToolBuild build;
  if (kind == "hammer") {
    build = build_hammer(params);
  } else if (kind == "screwdriver") {
    build = build_screwdriver(params);
  } else {
    build = build_wrench(params);
  }

  double total_area = 0.0;
  for (const SurfacePatch& patch : build.patches) total_area += patch.area;
  std::vector<double> cumulative;
  cumulative.reserve(build.patches.size());
  double acc = 0.0;
  for (const SurfacePatch& patch : build.patches) {
    acc += patch.area;
    cumulative.push_back(acc);
  }

  ToolModel model;
  model.tool_kind = kind;
  model.params = params;
  model.cloud.pts.resize(points, 3);
  model.part_labels.resize(points);
  for (int i = 0; i < points; ++i) {
    const double u = rng.uniform(0.0, total_area);
    const std::size_t idx = static_cast<std::size_t>(
        std::lower_bound(cumulative.begin(), cumulative.end(), u) -
        cumulative.begin());
    const SurfacePatch& patch = build.patches[std::min(idx, build.patches.size() - 1)];
    model.cloud.pts.row(i) = patch.draw(rng).transpose();
    model.part_labels[i] = patch.label;
  }
  model.ee_frames = build.ee_frames;

  // Diagonal normalization and zero mean; EE frames follow the same map.
  const Vec3 centroid = model.cloud.centroid();
  model.cloud.pts.rowwise() -= centroid.transpose();
  const Vec3 lo = model.cloud.pts.colwise().minCoeff().transpose();
  const Vec3 hi = model.cloud.pts.colwise().maxCoeff().transpose();
  const double diag = (hi - lo).norm();
  if (diag <= 0.0) throw DegenerateInput("sample_shape: degenerate tool extent");
  model.cloud.pts /= diag;
  model.prenorm_diag = diag;
  for (EeFrame& ee : model.ee_frames) ee.origin = (ee.origin - centroid) / diag;
  return model;
}

Pose sample_pose(Rng& rng, double box_halfwidth, double z_extra) {
  Pose pose;
  for (;;) {
    Vec3 rx, ry;
    for (int i = 0; i < 3; ++i) rx[i] = rng.normal();
    for (int i = 0; i < 3; ++i) ry[i] = rng.normal();
    try {
      pose.rot = rot6d_to_matrix(rx, ry);
      break;
    } catch (const DegenerateInput&) {
      // Measure-zero draw; redraw.
    }
  }
  for (int i = 0; i < 3; ++i) {
    pose.trans[i] = rng.uniform(-box_halfwidth, box_halfwidth);
  }
  pose.trans[2] += rng.uniform(-z_extra, z_extra);
  return pose;
}

std::vector<char> partial_view_mask(const PointCloud& cloud, Rng& rng,
                                    double occ_radius_lo, double occ_radius_hi) {
  if (cloud.empty()) throw EmptyCloud("partial_view_mask: empty cloud");
  Vec3 view;
  do {
    for (int i = 0; i < 3; ++i) view[i] = rng.normal();
  } while (view.norm() < 1e-12);
  view.normalize();

  const Vec3 centroid = cloud.centroid();
  std::vector<char> mask(cloud.size(), 0);
  std::vector<Eigen::Index> visible;
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    if ((cloud.point(i) - centroid).dot(view) >= 0.0) {
      mask[i] = 1;
      visible.push_back(i);
    }
  }
  if (visible.empty()) return mask;

  // Occluder sphere (hand stand-in) centered on a visible point.
  const Eigen::Index center_idx =
      visible[rng.uniform_index(static_cast<std::uint64_t>(visible.size()))];
  const double radius = rng.uniform(occ_radius_lo, occ_radius_hi);
  const Vec3 center = cloud.point(center_idx);
  for (Eigen::Index i : visible) {
    if ((cloud.point(i) - center).norm() < radius) mask[i] = 0;
  }
  return mask;
}

PointCloud render_partial(const PointCloud& cloud, Rng& rng,
                          double occ_radius_lo, double occ_radius_hi) {
  const std::vector<char> mask =
      partial_view_mask(cloud, rng, occ_radius_lo, occ_radius_hi);
  Eigen::Index kept = 0;
  for (char m : mask) kept += m;
  PointCloud out(kept);
  Eigen::Index row = 0;
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    if (mask[i]) out.pts.row(row++) = cloud.pts.row(i);
  }
  return out;
}

bool clean_filter(const PointCloud& ee_cloud, int min_points) {
  return ee_cloud.size() >= min_points;
}

PointCloud resample_fixed(const PointCloud& cloud, int n, Rng& rng,
                          double jitter_sigma) {
  if (cloud.empty()) throw EmptyCloud("resample_fixed: empty cloud");
  if (n < 1) throw ConfigError("resample_fixed: n must be positive");
  PointCloud out(n);
  const Eigen::Index in = cloud.size();
  if (in >= n) {
    // Partial Fisher-Yates: n distinct indices.
    std::vector<Eigen::Index> idx(in);
    for (Eigen::Index i = 0; i < in; ++i) idx[i] = i;
    for (int i = 0; i < n; ++i) {
      const Eigen::Index j =
          i + static_cast<Eigen::Index>(rng.uniform_index(in - i));
      std::swap(idx[i], idx[j]);
      out.pts.row(i) = cloud.pts.row(idx[i]);
    }
    return out;
  }
  std::vector<char> seen(in, 0);
  for (int i = 0; i < n; ++i) {
    const Eigen::Index j = static_cast<Eigen::Index>(rng.uniform_index(in));
    Vec3 p = cloud.point(j);
    if (seen[j]) {
      for (int c = 0; c < 3; ++c) p[c] += jitter_sigma * rng.normal();
    }
    seen[j] = 1;
    out.pts.row(i) = p.transpose();
  }
  return out;
}

namespace {

const CategorySpec& spec_for(const GenConfig& cfg, const std::string& name) {
  for (const CategorySpec& s : cfg.categories) {
    if (s.name == name) return s;
  }
  throw ConfigError("unknown category \"" + name + "\"");
}

}  // namespace

SampleBuild generate_sample(const GenConfig& cfg, const ToolModel& tool,
                            const CategorySpec& subject_spec,
                            std::uint64_t sample_seed) {
  Rng rng(sample_seed);

  // Subject EE first, remaining frames in tool order.
  std::vector<int> ee_order;
  for (std::size_t i = 0; i < tool.ee_frames.size(); ++i) {
    if (tool.ee_frames[i].category == subject_spec.name) {
      ee_order.push_back(static_cast<int>(i));
    }
  }
  if (ee_order.empty()) {
    throw ConfigError("tool instance has no EE of category " + subject_spec.name);
  }
  for (std::size_t i = 0; i < tool.ee_frames.size(); ++i) {
    if (tool.ee_frames[i].category != subject_spec.name) {
      ee_order.push_back(static_cast<int>(i));
    }
  }

  // Affordance crops are view independent: ball around the working point in
  // the normalized asset frame, intersected with the tool cloud.
  const Eigen::Index n_pts = tool.cloud.size();
  std::vector<std::vector<char>> crop_member(ee_order.size());
  std::vector<Vec3> s_gt(ee_order.size());
  for (std::size_t k = 0; k < ee_order.size(); ++k) {
    const EeFrame& ee = tool.ee_frames[ee_order[k]];
    const CategorySpec& ee_spec = spec_for(cfg, ee.category);
    crop_member[k].assign(n_pts, 0);
    bool crop_has_head = false;
    for (Eigen::Index i = 0; i < n_pts; ++i) {
      if ((tool.cloud.point(i) - ee.origin).norm() <= ee_spec.crop_radius) {
        crop_member[k][i] = 1;
        if (tool.part_labels[i] == kPartHead) crop_has_head = true;
      }
    }
    SymmetryFlags flags = ee_spec.symmetry_gt;
    if (ee.category == "hammer_grip" && crop_has_head) {
      // Head geometry inside the crop disambiguates the handle rotation.
      flags = SymmetryFlags{};
    }
    s_gt[k] = flags.to_confidence();
  }

  SampleBuild build;
  double scale = 1.0;
  Pose obj_pose;
  PointCloud scene;
  std::vector<char> view_mask;
  std::vector<PointCloud> pre_clouds(ee_order.size());
  bool ok = false;
  for (int attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
    ++build.attempts;
    scale = rng.uniform(cfg.scale_range.lo, cfg.scale_range.hi);
    obj_pose = sample_pose(rng, cfg.translation_halfwidth, cfg.z_extra);
    scene.pts = (scale * tool.cloud.pts) * obj_pose.rot.matrix().transpose();
    scene.pts.rowwise() += obj_pose.trans.transpose();
    view_mask = partial_view_mask(scene, rng, cfg.occluder_radius_range.lo,
                                  cfg.occluder_radius_range.hi);
    ok = true;
    for (std::size_t k = 0; k < ee_order.size(); ++k) {
      Eigen::Index kept = 0;
      for (Eigen::Index i = 0; i < n_pts; ++i) {
        kept += (crop_member[k][i] && view_mask[i]) ? 1 : 0;
      }
      PointCloud cloud(kept);
      Eigen::Index row = 0;
      for (Eigen::Index i = 0; i < n_pts; ++i) {
        if (crop_member[k][i] && view_mask[i]) cloud.pts.row(row++) = scene.pts.row(i);
      }
      if (!clean_filter(cloud, cfg.min_ee_points)) {
        ok = false;
        break;
      }
      pre_clouds[k] = std::move(cloud);
    }
  }
  if (!ok) {
    throw ConfigError("generate_sample: could not satisfy the " +
                      std::to_string(cfg.min_ee_points) +
                      "-point filter for category " + subject_spec.name +
                      " within max_retries");
  }

  SceneSample& sample = build.sample;
  sample.instance_id = tool.params.instance_id;
  sample.category = subject_spec.name;
  sample.obj_pose = obj_pose;
  sample.scale = scale;
  for (std::size_t k = 0; k < ee_order.size(); ++k) {
    const EeFrame& ee = tool.ee_frames[ee_order[k]];
    EeObservation obs;
    obs.category = ee.category;
    obs.pre_resample_count = static_cast<int>(pre_clouds[k].size());
    obs.cloud = resample_fixed(pre_clouds[k], cfg.resample_points, rng,
                               cfg.jitter_sigma);
    obs.gt_pose.rot = obj_pose.rot * ee.rot;
    obs.gt_pose.trans = obj_pose.rot * (scale * ee.origin) + obj_pose.trans;
    obs.s_gt = s_gt[k];
    sample.ees.push_back(std::move(obs));

    Eigen::Index count = 0;
    for (Eigen::Index i = 0; i < n_pts; ++i) count += crop_member[k][i];
    PointCloud crop(count);
    Eigen::Index row = 0;
    for (Eigen::Index i = 0; i < n_pts; ++i) {
      if (crop_member[k][i]) crop.pts.row(row++) = scene.pts.row(i);
    }
    build.unoccluded_crops.push_back(std::move(crop));
  }
  build.pre_resample = std::move(pre_clouds);
  sample.symmetry_gt = SymmetryFlags::from_confidence(sample.ees[0].s_gt);
  return build;
}

ToolModel instance_model(const GenConfig& cfg, const CategorySpec& spec,
                         std::uint64_t dataset_seed, int instance_index) {
  Rng rng(derive_seed(dataset_seed, "instance",
                      hash_label(spec.name) + static_cast<std::uint64_t>(instance_index)));
  ToolModel model = sample_shape(spec, rng, cfg.points_per_tool);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "_inst%03d", instance_index);
  model.params.instance_id = spec.name + buf;
  return model;
}

std::uint64_t sample_seed_for(std::uint64_t dataset_seed,
                              const std::string& category, int sample_index) {
  return derive_seed(dataset_seed, "sample",
                     hash_label(category) * 1000003ULL +
                         static_cast<std::uint64_t>(sample_index));
}

// ---------------------------------------------------------------------------
// Dataset serialization.
// ---------------------------------------------------------------------------

void write_xyz(const PointCloud& cloud, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (f == nullptr) throw IoError("cannot open " + path + " for writing");
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    std::fprintf(f, "%.6f %.6f %.6f\n", cloud.pts(i, 0), cloud.pts(i, 1),
                 cloud.pts(i, 2));
  }
  std::fclose(f);
}

PointCloud read_xyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<Vec3> points;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Vec3 p;
    if (std::sscanf(line.c_str(), "%lf %lf %lf", &p[0], &p[1], &p[2]) != 3) {
      throw FormatError(path + ": malformed XYZ line \"" + line + "\"");
    }
    points.push_back(p);
  }
  if (points.empty()) throw EmptyCloud(path + ": no points");
  PointCloud cloud(static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    cloud.pts.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
  }
  return cloud;
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json samples_json = nlohmann::json::array();
  for (const ManifestSampleEntry& s : samples) {
    samples_json.push_back({{"sample_id", s.sample_id},
                            {"category", s.category},
                            {"instance_id", s.instance_id},
                            {"split", s.split},
                            {"jsonl_offset", s.jsonl_offset}});
  }
  return nlohmann::json{
      {"version", version},
      {"seed", seed},
      {"config_hash", config_hash},
      {"config", config},
      {"train_instances", train_instances},
      {"test_instances", test_instances},
      {"samples", samples_json},
  };
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.version = j.at("version").get<int>();
  if (m.version != 1) {
    throw FormatError("manifest version " + std::to_string(m.version) +
                      " unsupported (supported: 1)");
  }
  m.seed = j.at("seed").get<std::uint64_t>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.config = j.at("config");
  m.train_instances =
      j.at("train_instances").get<std::map<std::string, std::vector<std::string>>>();
  m.test_instances =
      j.at("test_instances").get<std::map<std::string, std::vector<std::string>>>();
  for (const auto& s : j.at("samples")) {
    m.samples.push_back({s.at("sample_id").get<std::string>(),
                         s.at("category").get<std::string>(),
                         s.at("instance_id").get<std::string>(),
                         s.at("split").get<std::string>(),
                         s.at("jsonl_offset").get<std::uint64_t>()});
  }
  return m;
}

DatasetManifest generate_dataset(const GenConfig& cfg, std::uint64_t seed,
                                 const std::string& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "clouds");

  const std::vector<CategorySpec> cats = cfg.active_categories();

  DatasetManifest manifest;
  manifest.seed = seed;
  manifest.config = cfg.to_json();
  const std::string config_dump = manifest.config.dump();
  manifest.config_hash = to_hex(fnv1a(config_dump.data(), config_dump.size()));

  // Instance split: shuffled per category, first train_fraction are train.
  std::map<std::string, std::vector<int>> instance_split;  // 1 = train
  for (std::size_t c = 0; c < cats.size(); ++c) {
    const CategorySpec& spec = cats[c];
    std::vector<int> order(cfg.instances_per_category);
    for (int i = 0; i < cfg.instances_per_category; ++i) order[i] = i;
    Rng split_rng(derive_seed(seed, "split", hash_label(spec.name)));
    split_rng.shuffle(order);
    const int n_train = std::max(
        1, std::min(cfg.instances_per_category - 1,
                    static_cast<int>(std::ceil(cfg.train_fraction *
                                               cfg.instances_per_category))));
    std::vector<int> is_train(cfg.instances_per_category, 0);
    for (int i = 0; i < n_train; ++i) is_train[order[i]] = 1;
    instance_split[spec.name] = is_train;
  }

  const std::string jsonl_path = (fs::path(out_dir) / "samples.jsonl").string();
  std::ofstream jsonl(jsonl_path, std::ios::binary);
  if (!jsonl) throw IoError("cannot open " + jsonl_path + " for writing");
  std::uint64_t offset = 0;

  for (std::size_t c = 0; c < cats.size(); ++c) {
    const CategorySpec& spec = cats[c];
    std::vector<ToolModel> instances;
    instances.reserve(cfg.instances_per_category);
    for (int k = 0; k < cfg.instances_per_category; ++k) {
      instances.push_back(instance_model(cfg, spec, seed, k));
    }
    const std::vector<int>& is_train = instance_split[spec.name];
    for (int k = 0; k < cfg.instances_per_category; ++k) {
      auto& bucket = is_train[k] ? manifest.train_instances[spec.name]
                                 : manifest.test_instances[spec.name];
      bucket.push_back(instances[k].params.instance_id);
    }

    for (int i = 0; i < cfg.samples_per_category; ++i) {
      const int inst = i % cfg.instances_per_category;
      SampleBuild build = generate_sample(cfg, instances[inst], spec,
                                          sample_seed_for(seed, spec.name, i));
      SceneSample& sample = build.sample;
      char idbuf[40];
      std::snprintf(idbuf, sizeof(idbuf), "%s_%05d", spec.name.c_str(), i);
      sample.sample_id = idbuf;
      sample.split = is_train[inst] ? "train" : "test";

      nlohmann::json ee_json = nlohmann::json::array();
      for (std::size_t e = 0; e < sample.ees.size(); ++e) {
        EeObservation& obs = sample.ees[e];
        obs.cloud_relpath =
            "clouds/" + sample.sample_id + "_" + std::to_string(e) + ".xyz";
        write_xyz(obs.cloud, (fs::path(out_dir) / obs.cloud_relpath).string());
        ee_json.push_back({{"cloud", obs.cloud_relpath},
                           {"pose", pose_to_json(obs.gt_pose, obs.s_gt)},
                           {"s", {obs.s_gt.x(), obs.s_gt.y(), obs.s_gt.z()}}});
      }
      const nlohmann::json record{
          {"sample_id", sample.sample_id},
          {"instance_id", sample.instance_id},
          {"category", sample.category},
          {"split", sample.split},
          {"scale", sample.scale},
          {"obj_pose", pose_to_json(sample.obj_pose, Vec3::Zero())},
          {"ee", ee_json},
      };
      const std::string line = record.dump() + "\n";
      manifest.samples.push_back({sample.sample_id, sample.category,
                                  sample.instance_id, sample.split, offset});
      jsonl << line;
      offset += line.size();
    }
  }
  jsonl.close();

  const std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
  std::ofstream mf(manifest_path, std::ios::binary);
  if (!mf) throw IoError("cannot open " + manifest_path + " for writing");
  mf << manifest.to_json().dump(2) << "\n";
  return manifest;
}

DatasetManifest load_manifest(const std::string& dataset_dir) {
  namespace fs = std::filesystem;
  const std::string path = (fs::path(dataset_dir) / "manifest.json").string();
  std::ifstream in(path);
  if (!in) throw MissingInput("dataset manifest not found at " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return DatasetManifest::from_json(j);
}

std::vector<DatasetRecord> load_dataset_records(const std::string& dataset_dir) {
  namespace fs = std::filesystem;
  const std::string path = (fs::path(dataset_dir) / "samples.jsonl").string();
  std::ifstream in(path);
  if (!in) throw MissingInput("dataset records not found at " + path);
  std::vector<DatasetRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ": " + e.what());
    }
    DatasetRecord rec;
    rec.sample_id = j.at("sample_id").get<std::string>();
    rec.instance_id = j.at("instance_id").get<std::string>();
    rec.category = j.at("category").get<std::string>();
    rec.split = j.at("split").get<std::string>();
    rec.scale = j.at("scale").get<double>();
    rec.obj_pose = pose_from_json(j.at("obj_pose")).first;
    for (const auto& e : j.at("ee")) {
      DatasetRecord::Ee ee;
      ee.cloud_relpath = e.at("cloud").get<std::string>();
      auto [pose, s] = pose_from_json(e.at("pose"));
      ee.pose = pose;
      ee.s = s;
      rec.ees.push_back(std::move(ee));
    }
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw InsufficientData(path + ": dataset has no samples");
  return records;
}

}  // namespace eepose
