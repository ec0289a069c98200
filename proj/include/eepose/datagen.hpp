// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eepose/common.hpp"
#include "eepose/geometry.hpp"
#include "eepose/metrics.hpp"
#include "json.hpp"

namespace eepose {

struct ParamRange {
  double lo = 0.0;
  double hi = 0.0;
};

/// One of the four end-effector categories. The tool archetype (hammer,
/// screwdriver, wrench) is derived from the name; hammer tools carry two EE
/// frames, so both hammer categories have ee_count_per_tool = 2.
struct CategorySpec {
  std::string name;
  int ee_count_per_tool = 1;
  SymmetryFlags symmetry_gt;
  std::map<std::string, ParamRange> shape_param_ranges;
  double crop_radius = 0.2;  // affordance ball radius, normalized asset units
};

struct GenConfig {
  std::vector<CategorySpec> categories;
  std::vector<std::string> category_filter;  // empty = all
  int samples_per_category = 500;
  int instances_per_category = 25;
  int points_per_tool = 8192;
  int min_ee_points = 50;
  int resample_points = 1024;
  double translation_halfwidth = 0.3;  // meters, per axis
  double z_extra = 0.1;                // extra z offset, grasp variation
  ParamRange scale_range{0.18, 0.32};  // asset diagonal in meters
  ParamRange occluder_radius_range{0.02, 0.08};
  double jitter_sigma = 1e-4;
  double train_fraction = 0.8;
  int max_retries = 200;

  // Largest translation magnitude a pose component can take; used to keep the
  // diffused pose state O(1).
  double translation_bound() const { return translation_halfwidth + z_extra; }

  std::vector<CategorySpec> active_categories() const;

  static GenConfig defaults();
  static GenConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

struct ShapeParams {
  std::string instance_id;
  std::string category;
  std::map<std::string, double> values;

  double at(const std::string& key) const;
};

/// EE canonical frame attached to the tool: z along the working axis, origin
/// at the working point, expressed in the normalized asset frame.
struct EeFrame {
  std::string category;
  Rotation rot;
  Vec3 origin{0.0, 0.0, 0.0};
};

// Per-point part labels emitted by the builders.
constexpr int kPartHandle = 0;
constexpr int kPartHead = 1;  // hammer head / screwdriver tip cone / wrench jaw
constexpr int kPartShaft = 2;

/// A tool instance: surface cloud normalized to zero mean and unit bounding
/// box diagonal, per-point part labels, and its EE frames.
struct ToolModel {
  std::string tool_kind;  // hammer | screwdriver | wrench
  ShapeParams params;
  PointCloud cloud;
  std::vector<int> part_labels;
  std::vector<EeFrame> ee_frames;
  double prenorm_diag = 1.0;  // pre-normalization lengths = normalized * this
};

// Draws instance parameters uniformly in the category's ranges, samples the
// tool surface uniformly by area, and normalizes the cloud.
ToolModel sample_shape(const CategorySpec& spec, Rng& rng, int points);

// Haar-uniform rotation (Gram-Schmidt of Gaussian 6D draws) and translation
// uniform in the box plus an extra z offset.
Pose sample_pose(Rng& rng, double box_halfwidth, double z_extra);

// Keeps the camera-facing half-space through the centroid, then deletes
// points inside a randomized occluder sphere centered on a surviving point.
std::vector<char> partial_view_mask(const PointCloud& cloud, Rng& rng,
                                    double occ_radius_lo, double occ_radius_hi);
PointCloud render_partial(const PointCloud& cloud, Rng& rng,
                          double occ_radius_lo = 0.02,
                          double occ_radius_hi = 0.08);

// Keep iff at least min_points points survive extraction.
bool clean_filter(const PointCloud& ee_cloud, int min_points = 50);

// Exactly n points: uniform subsample without replacement when the cloud is
// large enough, otherwise with replacement plus Gaussian jitter on duplicates.
PointCloud resample_fixed(const PointCloud& cloud, int n, Rng& rng,
                          double jitter_sigma = 1e-4);

struct EeObservation {
  std::string category;
  PointCloud cloud;  // camera frame, resample_points points
  Pose gt_pose;      // EE canonical -> camera
  Vec3 s_gt{0.0, 0.0, 0.0};
  int pre_resample_count = 0;
  std::string cloud_relpath;
};

struct SceneSample {
  std::string sample_id;
  std::string instance_id;
  std::string category;  // subject EE category; subject is ees[0]
  std::string split;     // train | test
  Pose obj_pose;         // tool canonical -> camera
  double scale = 1.0;    // asset units -> meters
  SymmetryFlags symmetry_gt;  // of the subject EE
  std::vector<EeObservation> ees;
};

/// generate_sample output plus intermediates the tests need.
struct SampleBuild {
  SceneSample sample;
  std::vector<PointCloud> pre_resample;      // camera frame, per EE
  std::vector<PointCloud> unoccluded_crops;  // camera frame, no view/occluder
  int attempts = 0;
};

SampleBuild generate_sample(const GenConfig& cfg, const ToolModel& tool,
                            const CategorySpec& subject_spec,
                            std::uint64_t sample_seed);

ToolModel instance_model(const GenConfig& cfg, const CategorySpec& spec,
                         std::uint64_t dataset_seed, int instance_index);

// Seed streams used by generate_dataset, exposed so samples can be replayed.
std::uint64_t sample_seed_for(std::uint64_t dataset_seed,
                              const std::string& category, int sample_index);

struct ManifestSampleEntry {
  std::string sample_id, category, instance_id, split;
  std::uint64_t jsonl_offset = 0;
};

struct DatasetManifest {
  int version = 1;
  std::uint64_t seed = 0;
  std::string config_hash;
  nlohmann::json config;
  std::map<std::string, std::vector<std::string>> train_instances;
  std::map<std::string, std::vector<std::string>> test_instances;
  std::vector<ManifestSampleEntry> samples;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

// Runs the full pipeline and writes manifest.json, samples.jsonl and one
// XYZ file per EE cloud under out_dir.
DatasetManifest generate_dataset(const GenConfig& cfg, std::uint64_t seed,
                                 const std::string& out_dir);

struct DatasetRecord {
  std::string sample_id, instance_id, category, split;
  Pose obj_pose;
  double scale = 1.0;
  struct Ee {
    std::string cloud_relpath;
    Pose pose;
    Vec3 s{0.0, 0.0, 0.0};
  };
  std::vector<Ee> ees;
};

DatasetManifest load_manifest(const std::string& dataset_dir);
std::vector<DatasetRecord> load_dataset_records(const std::string& dataset_dir);

// Text XYZ: one point per line, three reals separated by single spaces.
void write_xyz(const PointCloud& cloud, const std::string& path);
PointCloud read_xyz(const std::string& path);

}  // namespace eepose
