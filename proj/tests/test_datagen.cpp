// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "eepose/datagen.hpp"

using namespace eepose;
namespace fs = std::filesystem;

namespace {

const CategorySpec& spec_of(const GenConfig& cfg, const std::string& name) {
  for (const CategorySpec& s : cfg.categories) {
    if (s.name == name) return s;
  }
  throw std::runtime_error("no spec " + name);
}

GenConfig tiny_config(const std::string& category, int samples = 6,
                      int instances = 3, int points = 4000) {
  GenConfig cfg = GenConfig::defaults();
  cfg.category_filter = {category};
  cfg.samples_per_category = samples;
  cfg.instances_per_category = instances;
  cfg.points_per_tool = points;
  return cfg;
}

std::string temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("eepose_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::uint64_t tree_checksum(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) {
      files.push_back(fs::relative(entry.path(), dir).string());
    }
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const std::string& f : files) {
    h = fnv1a(f.data(), f.size(), h);
    h = mix_seed(h, fnv1a_file((fs::path(dir) / f).string()));
  }
  return h;
}

PointCloud sphere_cloud(Rng& rng, int n) {
  PointCloud c(n);
  for (int i = 0; i < n; ++i) {
    Vec3 v;
    do {
      for (int k = 0; k < 3; ++k) v[k] = rng.normal();
    } while (v.norm() < 1e-9);
    c.pts.row(i) = (v / v.norm()).transpose();
  }
  return c;
}

}  // namespace

TEST_CASE("sample_shape is deterministic and normalized") {
  const GenConfig cfg = GenConfig::defaults();
  for (const CategorySpec& spec : cfg.categories) {
    Rng rng_a(99), rng_b(99);
    const ToolModel a = sample_shape(spec, rng_a, 3000);
    const ToolModel b = sample_shape(spec, rng_b, 3000);
    CHECK((a.cloud.pts - b.cloud.pts).cwiseAbs().maxCoeff() == 0.0);

    CHECK(a.cloud.centroid().norm() < 1e-9);
    const Vec3 lo = a.cloud.pts.colwise().minCoeff().transpose();
    const Vec3 hi = a.cloud.pts.colwise().maxCoeff().transpose();
    CHECK((hi - lo).norm() == doctest::Approx(1.0).epsilon(1e-6));

    CHECK(static_cast<int>(a.ee_frames.size()) == spec.ee_count_per_tool);
    bool has_subject = false;
    for (const EeFrame& ee : a.ee_frames) has_subject |= ee.category == spec.name;
    CHECK(has_subject);
  }
}

TEST_CASE("hammer head points stay within the head cylinder") {
  const GenConfig cfg = GenConfig::defaults();
  Rng rng(7);
  const ToolModel tool = sample_shape(spec_of(cfg, "hammer_head"), rng, 5000);
  const double r = tool.params.at("head_radius");
  const double len = tool.params.at("head_length");

  const EeFrame& head = tool.ee_frames.front();
  const Vec3 axis = head.rot.col(2);  // working axis along the head cylinder
  const Vec3 face = head.origin;
  const double len_n = len / tool.prenorm_diag;
  const double r_n = (r + 1e-9) / tool.prenorm_diag;

  for (Eigen::Index i = 0; i < tool.cloud.size(); ++i) {
    if (tool.part_labels[i] != kPartHead) continue;
    const Vec3 p = tool.cloud.point(i);
    // Distance to the axis segment from the far cap to the striking face.
    const double along = std::clamp((p - face).dot(axis), -len_n, 0.0);
    const double dist = (p - (face + along * axis)).norm();
    CHECK(dist <= r_n);
  }
}

TEST_CASE("sample_pose determinism and translation ranges") {
  Rng a(3), b(3);
  const Pose pa = sample_pose(a, 0.3, 0.1);
  const Pose pb = sample_pose(b, 0.3, 0.1);
  CHECK((pa.rot.matrix() - pb.rot.matrix()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((pa.trans - pb.trans).norm() == 0.0);

  Rng rng(4);
  for (int i = 0; i < 2000; ++i) {
    const Pose p = sample_pose(rng, 0.3, 0.1);
    CHECK(std::abs(p.trans.x()) <= 0.3);
    CHECK(std::abs(p.trans.y()) <= 0.3);
    CHECK(std::abs(p.trans.z()) <= 0.4);  // box plus the extra z offset
  }
}

TEST_CASE("sample_pose rotations are uniform on SO(3)") {
  Rng rng(5);
  const int n = 10000;
  Mat3 mean = Mat3::Zero();
  int octant_counts[8] = {0};
  for (int i = 0; i < n; ++i) {
    const Pose p = sample_pose(rng, 0.3, 0.1);
    mean += p.rot.matrix();
    const Vec3 axis = p.rot.col(2);
    const int bin = (axis.x() > 0 ? 1 : 0) | (axis.y() > 0 ? 2 : 0) |
                    (axis.z() > 0 ? 4 : 0);
    ++octant_counts[bin];
  }
  mean /= static_cast<double>(n);
  CHECK(mean.cwiseAbs().maxCoeff() < 0.025);  // ~4 sigma for n = 10000

  // Chi-squared over octants of the rotated z axis, 7 dof, p = 0.01.
  const double expected = n / 8.0;
  double chi2 = 0.0;
  for (int c : octant_counts) {
    chi2 += (c - expected) * (c - expected) / expected;
  }
  CHECK(chi2 < 18.475);
}

TEST_CASE("render_partial keeps at least half of a centrally symmetric cloud") {
  Rng data_rng(6);
  PointCloud cloud(400);
  for (int i = 0; i < 200; ++i) {
    Vec3 v(data_rng.normal(), data_rng.normal(), data_rng.normal());
    cloud.pts.row(2 * i) = v.transpose();
    cloud.pts.row(2 * i + 1) = -v.transpose();
  }
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const PointCloud out = render_partial(cloud, rng, 0.0, 0.0);
    CHECK(out.size() >= cloud.size() / 2);
  }
}

TEST_CASE("render_partial on a sphere keeps about half the points") {
  Rng data_rng(8);
  const PointCloud cloud = sphere_cloud(data_rng, 2000);
  double total = 0.0;
  for (int seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + seed);
    const double frac =
        static_cast<double>(render_partial(cloud, rng, 0.0, 0.0).size()) /
        static_cast<double>(cloud.size());
    CHECK(frac == doctest::Approx(0.5).epsilon(0.1));
    total += frac;
  }
  CHECK(total / 100.0 == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("render_partial with a huge occluder empties the cloud") {
  Rng data_rng(9);
  const PointCloud cloud = sphere_cloud(data_rng, 100);
  Rng rng(10);
  const PointCloud out = render_partial(cloud, rng, 50.0, 50.0);
  CHECK(out.size() == 0);
}

TEST_CASE("clean_filter threshold is exactly 50 points") {
  PointCloud c49(49), c50(50), c1024(1024);
  c49.pts.setZero();
  c50.pts.setZero();
  c1024.pts.setZero();
  CHECK_FALSE(clean_filter(c49));
  CHECK(clean_filter(c50));
  CHECK(clean_filter(c1024));
}

TEST_CASE("resample_fixed subsamples without replacement when possible") {
  PointCloud big(2000);
  for (int i = 0; i < 2000; ++i) {
    big.pts.row(i) = Vec3(i, 2.0 * i, -i).transpose();
  }
  Rng rng(12);
  const PointCloud out = resample_fixed(big, 1024, rng);
  CHECK(out.size() == 1024);
  std::set<double> xs;
  for (int i = 0; i < 1024; ++i) xs.insert(out.pts(i, 0));
  CHECK(xs.size() == 1024);  // all distinct originals

  // Same-size input: identical set, order may differ.
  PointCloud exact(100);
  for (int i = 0; i < 100; ++i) exact.pts.row(i) = Vec3(i, 0, 0).transpose();
  Rng rng2(13);
  const PointCloud same = resample_fixed(exact, 100, rng2);
  std::set<double> sx;
  for (int i = 0; i < 100; ++i) sx.insert(same.pts(i, 0));
  CHECK(sx.size() == 100);

  CHECK_THROWS_AS(resample_fixed(PointCloud{}, 10, rng), EmptyCloud);
}

TEST_CASE("resample_fixed upsampling covers every original point") {
  PointCloud small(100);
  for (int i = 0; i < 100; ++i) small.pts.row(i) = Vec3(i, 0, 0).transpose();
  int full_coverage = 0;
  const int trials = 300;
  for (int seed = 0; seed < trials; ++seed) {
    Rng rng(2000 + seed);
    const PointCloud out = resample_fixed(small, 1024, rng, 1e-4);
    CHECK(out.size() == 1024);
    std::set<int> seen;
    for (int i = 0; i < 1024; ++i) {
      seen.insert(static_cast<int>(std::round(out.pts(i, 0))));
    }
    if (static_cast<int>(seen.size()) == 100) ++full_coverage;
  }
  // Coupon collector: P(all present) ~ 0.996 for 1024 draws over 100 points.
  CHECK(static_cast<double>(full_coverage) / trials >= 0.98);
}

TEST_CASE("generate_sample ground truth maps EE clouds into the crop ball") {
  const GenConfig cfg = GenConfig::defaults();
  for (const std::string name :
       {"hammer_head", "hammer_grip", "screwdriver_head", "wrench_head"}) {
    const CategorySpec& spec = spec_of(cfg, name);
    const ToolModel tool = instance_model(cfg, spec, 21, 0);
    const SampleBuild build = generate_sample(cfg, tool, spec, 77);
    const SceneSample& sample = build.sample;
    REQUIRE(static_cast<int>(sample.ees.size()) == spec.ee_count_per_tool);

    for (std::size_t k = 0; k < sample.ees.size(); ++k) {
      const EeObservation& obs = sample.ees[k];
      const CategorySpec& ee_spec = spec_of(cfg, obs.category);
      const PointCloud in_ee =
          build.unoccluded_crops[k].transformed_inverse(obs.gt_pose);
      const double bound = ee_spec.crop_radius * sample.scale + 1e-6;
      CHECK(in_ee.pts.rowwise().norm().maxCoeff() <= bound);
      CHECK(obs.pre_resample_count >= cfg.min_ee_points);
      CHECK(obs.cloud.size() == cfg.resample_points);
    }
    CHECK(sample.ees.front().category == name);
  }
}

TEST_CASE("pre-resample EE clouds are subsets of the unoccluded crops") {
  const GenConfig cfg = GenConfig::defaults();
  const CategorySpec& spec = spec_of(cfg, "hammer_head");
  const ToolModel tool = instance_model(cfg, spec, 22, 1);
  const SampleBuild build = generate_sample(cfg, tool, spec, 88);
  for (std::size_t k = 0; k < build.pre_resample.size(); ++k) {
    const PointCloud& sub = build.pre_resample[k];
    const PointCloud& full = build.unoccluded_crops[k];
    for (Eigen::Index i = 0; i < sub.size(); ++i) {
      double best = 1e300;
      for (Eigen::Index j = 0; j < full.size(); ++j) {
        best = std::min(best, (sub.point(i) - full.point(j)).norm());
      }
      CHECK(best == 0.0);
    }
  }
}

TEST_CASE("hammer grip symmetry flag depends on the crop content") {
  GenConfig cfg = GenConfig::defaults();
  const ToolModel tool = instance_model(cfg, spec_of(cfg, "hammer_grip"), 23, 0);

  // Default crop keeps to the handle: the grip stays z-symmetric.
  SampleBuild build = generate_sample(cfg, tool, spec_of(cfg, "hammer_grip"), 99);
  CHECK(build.sample.symmetry_gt.axis[2]);

  // A crop wide enough to reach head geometry drops the symmetry claim.
  for (CategorySpec& s : cfg.categories) {
    if (s.name == "hammer_grip") s.crop_radius = 0.9;
  }
  const ToolModel tool_wide = instance_model(cfg, spec_of(cfg, "hammer_grip"), 23, 0);
  SampleBuild wide =
      generate_sample(cfg, tool_wide, spec_of(cfg, "hammer_grip"), 99);
  CHECK_FALSE(wide.sample.symmetry_gt.any());
}

TEST_CASE("generate_dataset is byte-identical across reruns") {
  const GenConfig cfg = tiny_config("hammer_head", 4, 2, 3000);
  const std::string dir_a = temp_dir("regen_a");
  const std::string dir_b = temp_dir("regen_b");
  const DatasetManifest ma = generate_dataset(cfg, 7, dir_a);
  const DatasetManifest mb = generate_dataset(cfg, 7, dir_b);
  CHECK(ma.samples.size() == 4);
  CHECK(mb.samples.size() == 4);
  CHECK(tree_checksum(dir_a) == tree_checksum(dir_b));

  // A different seed changes the bytes.
  const std::string dir_c = temp_dir("regen_c");
  generate_dataset(cfg, 8, dir_c);
  CHECK(tree_checksum(dir_a) != tree_checksum(dir_c));
}

TEST_CASE("generate_dataset splits by instance, never by sample") {
  const GenConfig cfg = tiny_config("screwdriver_head", 12, 4, 6000);
  const std::string dir = temp_dir("split");
  const DatasetManifest manifest = generate_dataset(cfg, 11, dir);

  std::set<std::string> train_inst(
      manifest.train_instances.at("screwdriver_head").begin(),
      manifest.train_instances.at("screwdriver_head").end());
  std::set<std::string> test_inst(
      manifest.test_instances.at("screwdriver_head").begin(),
      manifest.test_instances.at("screwdriver_head").end());
  for (const std::string& id : train_inst) CHECK(test_inst.count(id) == 0);
  CHECK(!train_inst.empty());
  CHECK(!test_inst.empty());

  for (const ManifestSampleEntry& s : manifest.samples) {
    const bool is_train = train_inst.count(s.instance_id) > 0;
    CHECK(s.split == (is_train ? "train" : "test"));
  }
}

TEST_CASE("dataset files follow the declared layout") {
  const GenConfig cfg = tiny_config("wrench_head", 3, 2, 3500);
  const std::string dir = temp_dir("layout");
  generate_dataset(cfg, 19, dir);

  const std::vector<DatasetRecord> records = load_dataset_records(dir);
  REQUIRE(records.size() == 3);
  for (const DatasetRecord& rec : records) {
    CHECK(rec.category == "wrench_head");
    REQUIRE(rec.ees.size() == 1);
    const std::string cloud_path =
        (fs::path(dir) / rec.ees[0].cloud_relpath).string();

    // Exactly resample_points lines of three space-separated reals, LF only.
    std::ifstream in(cloud_path, std::ios::binary);
    REQUIRE(in.good());
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
      ++lines;
      double x, y, z;
      char extra;
      CHECK(std::sscanf(line.c_str(), "%lf %lf %lf %c", &x, &y, &z, &extra) == 3);
      CHECK(line.find('\r') == std::string::npos);
    }
    CHECK(lines == cfg.resample_points);

    const PointCloud cloud = read_xyz(cloud_path);
    CHECK(cloud.size() == cfg.resample_points);
  }
}

TEST_CASE("config parsing names the offending field") {
  CHECK_THROWS_WITH_AS(
      GenConfig::from_json(nlohmann::json{{"samples_per_category", -3}}),
      doctest::Contains("samples_per_category"), ConfigError);
  CHECK_THROWS_WITH_AS(GenConfig::from_json(nlohmann::json{{"bogus_key", 1}}),
                       doctest::Contains("bogus_key"), ConfigError);
  CHECK_THROWS_WITH_AS(
      GenConfig::from_json(nlohmann::json{{"scale_range", {0.3, 0.1}}}),
      doctest::Contains("scale_range"), ConfigError);
  CHECK_THROWS_WITH_AS(
      GenConfig::from_json(
          nlohmann::json{{"categories", {{"no_such", {{"crop_radius", 1.0}}}}}}),
      doctest::Contains("no_such"), ConfigError);

  // Round trip of the default config through JSON.
  const GenConfig cfg = GenConfig::defaults();
  const GenConfig back = GenConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
}
