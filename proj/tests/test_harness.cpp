// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "eepose/harness.hpp"

using namespace eepose;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("eepose_harness_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string write_tiny_config(const std::string& dir, int samples,
                              const std::string& category) {
  nlohmann::json cfg{
      {"samples_per_category", samples},
      {"instances_per_category", 4},
      {"points_per_tool", 2500},
      {"category_filter", {category}},
  };
  const std::string path = (fs::path(dir) / "config.json").string();
  std::ofstream out(path);
  out << cfg.dump(2);
  return path;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Estimator perfect_estimator() {
  return [](const DatasetRecord& rec, const PointCloud&) {
    Prediction p;
    p.pose = rec.ees.at(0).pose;
    p.flags = SymmetryFlags::from_confidence(rec.ees.at(0).s);
    return p;
  };
}

// Ground truth composed with a half-turn about the symmetric body axis.
Estimator flipped_estimator() {
  return [](const DatasetRecord& rec, const PointCloud&) {
    Prediction p;
    const Pose& gt = rec.ees.at(0).pose;
    const SymmetryFlags flags = SymmetryFlags::from_confidence(rec.ees.at(0).s);
    Vec3 axis = Vec3::Zero();
    for (int i = 0; i < 3; ++i) {
      if (flags.axis[i]) axis[i] = 1.0;
    }
    p.pose.rot = Rotation::from_matrix_unchecked(
        gt.rot.matrix() * axis_angle(axis, kPi).matrix());
    p.pose.trans = gt.trans;
    p.flags = flags;
    return p;
  };
}

}  // namespace

TEST_CASE("gen + analyze produce the declared CSV layout") {
  const std::string dir = temp_dir("analyze");
  const std::string cfg = write_tiny_config(dir, 8, "screwdriver_head");
  run_gen(cfg, dir + "/data", 3);

  AnalyzeOptions opts;
  opts.max_clouds_per_group = 8;
  opts.emd_points = 64;
  const std::string csv = dir + "/consistency.csv";
  const auto rows = run_analyze(dir + "/data", csv, opts);
  REQUIRE(rows.size() == 2);  // one category, two centerings

  const std::string text = slurp(csv);
  std::istringstream lines(text);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "category,centering,metric,mean,variance");
  int count = 0;
  while (std::getline(lines, line)) {
    if (!line.empty()) ++count;
  }
  CHECK(count == 6);  // 1 category x 2 centerings x 3 metrics
  CHECK(text.find("object_centric") != std::string::npos);
  CHECK(text.find("ee_centric") != std::string::npos);

  CHECK_THROWS_AS(run_analyze(dir + "/nope", "", opts), MissingInput);
}

TEST_CASE("analysis is deterministic end to end") {
  const std::string dir = temp_dir("determinism");
  const std::string cfg = write_tiny_config(dir, 6, "wrench_head");
  run_gen(cfg, dir + "/a", 11);
  run_gen(cfg, dir + "/b", 11);

  AnalyzeOptions opts;
  opts.max_clouds_per_group = 6;
  opts.emd_points = 48;
  run_analyze(dir + "/a", dir + "/a.csv", opts);
  run_analyze(dir + "/b", dir + "/b.csv", opts);
  CHECK(slurp(dir + "/a.csv") == slurp(dir + "/b.csv"));
}

TEST_CASE("eval with a perfect predictor scores 1.0 everywhere") {
  const std::string dir = temp_dir("eval_perfect");
  const std::string cfg = write_tiny_config(dir, 8, "screwdriver_head");
  run_gen(cfg, dir + "/data", 5);

  ExperimentConfig ec;
  ec.dataset_dir = dir + "/data";
  ec.model_path = "unused.teep";
  ec.out_csv = dir + "/map_table.csv";
  const EvalReport rep = run_eval(ec, perfect_estimator());

  REQUIRE(rep.categories == std::vector<std::string>{"screwdriver_head"});
  for (std::size_t t = 0; t < rep.thresholds.size(); ++t) {
    for (std::size_t c = 0; c < rep.conditions.size(); ++c) {
      CHECK(rep.at("screwdriver_head", t, c) == 1.0);
    }
  }
  for (double v : rep.average) CHECK(v == 1.0);

  // Layout mirrors the published table: threshold-major column order.
  const std::string text = slurp(ec.out_csv);
  std::istringstream lines(text);
  std::string header;
  std::getline(lines, header);
  CHECK(header ==
        "category,ee@5deg2cm,ee_w_sp@5deg2cm,ours@5deg2cm,"
        "ee@5deg5cm,ee_w_sp@5deg5cm,ours@5deg5cm,"
        "ee@10deg5cm,ee_w_sp@10deg5cm,ours@10deg5cm");
  CHECK(text.find("Average") != std::string::npos);
}

TEST_CASE("eval separates the conditions on symmetric flips") {
  const std::string dir = temp_dir("eval_flip");
  const std::string cfg = write_tiny_config(dir, 10, "screwdriver_head");
  run_gen(cfg, dir + "/data", 7);

  ExperimentConfig ec;
  ec.dataset_dir = dir + "/data";
  ec.model_path = "unused.teep";
  const EvalReport rep = run_eval(ec, flipped_estimator());

  // Half-turn about the symmetric axis: geodesic error is pi, axis error 0.
  CHECK(rep.at("screwdriver_head", 0, 0) == 0.0);  // ee @ 5deg2cm
  CHECK(rep.at("screwdriver_head", 0, 1) == 1.0);  // ee_w_sp @ 5deg2cm
  CHECK(rep.at("screwdriver_head", 0, 2) == 1.0);  // ours (correct flags)

  // With correct predicted flags, ours equals ee_w_sp at every threshold.
  for (std::size_t t = 0; t < rep.thresholds.size(); ++t) {
    CHECK(rep.at("screwdriver_head", t, 2) ==
          rep.at("screwdriver_head", t, 1));
    // Symmetry-aware errors never lose to plain geodesic errors.
    CHECK(rep.at("screwdriver_head", t, 0) <=
          rep.at("screwdriver_head", t, 1));
  }
}

TEST_CASE("eval validates conditions and inputs") {
  ExperimentConfig ec;
  ec.dataset_dir = "unused";
  ec.model_path = "unused.teep";
  ec.conditions = {"obj_w_pp"};
  CHECK_THROWS_WITH_AS(run_eval(ec), doctest::Contains("unimplemented"),
                       ConfigError);
  ec.conditions = {"bogus"};
  CHECK_THROWS_AS(run_eval(ec), ConfigError);
  ec.conditions = {"ee"};
  ec.model_path = "";
  CHECK_THROWS_AS(run_eval(ec), ConfigError);
  ec.model_path = "unused.teep";
  ec.thresholds = {};
  CHECK_THROWS_AS(run_eval(ec), ConfigError);

  // A real dataset but a missing model file.
  const std::string dir = temp_dir("eval_missing");
  const std::string cfg = write_tiny_config(dir, 4, "hammer_grip");
  run_gen(cfg, dir + "/data", 9);
  ExperimentConfig real;
  real.dataset_dir = dir + "/data";
  real.model_path = dir + "/absent.teep";
  real.k = 1;
  real.ode_steps = 2;
  CHECK_THROWS_AS(run_eval(real), ModelMissing);
}

TEST_CASE("train writes a loadable model wired to the dataset scale") {
  const std::string dir = temp_dir("train");
  const std::string cfg = write_tiny_config(dir, 6, "hammer_head");
  run_gen(cfg, dir + "/data", 13);

  TrainOptions opts;
  opts.category = "hammer_head";
  opts.train.epochs = 2;
  opts.train.batch_size = 4;
  opts.train.seed = 1;
  opts.net.enc_widths = {8, 8};
  opts.net.global_width = 8;
  opts.net.time_freq_pairs = 4;
  opts.net.time_width = 8;
  opts.net.pose_widths = {8, 8};
  opts.net.trunk_widths = {8, 8};

  const std::string model = dir + "/model.teep";
  const std::vector<double> history = run_train(dir + "/data", model, opts);
  CHECK(history.size() == 2);

  const ScoreNetParams params = load_params(model);
  CHECK(params.cfg.trans_scale == doctest::Approx(0.4));  // box + z extra

  // Inference emits the pose JSON plus flags.
  const auto records = load_dataset_records(dir + "/data");
  InferOptions io;
  io.k = 2;
  io.ode_steps = 4;
  const nlohmann::json out = run_infer(
      model, dir + "/data/" + records.front().ees[0].cloud_relpath, io);
  CHECK(out.contains("rot"));
  CHECK(out.contains("t"));
  CHECK(out.contains("s"));
  CHECK(out.contains("flags"));
  CHECK(out.at("rot").size() == 9);

  CHECK_THROWS_AS(run_infer(dir + "/no.teep", "x.xyz", io), ModelMissing);

  TrainOptions none = opts;
  none.category = "wrench_head";
  CHECK_THROWS_AS(run_train(dir + "/data", model, none), InsufficientData);
}

TEST_CASE("report collates artifacts and flags stale checksums") {
  const std::string dir = temp_dir("report");
  const std::string cfg = write_tiny_config(dir, 8, "screwdriver_head");
  run_gen(cfg, dir + "/data", 3);

  AnalyzeOptions aopts;
  aopts.max_clouds_per_group = 6;
  aopts.emd_points = 48;
  run_analyze(dir + "/data", dir + "/consistency.csv", aopts);

  ExperimentConfig ec;
  ec.dataset_dir = dir + "/data";
  ec.model_path = "unused.teep";
  ec.out_csv = dir + "/map_table.csv";
  run_eval(ec, perfect_estimator());

  const std::string report = run_report(dir, dir + "/report.md");
  CHECK(report.find("consistency.csv") != std::string::npos);
  CHECK(report.find("map_table.csv") != std::string::npos);
  CHECK(report.find("fnv64:") != std::string::npos);
  CHECK(report.find("Warnings") == std::string::npos);

  // Tamper with a logged CSV: the report must list a stale checksum.
  {
    std::ofstream out(dir + "/consistency.csv", std::ios::app);
    out << "tampered\n";
  }
  const std::string stale = run_report(dir, dir + "/report.md");
  CHECK(stale.find("stale checksum") != std::string::npos);

  fs::remove(dir + "/map_table.csv");
  CHECK_THROWS_AS(run_report(dir, ""), MissingInput);

  CHECK_THROWS_AS(run_report(temp_dir("report_empty"), ""), MissingInput);
}

#ifdef EEPOSE_CLI
TEST_CASE("CLI exit codes follow the contract") {
  const std::string dir = temp_dir("cli");
  const std::string cfg = write_tiny_config(dir, 3, "wrench_head");
  auto run = [](const std::string& cmd) {
    const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
  };
  const std::string cli = EEPOSE_CLI;

  CHECK(run(cli + " gen --out " + dir + "/data --seed 4 --config " + cfg) == 0);
  CHECK(run(cli + " analyze --dataset " + dir +
            "/data --max-clouds 3 --emd-points 32 --out " + dir + "/c.csv") == 0);
  CHECK(run(cli + " report --dir " + dir + " --out " + dir + "/r.md") == 0);

  // Config error: malformed config file field.
  {
    std::ofstream bad(dir + "/bad.json");
    bad << "{\"samples_per_category\": -1}";
  }
  CHECK(run(cli + " gen --out " + dir + "/x --config " + dir + "/bad.json") == 2);
  // Data error: missing dataset.
  CHECK(run(cli + " analyze --dataset " + dir + "/missing --out " + dir +
            "/c2.csv") == 3);
  // Data error: missing model.
  CHECK(run(cli + " infer --model " + dir + "/no.teep --cloud " + dir +
            "/no.xyz") == 3);
  // Unknown flags are config errors.
  CHECK(run(cli + " gen --bogus-flag 1 --out " + dir + "/y") == 2);
}
#endif
