// SPDX-License-Identifier: Apache-2.0

#include "eepose/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace eepose {

namespace fs = std::filesystem;

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

nlohmann::json read_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw MissingInput(std::string(what) + " not found at " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return j;
}

GenConfig config_from_manifest(const DatasetManifest& manifest) {
  return GenConfig::from_json(manifest.config);
}

// Fixed category order for reports: default spec order filtered by presence.
std::vector<std::string> present_categories(
    const std::vector<DatasetRecord>& records) {
  std::vector<std::string> order;
  for (const CategorySpec& spec : GenConfig::defaults().categories) {
    for (const DatasetRecord& r : records) {
      if (r.category == spec.name) {
        order.push_back(spec.name);
        break;
      }
    }
  }
  return order;
}

}  // namespace

DatasetManifest run_gen(const std::string& config_path,
                        const std::string& out_dir, std::uint64_t seed,
                        int samples_per_category_override) {
  GenConfig cfg = config_path.empty()
                      ? GenConfig::defaults()
                      : GenConfig::from_json(
                            read_json_file(config_path, "generator config"));
  if (samples_per_category_override > 0) {
    cfg.samples_per_category = samples_per_category_override;
  }
  return generate_dataset(cfg, seed, out_dir);
}

std::vector<ConsistencyEntry> build_consistency_entries(
    const std::string& dataset_dir, const AnalyzeOptions& options) {
  const std::vector<DatasetRecord> records = load_dataset_records(dataset_dir);
  const std::vector<std::string> categories = present_categories(records);

  std::vector<ConsistencyEntry> entries;
  std::uint64_t index = 0;
  for (const std::string& category : categories) {
    int taken = 0;
    for (const DatasetRecord& r : records) {
      if (r.category != category) continue;
      if (taken >= options.max_clouds_per_group) break;
      ++taken;
      const DatasetRecord::Ee& subject = r.ees.at(0);
      const PointCloud cam =
          read_xyz((fs::path(dataset_dir) / subject.cloud_relpath).string());

      Rng oc_rng(derive_seed(options.seed, "analysis", index++));
      ConsistencyEntry oc;
      oc.category = category;
      oc.centering = Centering::kObjectCentric;
      oc.cloud = resample_fixed(cam.transformed_inverse(r.obj_pose),
                                options.emd_points, oc_rng, 0.0);
      entries.push_back(std::move(oc));

      Rng ec_rng(derive_seed(options.seed, "analysis", index++));
      ConsistencyEntry ec;
      ec.category = category;
      ec.centering = Centering::kEeCentric;
      ec.cloud = resample_fixed(cam.transformed_inverse(subject.pose),
                                options.emd_points, ec_rng, 0.0);
      entries.push_back(std::move(ec));
    }
  }
  return entries;
}

std::vector<ConsistencyRow> run_analyze(const std::string& dataset_dir,
                                        const std::string& out_csv,
                                        const AnalyzeOptions& options) {
  const DatasetManifest manifest = load_manifest(dataset_dir);
  std::vector<ConsistencyEntry> entries =
      build_consistency_entries(dataset_dir, options);

  // Report rows grouped per category with object-centric first.
  std::stable_sort(entries.begin(), entries.end(),
                   [&](const ConsistencyEntry& a, const ConsistencyEntry& b) {
                     if (a.category != b.category) return false;
                     return static_cast<int>(a.centering) <
                            static_cast<int>(b.centering);
                   });
  const std::vector<ConsistencyRow> rows = consistency_report(entries);

  if (!out_csv.empty()) {
    std::ofstream out(out_csv, std::ios::binary);
    if (!out) throw IoError("cannot open " + out_csv + " for writing");
    out << "category,centering,metric,mean,variance\n";
    for (const ConsistencyRow& row : rows) {
      const std::pair<const char*, const MetricStats*> metrics[3] = {
          {"cd", &row.cd}, {"hd", &row.hd}, {"emd", &row.emd}};
      for (const auto& [name, stats] : metrics) {
        out << row.category << "," << centering_name(row.centering) << ","
            << name << "," << format_double(stats->mean) << ","
            << format_double(stats->variance) << "\n";
      }
    }
    out.close();
    append_run_log(fs::path(out_csv).parent_path().string(),
                   {fs::path(out_csv).filename().string(), "consistency",
                    to_hex(fnv1a_file(out_csv)), options.seed,
                    manifest.config_hash});
  }
  return rows;
}

std::vector<double> run_train(const std::string& dataset_dir,
                              const std::string& model_out,
                              const TrainOptions& options) {
  const DatasetManifest manifest = load_manifest(dataset_dir);
  const GenConfig gen_cfg = config_from_manifest(manifest);
  const std::vector<DatasetRecord> records = load_dataset_records(dataset_dir);

  // With centroid-anchored clouds the translation target is the offset of
  // the EE origin from the crop centroid, bounded by the largest crop ball.
  double trans_scale = gen_cfg.translation_bound();
  if (options.net.center_cloud) {
    double max_crop = 0.0;
    for (const CategorySpec& s : gen_cfg.active_categories()) {
      max_crop = std::max(max_crop, s.crop_radius);
    }
    trans_scale = max_crop * gen_cfg.scale_range.hi;
  }
  std::vector<PointCloud> clouds;
  std::vector<Vec12> poses;
  for (const DatasetRecord& r : records) {
    if (r.split != "train") continue;
    if (!options.category.empty() && r.category != options.category) continue;
    const DatasetRecord::Ee& subject = r.ees.at(0);
    clouds.push_back(
        read_xyz((fs::path(dataset_dir) / subject.cloud_relpath).string()));
    PoseVec12 vec;
    auto [rx, ry] = matrix_to_rot6d(subject.pose.rot);
    vec.rx = rx;
    vec.ry = ry;
    vec.s = subject.s;
    Vec3 t = subject.pose.trans;
    if (options.net.center_cloud) t -= order_invariant_centroid(clouds.back());
    vec.t = t / trans_scale;
    poses.push_back(vec.flat());
  }
  if (clouds.empty()) {
    throw InsufficientData("run_train: no training samples" +
                           (options.category.empty()
                                ? std::string()
                                : " for category " + options.category));
  }

  ScoreNetConfig net = options.net;
  net.scale_sigma_min = options.train.schedule.sigma_min;
  net.scale_sigma_max = options.train.schedule.sigma_max;
  net.schedule_eps = options.train.schedule.eps;
  net.trans_scale = trans_scale;
  ScoreNetParams params =
      init_params(net, derive_seed(options.train.seed, "init"));

  std::vector<TrainSample> dataset(clouds.size());
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    dataset[i] = {poses[i], &clouds[i]};
  }
  const std::vector<double> history = train(params, dataset, options.train);
  save_params(params, model_out);
  return history;
}

void ExperimentConfig::validate() const {
  if (thresholds.empty()) throw ConfigError("eval: thresholds must be non-empty");
  if (conditions.empty()) throw ConfigError("eval: conditions must be non-empty");
  for (const std::string& c : conditions) {
    if (c == "obj_w_pp") {
      throw ConfigError(
          "eval: condition obj_w_pp is reserved but unimplemented (no "
          "category-level pose prior extraction)");
    }
    if (c != "ee" && c != "ee_w_sp" && c != "ours") {
      throw ConfigError("eval: unknown condition \"" + c + "\"");
    }
  }
  if (model_path.empty() && model_dir.empty()) {
    throw ConfigError("eval: either model_path or model_dir is required");
  }
}

double EvalReport::at(const std::string& category, std::size_t threshold_idx,
                      std::size_t condition_idx) const {
  return values.at(category).at(threshold_idx * conditions.size() +
                                condition_idx);
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "category";
  for (const ThresholdSpec& th : thresholds) {
    for (const std::string& c : conditions) out << "," << c << "@" << th.label();
  }
  out << "\n";
  auto row = [&](const std::string& name, const std::vector<double>& vals) {
    out << name;
    for (double v : vals) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%.6f", v);
      out << "," << buf;
    }
    out << "\n";
  };
  for (const std::string& cat : categories) row(cat, values.at(cat));
  row("Average", average);
  return out.str();
}

EvalReport run_eval(const ExperimentConfig& cfg, const Estimator& estimator) {
  cfg.validate();
  const DatasetManifest manifest = load_manifest(cfg.dataset_dir);
  const std::vector<DatasetRecord> records =
      load_dataset_records(cfg.dataset_dir);

  EvalReport report;
  report.thresholds = cfg.thresholds;
  report.conditions = cfg.conditions;
  report.categories = present_categories(records);

  // Per-category model cache when a model directory is used.
  std::map<std::string, ScoreNetParams> models;
  auto model_for = [&](const std::string& category) -> const ScoreNetParams& {
    const std::string key = cfg.model_dir.empty() ? std::string() : category;
    auto it = models.find(key);
    if (it != models.end()) return it->second;
    std::string path = cfg.model_path;
    if (!cfg.model_dir.empty()) {
      path = (fs::path(cfg.model_dir) / (category + ".teep")).string();
    }
    if (!fs::exists(path)) throw ModelMissing("model file not found: " + path);
    return models.emplace(key, load_params(path)).first->second;
  };

  for (const std::string& category : report.categories) {
    // Rotation errors per condition, shared translation errors.
    std::vector<PoseError> err_ee, err_sp, err_ours;
    for (const DatasetRecord& r : records) {
      if (r.category != category || r.split != "test") continue;
      const DatasetRecord::Ee& subject = r.ees.at(0);
      const PointCloud cloud = read_xyz(
          (fs::path(cfg.dataset_dir) / subject.cloud_relpath).string());

      Prediction pred;
      if (estimator) {
        pred = estimator(r, cloud);
      } else {
        const ScoreNetParams& params = model_for(category);
        SampleConfig sc;
        sc.k = cfg.k;
        sc.ode_steps = cfg.ode_steps;
        sc.schedule = {params.cfg.scale_sigma_min, params.cfg.scale_sigma_max,
                       params.cfg.schedule_eps};
        sc.seed = derive_seed(cfg.seed, "eval", hash_label(r.sample_id));
        const EstimateResult est = estimate_pose(params, cloud, sc);
        pred = {est.pose, est.flags};
      }

      const double trans = translation_error(pred.pose, subject.pose);
      const SymmetryFlags gt_flags = SymmetryFlags::from_confidence(subject.s);
      err_ee.push_back({geodesic_angle(pred.pose.rot, subject.pose.rot), trans});
      err_sp.push_back(
          {rotation_error_symaware(pred.pose.rot, subject.pose.rot, gt_flags),
           trans});
      err_ours.push_back(
          {rotation_error_symaware(pred.pose.rot, subject.pose.rot, pred.flags),
           trans});
    }
    if (err_ee.empty()) {
      throw EmptyTestSplit("run_eval: no test samples for category " + category);
    }

    std::vector<double> row;
    const std::vector<double> map_ee = map_at_thresholds(err_ee, cfg.thresholds);
    const std::vector<double> map_sp = map_at_thresholds(err_sp, cfg.thresholds);
    const std::vector<double> map_ours =
        map_at_thresholds(err_ours, cfg.thresholds);
    for (std::size_t t = 0; t < cfg.thresholds.size(); ++t) {
      for (const std::string& c : cfg.conditions) {
        if (c == "ee") row.push_back(map_ee[t]);
        if (c == "ee_w_sp") row.push_back(map_sp[t]);
        if (c == "ours") row.push_back(map_ours[t]);
      }
    }
    report.values[category] = row;
  }

  report.average.assign(cfg.thresholds.size() * cfg.conditions.size(), 0.0);
  for (const std::string& cat : report.categories) {
    for (std::size_t i = 0; i < report.average.size(); ++i) {
      report.average[i] += report.values[cat][i];
    }
  }
  for (double& v : report.average) {
    v /= static_cast<double>(report.categories.size());
  }

  if (!cfg.out_csv.empty()) {
    std::ofstream out(cfg.out_csv, std::ios::binary);
    if (!out) throw IoError("cannot open " + cfg.out_csv + " for writing");
    out << report.to_csv();
    out.close();
    append_run_log(fs::path(cfg.out_csv).parent_path().string(),
                   {fs::path(cfg.out_csv).filename().string(), "eval",
                    to_hex(fnv1a_file(cfg.out_csv)), cfg.seed,
                    manifest.config_hash});
  }
  return report;
}

nlohmann::json run_infer(const std::string& model_path,
                         const std::string& cloud_path,
                         const InferOptions& options) {
  if (!fs::exists(model_path)) {
    throw ModelMissing("model file not found: " + model_path);
  }
  const ScoreNetParams params = load_params(model_path);
  const PointCloud cloud = read_xyz(cloud_path);

  SampleConfig sc;
  sc.k = options.k;
  sc.ode_steps = options.ode_steps;
  sc.schedule = {params.cfg.scale_sigma_min, params.cfg.scale_sigma_max,
                 params.cfg.schedule_eps};
  sc.seed = options.seed;

  std::optional<Rotation> reference;
  if (!options.refine_ref_path.empty()) {
    const nlohmann::json j =
        read_json_file(options.refine_ref_path, "refine reference pose");
    reference = pose_from_json(j).first.rot;
  }
  const EstimateResult est = estimate_pose(params, cloud, sc, reference);

  nlohmann::json out = pose_to_json(est.pose, est.s);
  out["flags"] = {est.flags.axis[0], est.flags.axis[1], est.flags.axis[2]};
  return out;
}

void append_run_log(const std::string& dir, const RunLogEntry& entry) {
  const std::string path = (fs::path(dir.empty() ? "." : dir) / "run_log.json").string();
  nlohmann::json log = nlohmann::json::array();
  if (fs::exists(path)) log = read_json_file(path, "run log");
  log.push_back({{"file", entry.file},
                 {"role", entry.role},
                 {"fnv64", entry.fnv64},
                 {"seed", entry.seed},
                 {"config_hash", entry.config_hash}});
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << log.dump(2) << "\n";
}

std::vector<RunLogEntry> read_run_log(const std::string& dir) {
  const std::string path = (fs::path(dir.empty() ? "." : dir) / "run_log.json").string();
  if (!fs::exists(path)) {
    throw MissingInput("run log not found at " + path +
                       "; run analyze/eval first");
  }
  const nlohmann::json log = read_json_file(path, "run log");
  std::vector<RunLogEntry> entries;
  for (const auto& e : log) {
    entries.push_back({e.at("file").get<std::string>(),
                       e.at("role").get<std::string>(),
                       e.at("fnv64").get<std::string>(),
                       e.at("seed").get<std::uint64_t>(),
                       e.at("config_hash").get<std::string>()});
  }
  if (entries.empty()) throw MissingInput("run log at " + path + " is empty");
  return entries;
}

std::string run_report(const std::string& dir, const std::string& out_md) {
  const std::vector<RunLogEntry> entries = read_run_log(dir);
  std::ostringstream md;
  md << "# Pipeline report\n\n## Artifacts\n\n";
  std::vector<std::string> warnings;
  for (const RunLogEntry& e : entries) {
    const std::string path = (fs::path(dir.empty() ? "." : dir) / e.file).string();
    if (!fs::exists(path)) {
      throw MissingInput("report: logged artifact missing: " + path);
    }
    const std::string current = to_hex(fnv1a_file(path));
    md << "- `" << e.file << "` (" << e.role << ") checksum fnv64:" << e.fnv64
       << ", seed " << e.seed << ", dataset config " << e.config_hash << "\n";
    if (current != e.fnv64) {
      warnings.push_back("stale checksum for " + e.file + ": logged " +
                         e.fnv64 + ", current " + current);
    }
  }
  if (!warnings.empty()) {
    md << "\n## Warnings\n\n";
    for (const std::string& w : warnings) md << "- " << w << "\n";
  }
  for (const RunLogEntry& e : entries) {
    const std::string path = (fs::path(dir.empty() ? "." : dir) / e.file).string();
    std::ifstream in(path);
    md << "\n## " << e.file << "\n\n```\n" << in.rdbuf() << "```\n";
  }
  const std::string text = md.str();
  if (!out_md.empty()) {
    std::ofstream out(out_md, std::ios::binary);
    if (!out) throw IoError("cannot open " + out_md + " for writing");
    out << text;
  }
  return text;
}

}  // namespace eepose
