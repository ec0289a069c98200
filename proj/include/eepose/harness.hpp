// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eepose/datagen.hpp"
#include "eepose/diffusion.hpp"
#include "eepose/metrics.hpp"

namespace eepose {

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

// Generates the dataset and returns its manifest. `config_json` may be empty
// (defaults) or a path to a JSON config.
DatasetManifest run_gen(const std::string& config_path,
                        const std::string& out_dir, std::uint64_t seed,
                        int samples_per_category_override = 0);

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeOptions {
  int max_clouds_per_group = 40;  // pairwise work grows quadratically
  int emd_points = 256;
  std::uint64_t seed = 0;
};

// Canonicalized per-mode clouds for the subject EE of every sample:
// object-centric via the inverse object pose, EE-centric via the inverse EE
// pose, both resampled to a common point count.
std::vector<ConsistencyEntry> build_consistency_entries(
    const std::string& dataset_dir, const AnalyzeOptions& options);

std::vector<ConsistencyRow> run_analyze(const std::string& dataset_dir,
                                        const std::string& out_csv,
                                        const AnalyzeOptions& options);

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOptions {
  std::string category;  // empty = pool all categories
  TrainConfig train;
  ScoreNetConfig net;  // widths; decode metadata is filled from the dataset
};

std::vector<double> run_train(const std::string& dataset_dir,
                              const std::string& model_out,
                              const TrainOptions& options);

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

inline std::vector<ThresholdSpec> default_thresholds() {
  return {{5.0, 0.02}, {5.0, 0.05}, {10.0, 0.05}};
}

inline std::vector<std::string> default_conditions() {
  return {"ee", "ee_w_sp", "ours"};
}

struct ExperimentConfig {
  std::string dataset_dir;
  std::string model_path;  // single model for every category, or
  std::string model_dir;   // per-category <category>.teep files
  std::vector<ThresholdSpec> thresholds = default_thresholds();
  std::vector<std::string> conditions = default_conditions();
  int k = 50;
  int ode_steps = 500;
  std::uint64_t seed = 0;
  std::string out_csv;  // optional

  void validate() const;
};

struct Prediction {
  Pose pose;
  SymmetryFlags flags;
};

/// Injectable predictor for tests: (record, subject cloud) -> prediction.
using Estimator =
    std::function<Prediction(const DatasetRecord&, const PointCloud&)>;

struct EvalReport {
  std::vector<ThresholdSpec> thresholds;
  std::vector<std::string> conditions;
  std::vector<std::string> categories;  // row order, "Average" appended in CSV
  // category -> threshold-major [t0/c0, t0/c1, ..., t1/c0, ...]
  std::map<std::string, std::vector<double>> values;
  std::vector<double> average;

  double at(const std::string& category, std::size_t threshold_idx,
            std::size_t condition_idx) const;
  std::string to_csv() const;
};

EvalReport run_eval(const ExperimentConfig& cfg,
                    const Estimator& estimator = nullptr);

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

struct InferOptions {
  int k = 50;
  int ode_steps = 500;
  std::uint64_t seed = 0;
  std::string refine_ref_path;  // optional pose JSON with the reference
};

nlohmann::json run_infer(const std::string& model_path,
                         const std::string& cloud_path,
                         const InferOptions& options);

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct RunLogEntry {
  std::string file;  // relative to the run-log directory
  std::string role;  // consistency | eval
  std::string fnv64;
  std::uint64_t seed = 0;
  std::string config_hash;
};

void append_run_log(const std::string& dir, const RunLogEntry& entry);
std::vector<RunLogEntry> read_run_log(const std::string& dir);

// Collates the logged CSVs into a markdown report with checksums and seeds;
// stale checksums are listed as warnings. Returns the report text.
std::string run_report(const std::string& dir, const std::string& out_md);

}  // namespace eepose
