// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "eepose/harness.hpp"

namespace {

using namespace eepose;

int dispatch(int argc, char** argv) {
  CLI::App app{"End-effector pose estimation toolkit"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic EE dataset");
  std::string gen_config, gen_out = "data";
  std::uint64_t gen_seed = 0;
  int gen_samples = 0;
  gen->add_option("--config", gen_config, "Generator config JSON");
  gen->add_option("--out", gen_out, "Output dataset directory")->required();
  gen->add_option("--seed", gen_seed, "Dataset seed");
  gen->add_option("--samples", gen_samples, "Override samples per category");

  // analyze
  auto* analyze = app.add_subcommand(
      "analyze", "Object-centric vs EE-centric consistency analysis");
  std::string an_dataset, an_out = "consistency.csv";
  AnalyzeOptions an_opts;
  analyze->add_option("--dataset", an_dataset, "Dataset directory")->required();
  analyze->add_option("--out", an_out, "Output CSV path");
  analyze->add_option("--seed", an_opts.seed, "Resampling seed");
  analyze->add_option("--max-clouds", an_opts.max_clouds_per_group,
                      "Cap on clouds per (category, centering) group");
  analyze->add_option("--emd-points", an_opts.emd_points,
                      "Common point count for pairwise metrics");

  // train
  auto* train = app.add_subcommand("train", "Train the diffusion pose model");
  std::string tr_dataset, tr_out = "model.teep";
  TrainOptions tr_opts;
  train->add_option("--dataset", tr_dataset, "Dataset directory")->required();
  train->add_option("--out", tr_out, "Output model path");
  train->add_option("--category", tr_opts.category,
                    "Train on one category only");
  train->add_option("--epochs", tr_opts.train.epochs, "Training epochs");
  train->add_option("--batch", tr_opts.train.batch_size, "Batch size");
  train->add_option("--lr", tr_opts.train.lr, "Learning rate");
  train->add_option("--seed", tr_opts.train.seed, "Training seed");
  train->add_option("--sigma-min", tr_opts.train.schedule.sigma_min,
                    "Schedule sigma_min");
  train->add_option("--sigma-max", tr_opts.train.schedule.sigma_max,
                    "Schedule sigma_max");
  train->add_option("--eps", tr_opts.train.schedule.eps,
                    "Schedule minimum time");

  // eval
  auto* eval = app.add_subcommand("eval", "mAP tables over the test split");
  ExperimentConfig ev;
  std::vector<std::string> ev_conditions;
  eval->add_option("--dataset", ev.dataset_dir, "Dataset directory")->required();
  eval->add_option("--model", ev.model_path, "Model file for all categories");
  eval->add_option("--model-dir", ev.model_dir,
                   "Directory with per-category <category>.teep files");
  eval->add_option("--out", ev.out_csv, "Output CSV path");
  eval->add_option("--k", ev.k, "Pose candidates per sample");
  eval->add_option("--ode-steps", ev.ode_steps, "Euler steps");
  eval->add_option("--seed", ev.seed, "Evaluation seed");
  eval->add_option("--condition", ev_conditions,
                   "Conditions to report (ee, ee_w_sp, ours)");

  // infer
  auto* infer = app.add_subcommand("infer", "Estimate one pose from a cloud");
  std::string in_model, in_cloud, in_out;
  InferOptions in_opts;
  infer->add_option("--model", in_model, "Model file")->required();
  infer->add_option("--cloud", in_cloud, "Input XYZ cloud")->required();
  infer->add_option("--k", in_opts.k, "Pose candidates");
  infer->add_option("--ode-steps", in_opts.ode_steps, "Euler steps");
  infer->add_option("--seed", in_opts.seed, "Sampling seed");
  infer->add_option("--refine-ref", in_opts.refine_ref_path,
                    "Reference pose JSON for symmetric-axis refinement");
  infer->add_option("--out", in_out, "Write the pose JSON here instead of stdout");

  // report
  auto* report = app.add_subcommand("report", "Collate CSVs into a report");
  std::string rp_dir = ".", rp_out = "report.md";
  report->add_option("--dir", rp_dir, "Directory holding run_log.json");
  report->add_option("--out", rp_out, "Output markdown path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitConfig;
  }

  if (gen->parsed()) {
    const DatasetManifest manifest =
        run_gen(gen_config, gen_out, gen_seed, gen_samples);
    std::printf("wrote %zu samples to %s (config %s)\n",
                manifest.samples.size(), gen_out.c_str(),
                manifest.config_hash.c_str());
  } else if (analyze->parsed()) {
    const auto rows = run_analyze(an_dataset, an_out, an_opts);
    std::printf("wrote %zu consistency rows to %s\n", rows.size() * 3,
                an_out.c_str());
  } else if (train->parsed()) {
    const std::vector<double> history = run_train(tr_dataset, tr_out, tr_opts);
    for (std::size_t e = 0; e < history.size(); ++e) {
      std::printf("epoch %zu loss %.6f\n", e, history[e]);
    }
    std::printf("saved model to %s\n", tr_out.c_str());
  } else if (eval->parsed()) {
    if (!ev_conditions.empty()) ev.conditions = ev_conditions;
    const EvalReport rep = run_eval(ev);
    std::fputs(rep.to_csv().c_str(), stdout);
  } else if (infer->parsed()) {
    const nlohmann::json pose = run_infer(in_model, in_cloud, in_opts);
    if (in_out.empty()) {
      std::printf("%s\n", pose.dump().c_str());
    } else {
      std::FILE* f = std::fopen(in_out.c_str(), "wb");
      if (f == nullptr) throw IoError("cannot open " + in_out);
      std::fprintf(f, "%s\n", pose.dump().c_str());
      std::fclose(f);
    }
  } else if (report->parsed()) {
    run_report(rp_dir, rp_out);
    std::printf("wrote report to %s\n", rp_out.c_str());
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
}
