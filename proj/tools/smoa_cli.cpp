// Command-line front end: training, evaluation, parameter accounting,
// routing diagnostics, gradient checking and feature export.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "smoa/backbone.hpp"
#include "smoa/checkpoint.hpp"
#include "smoa/config.hpp"
#include "smoa/ledger.hpp"
#include "smoa/synthetic.hpp"
#include "smoa/train.hpp"

namespace {

using namespace smoa;

const Dataset& pick_split(const TaskData& task, const std::string& split) {
  if (split == "train") return task.train;
  if (split == "val") return task.val;
  if (split == "test") return task.test;
  throw ConfigError("unknown split '" + split + "' (expected train, val or test)");
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  RunConfig cfg = load_config(config_path);
  std::filesystem::create_directories(out_dir);
  TrainResult result = train(cfg);
  write_report(out_dir + "/report.json", result.report);
  save_checkpoint(out_dir + "/model.ckpt", result.model.params);
  const auto& last = result.report.epochs.back();
  std::printf("trained %s for %zu epochs: val acc %.4f, test acc %.4f (%.1fs)\n",
              peft_mode_name(cfg.model.peft_mode), cfg.train.epochs, last.val_acc,
              result.report.final_test_acc, result.report.wall_time_seconds);
  std::printf("wrote %s/report.json and %s/model.ckpt\n", out_dir.c_str(), out_dir.c_str());
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt, const std::string& split) {
  RunConfig cfg = load_config(config_path);
  Model model = build_model(cfg.model);
  if (!ckpt.empty()) load_checkpoint(ckpt, model.params);
  TaskData task = make_task(cfg.model, cfg.task);
  const double acc = evaluate_accuracy(model, pick_split(task, split), cfg.train.batch_size,
                                       cfg.train.eval_threads);
  std::printf("%s accuracy: %.4f\n", split.c_str(), acc);
  return 0;
}

int cmd_params(const std::string& config_path, const std::string& csv) {
  RunConfig cfg = load_config(config_path);
  ParamLedger ledger = ledger_from_config(cfg.model);
  std::fputs(ledger_table(ledger).c_str(), stdout);
  if (!csv.empty()) {
    write_ledger_csv(csv, ledger);
    std::printf("wrote %s\n", csv.c_str());
  }
  return 0;
}

int cmd_route_stats(const std::string& config_path, const std::string& ckpt,
                    const std::string& out_dir, std::size_t samples) {
  RunConfig cfg = load_config(config_path);
  if (!cfg.model.uses_moa())
    throw ConfigError("route-stats: peft_mode " + std::string(peft_mode_name(cfg.model.peft_mode)) +
                      " has no routing");
  Model model = build_model(cfg.model);
  if (!ckpt.empty()) load_checkpoint(ckpt, model.params);
  TaskData task = make_task(cfg.model, cfg.task);
  samples = std::min(samples, task.val.n);

  NoGradGuard ng;
  ForwardTrace trace;
  encode(model, task.val.batch_range(0, samples), &trace);
  std::vector<RoutingRecord> records;
  for (const RoutingBatch& b : trace.routing) {
    auto r = b.records();
    records.insert(records.end(), r.begin(), r.end());
  }
  StatsTable stats = routing_stats(records);

  std::filesystem::create_directories(out_dir);
  write_expert_load_csv(out_dir + "/expert_load.csv", stats);
  write_token_paths_csv(out_dir + "/token_paths.csv", stats);
  std::printf("routing over %zu val samples (%zu sub-token records)\n", samples, records.size());
  for (const auto& row : stats.load)
    std::printf("block %d expert %d: %.4f\n", row.block, row.expert, row.fraction);
  std::printf("wrote %s/expert_load.csv and %s/token_paths.csv\n", out_dir.c_str(),
              out_dir.c_str());
  return 0;
}

int cmd_gradcheck(const std::string& config_path, double tol) {
  RunConfig cfg = load_config(config_path);
  GradCheckReport report = gradcheck_model(cfg);
  for (const GradCheckRow& row : report.rows)
    std::printf("%-40s max rel err %.3e%s\n", row.name.c_str(), row.max_rel_err,
                row.max_rel_err < tol ? "" : "  FAIL");
  std::printf("worst: %.3e (tolerance %.1e)\n", report.worst, tol);
  if (!report.passed(tol)) {
    std::fprintf(stderr, "gradcheck failed\n");
    return 1;
  }
  return 0;
}

int cmd_export_features(const std::string& config_path, const std::string& ckpt,
                        const std::string& split, const std::string& out) {
  RunConfig cfg = load_config(config_path);
  Model model = build_model(cfg.model);
  if (!ckpt.empty()) load_checkpoint(ckpt, model.params);
  TaskData task = make_task(cfg.model, cfg.task);
  const Dataset& data = pick_split(task, split);
  export_features_csv(out, model, data, cfg.train.batch_size);
  std::printf("wrote %zu feature rows to %s\n", data.n, out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parameter-efficient fine-tuning lab: shared mixture-of-adapters on a toy "
               "transformer encoder"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".", ckpt, split = "val", csv, out_file = "features.csv";
  std::size_t samples = 8;
  double tol = 1e-4;

  CLI::App* train_cmd = app.add_subcommand("train", "Train a model; writes report.json + model.ckpt");
  train_cmd->add_option("--config", config_path, "Config file")->required();
  train_cmd->add_option("--out-dir", out_dir, "Output directory");

  CLI::App* eval_cmd = app.add_subcommand("eval", "Accuracy on a split");
  eval_cmd->add_option("--config", config_path, "Config file")->required();
  eval_cmd->add_option("--checkpoint", ckpt, "Checkpoint file");
  eval_cmd->add_option("--split", split, "train|val|test");

  CLI::App* params_cmd = app.add_subcommand("params", "Parameter ledger");
  params_cmd->add_option("--config", config_path, "Config file")->required();
  params_cmd->add_option("--csv", csv, "Also write ledger.csv here");

  CLI::App* stats_cmd = app.add_subcommand("route-stats", "Expert load + token paths CSVs");
  stats_cmd->add_option("--config", config_path, "Config file")->required();
  stats_cmd->add_option("--checkpoint", ckpt, "Checkpoint file");
  stats_cmd->add_option("--out-dir", out_dir, "Output directory");
  stats_cmd->add_option("--samples", samples, "Validation samples to route");

  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient audit");
  grad_cmd->add_option("--config", config_path, "Config file")->required();
  grad_cmd->add_option("--tol", tol, "Relative error tolerance");

  CLI::App* feat_cmd = app.add_subcommand("export-features", "CLS features per sample as CSV");
  feat_cmd->add_option("--config", config_path, "Config file")->required();
  feat_cmd->add_option("--checkpoint", ckpt, "Checkpoint file");
  feat_cmd->add_option("--split", split, "train|val|test");
  feat_cmd->add_option("--out", out_file, "Output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(config_path, out_dir);
    if (eval_cmd->parsed()) return cmd_eval(config_path, ckpt, split);
    if (params_cmd->parsed()) return cmd_params(config_path, csv);
    if (stats_cmd->parsed()) return cmd_route_stats(config_path, ckpt, out_dir, samples);
    if (grad_cmd->parsed()) return cmd_gradcheck(config_path, tol);
    if (feat_cmd->parsed()) return cmd_export_features(config_path, ckpt, split, out_file);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
