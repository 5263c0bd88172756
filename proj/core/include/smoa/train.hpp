#pragma once

#include <string>
#include <vector>

#include "smoa/backbone.hpp"
#include "smoa/config.hpp"
#include "smoa/synthetic.hpp"

namespace smoa {

// Adam with decoupled weight decay over the trainable slice of a model's
// registry. Decay skips parameters flagged no-decay (norm affines, prompt
// generator scale/shift).
class AdamW {
 public:
  AdamW(std::vector<ParamInfo>& registry, double lr, double weight_decay);

  void zero_grad();
  void step(double lr_scale = 1.0);

  std::size_t num_trainable() const { return params_.size(); }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  struct Slot {
    ParamInfo* param;
    std::vector<double> m, v;
  };
  std::vector<Slot> params_;
  double lr_;
  double weight_decay_;
  std::size_t t_ = 0;
};

struct LossBundle {
  Tensor total;
  Tensor task;
  Tensor logits;
  double balance = 0.0;  // 0 when the mode has no routing
};

// Cross-entropy plus alpha times the load-balance loss over all block
// applications of the forward.
LossBundle compute_loss(const Model& model, const Tensor& batch, const std::vector<int>& labels,
                        ForwardTrace* trace = nullptr);

struct TrainReport {
  struct StepRow {
    double task, balance, total;
  };
  struct EpochRow {
    double task, balance, total, train_acc, val_acc;
  };
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string optimizer;  // resolved optimizer/schedule description
  std::vector<StepRow> steps;
  std::vector<EpochRow> epochs;
  double final_test_acc = 0.0;
  double wall_time_seconds = 0.0;  // not part of the deterministic metrics
};

// JSON with a `metrics` subobject that is byte-identical across reruns of
// the same config and seed (wall time lives outside it).
std::string report_to_json(const TrainReport& report);
void write_report(const std::string& path, const TrainReport& report);

struct TrainResult {
  TrainReport report;
  Model model;
  TaskData task;
};

// Full training run: build model + task, minimize the objective over the
// trainable parameters only, deterministic for a given config. Throws
// NumericError naming the step if the loss turns non-finite.
TrainResult train(const RunConfig& cfg);

// Shared loop body for callers that already hold a model/task.
TrainReport train_model(const RunConfig& cfg, Model& model, const TaskData& task);

// Top-1 accuracy over a split; read-only on the model, shards samples
// across threads when eval_threads > 1 (integer-sum reduction, so the
// result is thread-count independent).
double evaluate_accuracy(const Model& model, const Dataset& data, std::size_t batch_size,
                         std::size_t threads = 1);

// CLS features per sample: "sample,label,f0..f{d-1}".
void export_features_csv(const std::string& path, const Model& model, const Dataset& data,
                         std::size_t batch_size);

struct GradCheckRow {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckRow> rows;
  double worst = 0.0;
  bool passed(double tol = 1e-4) const { return worst < tol; }
};

// Central finite differences of the full objective against the analytic
// gradient, every element of every trainable parameter. The model is
// built with randomized init so no gradient path is vacuously zero.
GradCheckReport gradcheck_model(const RunConfig& cfg, std::size_t batch_samples = 3,
                                double step = 1e-5);

// Relative error with an absolute floor for near-zero pairs.
double rel_err(double a, double b, double floor = 1e-6);

}  // namespace smoa
