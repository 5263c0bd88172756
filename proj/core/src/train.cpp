#include "smoa/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <thread>

#include <json.hpp>

namespace smoa {

AdamW::AdamW(std::vector<ParamInfo>& registry, double lr, double weight_decay)
    : lr_(lr), weight_decay_(weight_decay) {
  for (ParamInfo& p : registry) {
    if (!p.trainable) continue;
    Slot slot;
    slot.param = &p;
    slot.m.assign(p.tensor.size(), 0.0);
    slot.v.assign(p.tensor.size(), 0.0);
    params_.push_back(std::move(slot));
  }
}

void AdamW::zero_grad() {
  for (Slot& s : params_) s.param->tensor.zero_grad();
}

void AdamW::step(double lr_scale) {
  ++t_;
  const double lr = lr_ * lr_scale;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (Slot& s : params_) {
    Tensor& tensor = s.param->tensor;
    auto w = tensor.mutable_values();
    const bool has_grad = tensor.has_grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = has_grad ? tensor.grad()[i] : 0.0;
      s.m[i] = kBeta1 * s.m[i] + (1.0 - kBeta1) * g;
      s.v[i] = kBeta2 * s.v[i] + (1.0 - kBeta2) * g * g;
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      double update = mhat / (std::sqrt(vhat) + kEps);
      if (s.param->decay) update += weight_decay_ * w[i];
      w[i] -= lr * update;
    }
  }
}

LossBundle compute_loss(const Model& model, const Tensor& batch, const std::vector<int>& labels,
                        ForwardTrace* trace) {
  ForwardTrace local;
  ForwardTrace* t = trace != nullptr ? trace : &local;
  LossBundle out;
  out.logits = encode(model, batch, t);
  out.task = cross_entropy_with_logits(out.logits, labels);
  if (!t->routing.empty() && model.config.alpha != 0.0) {
    Tensor bal = balance_loss(t->routing, model.config.n_experts, model.config.balance_soft_count);
    out.balance = bal.value();
    out.total = add(out.task, scale(bal, model.config.alpha));
  } else if (!t->routing.empty()) {
    // alpha = 0: still report the balance value, but keep it out of the
    // objective so total == task exactly.
    NoGradGuard ng;
    out.balance =
        balance_loss(t->routing, model.config.n_experts, model.config.balance_soft_count).value();
    out.total = out.task;
  } else {
    out.total = out.task;
  }
  return out;
}

namespace {

double lr_scale_at(Schedule schedule, std::size_t step, std::size_t total_steps) {
  if (schedule == Schedule::Constant || total_steps <= 1) return 1.0;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::size_t count_correct(const Model& model, const Dataset& data, std::size_t first,
                          std::size_t count, std::size_t batch_size) {
  NoGradGuard ng;
  std::size_t correct = 0;
  for (std::size_t off = 0; off < count; off += batch_size) {
    const std::size_t b = std::min(batch_size, count - off);
    Tensor logits = encode(model, data.batch_range(first + off, b));
    auto lv = logits.values();
    const std::size_t n_classes = logits.dim(1);
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t pred = argmax(lv.subspan(i * n_classes, n_classes));
      if (static_cast<int>(pred) == data.y[first + off + i]) ++correct;
    }
  }
  return correct;
}

}  // namespace

double evaluate_accuracy(const Model& model, const Dataset& data, std::size_t batch_size,
                         std::size_t threads) {
  if (data.n == 0) return 0.0;
  threads = std::max<std::size_t>(1, std::min(threads, data.n));
  if (threads == 1)
    return static_cast<double>(count_correct(model, data, 0, data.n, batch_size)) /
           static_cast<double>(data.n);

  std::vector<std::size_t> partial(threads, 0);
  std::vector<std::thread> workers;
  const std::size_t chunk = (data.n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t first = t * chunk;
    const std::size_t count = first >= data.n ? 0 : std::min(chunk, data.n - first);
    workers.emplace_back([&, t, first, count] {
      partial[t] = count == 0 ? 0 : count_correct(model, data, first, count, batch_size);
    });
  }
  for (auto& w : workers) w.join();
  std::size_t correct = 0;
  for (std::size_t c : partial) correct += c;
  return static_cast<double>(correct) / static_cast<double>(data.n);
}

TrainReport train_model(const RunConfig& cfg, Model& model, const TaskData& task) {
  const auto t0 = std::chrono::steady_clock::now();

  AdamW opt(model.params, cfg.train.lr, cfg.train.weight_decay);
  Rng shuffle_rng = Rng(cfg.model.seed).fork(4);

  TrainReport report;
  {
    RunConfig resolved = cfg;
    resolved.model = model.config;
    report.config_hash = config_hash_hex(resolved);
  }
  report.seed = cfg.model.seed;
  {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "adamw(lr=%g, beta1=%g, beta2=%g, eps=%g, wd=%g), %s schedule",
                  cfg.train.lr, AdamW::kBeta1, AdamW::kBeta2, AdamW::kEps, cfg.train.weight_decay,
                  cfg.train.schedule == Schedule::Cosine ? "cosine" : "constant");
    report.optimizer = buf;
  }

  const Dataset& train_set = task.train;
  std::vector<std::size_t> order(train_set.n);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t steps_per_epoch =
      (train_set.n + cfg.train.batch_size - 1) / cfg.train.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.train.epochs;
  std::size_t step_index = 0;

  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    // Fisher-Yates with the dedicated shuffle stream.
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.index(i)]);

    double epoch_task = 0.0, epoch_balance = 0.0, epoch_total = 0.0;
    std::size_t train_correct = 0;
    for (std::size_t off = 0; off < train_set.n; off += cfg.train.batch_size) {
      const std::size_t b = std::min(cfg.train.batch_size, train_set.n - off);
      std::vector<std::size_t> idx(order.begin() + off, order.begin() + off + b);
      Tensor batch = train_set.batch(idx);
      std::vector<int> labels(b);
      for (std::size_t i = 0; i < b; ++i) labels[i] = train_set.y[idx[i]];

      LossBundle loss = compute_loss(model, batch, labels);
      const double total_v = loss.total.value();
      if (!std::isfinite(total_v))
        throw NumericError("train: non-finite loss at step " + std::to_string(step_index));

      opt.zero_grad();
      backward(loss.total);
      opt.step(lr_scale_at(cfg.train.schedule, step_index, total_steps));

      const double task_v = loss.task.value();
      report.steps.push_back({task_v, loss.balance, total_v});
      epoch_task += task_v;
      epoch_balance += loss.balance;
      epoch_total += total_v;
      {
        // Training accuracy from the forward-pass logits.
        auto lv = loss.logits.values();
        for (std::size_t i = 0; i < b; ++i)
          if (static_cast<int>(argmax(lv.subspan(i * cfg.model.n_classes, cfg.model.n_classes))) ==
              labels[i])
            ++train_correct;
      }
      ++step_index;
    }

    const double inv_steps = 1.0 / static_cast<double>(steps_per_epoch);
    TrainReport::EpochRow row;
    row.task = epoch_task * inv_steps;
    row.balance = epoch_balance * inv_steps;
    row.total = epoch_total * inv_steps;
    row.train_acc = static_cast<double>(train_correct) / static_cast<double>(train_set.n);
    row.val_acc = evaluate_accuracy(model, task.val, cfg.train.batch_size, cfg.train.eval_threads);
    report.epochs.push_back(row);
  }

  report.final_test_acc =
      evaluate_accuracy(model, task.test, cfg.train.batch_size, cfg.train.eval_threads);
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

TrainResult train(const RunConfig& cfg) {
  TrainResult result;
  result.model = build_model(cfg.model);
  result.task = make_task(cfg.model, cfg.task);
  result.report = train_model(cfg, result.model, result.task);
  return result;
}

namespace {

std::string fixed17(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string report_to_json(const TrainReport& report) {
  using json = nlohmann::ordered_json;
  json metrics;
  metrics["steps"] = json::array();
  for (const auto& s : report.steps)
    metrics["steps"].push_back({{"task", fixed17(s.task)},
                                {"balance", fixed17(s.balance)},
                                {"total", fixed17(s.total)}});
  metrics["epochs"] = json::array();
  for (const auto& e : report.epochs)
    metrics["epochs"].push_back({{"task", fixed17(e.task)},
                                 {"balance", fixed17(e.balance)},
                                 {"total", fixed17(e.total)},
                                 {"train_acc", fixed17(e.train_acc)},
                                 {"val_acc", fixed17(e.val_acc)}});
  metrics["final_test_acc"] = fixed17(report.final_test_acc);

  json j;
  j["config_hash"] = report.config_hash;
  j["seed"] = report.seed;
  j["optimizer"] = report.optimizer;
  j["metrics"] = metrics;
  j["wall_time_seconds"] = report.wall_time_seconds;
  return j.dump(2);
}

void write_report(const std::string& path, const TrainReport& report) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot open " + path + " for writing");
  out << report_to_json(report) << "\n";
}

void export_features_csv(const std::string& path, const Model& model, const Dataset& data,
                         std::size_t batch_size) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot open " + path + " for writing");
  out << "sample,label";
  for (std::size_t k = 0; k < model.config.d_model; ++k) out << ",f" << k;
  out << "\n";
  NoGradGuard ng;
  char buf[64];
  for (std::size_t off = 0; off < data.n; off += batch_size) {
    const std::size_t b = std::min(batch_size, data.n - off);
    ForwardTrace trace;
    encode(model, data.batch_range(off, b), &trace);
    auto fv = trace.cls_features.values();
    for (std::size_t i = 0; i < b; ++i) {
      out << (off + i) << "," << data.y[off + i];
      for (std::size_t k = 0; k < model.config.d_model; ++k) {
        std::snprintf(buf, sizeof(buf), "%.17g", fv[i * model.config.d_model + k]);
        out << "," << buf;
      }
      out << "\n";
    }
  }
}

double rel_err(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

GradCheckReport gradcheck_model(const RunConfig& cfg, std::size_t batch_samples, double step) {
  Model model = build_model(cfg.model, /*randomize_zero_init=*/true);
  TaskData task = make_task(cfg.model, cfg.task);
  const std::size_t b = std::min(batch_samples, task.train.n);
  Tensor batch = task.train.batch_range(0, b);
  std::vector<int> labels(task.train.y.begin(), task.train.y.begin() + b);

  auto loss_value = [&]() {
    NoGradGuard ng;
    return compute_loss(model, batch, labels).total.value();
  };

  for (ParamInfo& p : model.params) p.tensor.zero_grad();
  LossBundle loss = compute_loss(model, batch, labels);
  backward(loss.total);

  GradCheckReport report;
  for (ParamInfo& p : model.params) {
    if (!p.trainable) continue;
    GradCheckRow row;
    row.name = p.name;
    auto w = p.tensor.mutable_values();
    const bool has_grad = p.tensor.has_grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w[i];
      w[i] = keep + step;
      const double fp = loss_value();
      w[i] = keep - step;
      const double fm = loss_value();
      w[i] = keep;
      const double numeric = (fp - fm) / (2.0 * step);
      const double analytic = has_grad ? p.tensor.grad()[i] : 0.0;
      row.max_rel_err = std::max(row.max_rel_err, rel_err(analytic, numeric));
    }
    report.worst = std::max(report.worst, row.max_rel_err);
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace smoa
