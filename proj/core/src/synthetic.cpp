#include "smoa/synthetic.hpp"

#include <cmath>

namespace smoa {

Tensor Dataset::batch(std::span<const std::size_t> idx) const {
  std::vector<double> out;
  out.reserve(idx.size() * patches * patch_dim);
  for (std::size_t i : idx) {
    auto s = sample(i);
    out.insert(out.end(), s.begin(), s.end());
  }
  return Tensor::from({idx.size(), patches, patch_dim}, std::move(out));
}

Tensor Dataset::batch_range(std::size_t first, std::size_t count) const {
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = first + i;
  return batch(idx);
}

namespace {

Dataset make_split(const ModelConfig& model, const TaskConfig& task, std::size_t size, Rng rng,
                   const std::vector<std::vector<double>>& templates) {
  Dataset ds;
  ds.n = size;
  ds.patches = model.patches();
  ds.patch_dim = model.patch_dim;
  ds.x.resize(size * ds.patches * ds.patch_dim);
  ds.y.resize(size);
  const std::size_t dim = ds.patches * ds.patch_dim;
  for (std::size_t i = 0; i < size; ++i) {
    const int label = static_cast<int>(i % model.n_classes);
    ds.y[i] = label;
    const std::vector<double>& t = templates[label];
    double* out = ds.x.data() + i * dim;
    for (std::size_t j = 0; j < dim; ++j) out[j] = t[j] + task.noise * rng.normal();
  }
  return ds;
}

}  // namespace

TaskData make_task(const ModelConfig& model, const TaskConfig& task) {
  if (task.train_size < model.n_classes || task.val_size < model.n_classes ||
      task.test_size < model.n_classes)
    throw ConfigError("make_task: every split needs at least n_classes=" +
                      std::to_string(model.n_classes) + " samples");

  Rng root(task.seed);
  Rng template_rng = root.fork(0);

  const std::size_t grid = model.patch_grid;
  const std::size_t patches = model.patches();
  const std::size_t dim = patches * model.patch_dim;
  TaskData data;
  data.templates.assign(model.n_classes, std::vector<double>(dim));
  for (std::size_t c = 0; c < model.n_classes; ++c) {
    std::vector<double>& t = data.templates[c];
    for (double& v : t) v = 0.5 * template_rng.normal();
    // Spatial signal: a bump centered on a class-specific grid cell.
    const std::size_t cell = (c * patches) / model.n_classes;
    const double cr = static_cast<double>(cell / grid);
    const double cc = static_cast<double>(cell % grid);
    for (std::size_t p = 0; p < patches; ++p) {
      const double dr = static_cast<double>(p / grid) - cr;
      const double dc = static_cast<double>(p % grid) - cc;
      const double bump = 1.2 * std::exp(-(dr * dr + dc * dc) / 2.0);
      for (std::size_t k = 0; k < model.patch_dim; ++k) t[p * model.patch_dim + k] += bump;
    }
  }

  data.train = make_split(model, task, task.train_size, root.fork(1), data.templates);
  data.val = make_split(model, task, task.val_size, root.fork(2), data.templates);
  data.test = make_split(model, task, task.test_size, root.fork(3), data.templates);
  return data;
}

int nearest_template(const TaskData& task, std::span<const double> sample) {
  int best = 0;
  double best_d = 0.0;
  for (std::size_t c = 0; c < task.templates.size(); ++c) {
    const std::vector<double>& t = task.templates[c];
    double d = 0.0;
    for (std::size_t j = 0; j < t.size(); ++j) {
      const double diff = sample[j] - t[j];
      d += diff * diff;
    }
    if (c == 0 || d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

}  // namespace smoa
