#pragma once

#include <span>
#include <vector>

#include "smoa/config.hpp"
#include "smoa/tensor.hpp"

namespace smoa {

// One split of a synthetic classification task; samples are L x patch_dim
// patch sequences stored flat.
struct Dataset {
  std::size_t n = 0;
  std::size_t patches = 0;
  std::size_t patch_dim = 0;
  std::vector<double> x;  // n * patches * patch_dim
  std::vector<int> y;

  std::span<const double> sample(std::size_t i) const {
    return std::span<const double>(x).subspan(i * patches * patch_dim, patches * patch_dim);
  }
  // Stacks the given samples into a [b x L x patch_dim] tensor (no grad).
  Tensor batch(std::span<const std::size_t> idx) const;
  Tensor batch_range(std::size_t first, std::size_t count) const;
};

// Class-conditioned patterns: per-class mean template plus noise. Each
// template combines a class random pattern with a spatial bump at a
// class-specific grid position, so both content and patch position carry
// label signal. Labels are balanced; splits come from disjoint generator
// substreams of the task seed.
struct TaskData {
  Dataset train, val, test;
  std::vector<std::vector<double>> templates;  // n_classes x (patches*patch_dim)
};

TaskData make_task(const ModelConfig& model, const TaskConfig& task);

// Classifies by smallest L2 distance to a class template. With zero noise
// this recovers every label; used as the task sanity oracle.
int nearest_template(const TaskData& task, std::span<const double> sample);

}  // namespace smoa
