#pragma once

#include <cstdint>
#include <string>

#include "smoa/tensor.hpp"

namespace smoa {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class PeftMode {
  Full,
  LinearProbe,
  AdapterSerial,
  AdapterParallel,
  MoaPerBlock,
  Smoa,
  SmoaBlockSpecific,
};

enum class Insertion { SerialAfterFfn, ParallelToFfn };
enum class Sigma { Gelu, Relu };
enum class Schedule { Cosine, Constant };

const char* peft_mode_name(PeftMode m);
const char* insertion_name(Insertion i);

// Architecture and PEFT hyperparameters ([model] section).
struct ModelConfig {
  std::size_t d_model = 48;
  std::size_t depth = 4;
  std::size_t attn_heads = 4;
  std::size_t patch_grid = 4;  // patches per side; sequence holds grid^2 patches + CLS
  std::size_t patch_dim = 12;
  std::size_t n_classes = 4;
  PeftMode peft_mode = PeftMode::SmoaBlockSpecific;
  std::size_t rank = 8;
  std::size_t n_experts = 4;
  std::size_t moa_heads = 3;
  std::size_t d_e = 0;  // 0 = follow rank
  double alpha = 0.01;
  Insertion insertion = Insertion::SerialAfterFfn;
  double parallel_scale = 0.1;
  std::uint64_t seed = 42;
  Sigma sigma = Sigma::Gelu;
  bool detach_embedding_norm = false;
  bool accumulate_prompts = false;
  bool balance_soft_count = false;
  bool top1_routing = false;

  std::size_t patches() const { return patch_grid * patch_grid; }
  std::size_t seq_len() const { return patches() + 1; }  // + CLS
  std::size_t sub_width() const { return d_model / moa_heads; }
  std::size_t ffn_dim() const { return 4 * d_model; }
  bool uses_moa() const {
    return peft_mode == PeftMode::MoaPerBlock || peft_mode == PeftMode::Smoa ||
           peft_mode == PeftMode::SmoaBlockSpecific;
  }
  bool has_block_specific() const { return peft_mode == PeftMode::SmoaBlockSpecific; }
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.01;
  Schedule schedule = Schedule::Cosine;
  std::size_t eval_threads = 1;
};

// Synthetic classification task ([task] section). Sample shape and class
// count follow the model config.
struct TaskConfig {
  std::uint64_t seed = 1234;
  std::size_t train_size = 800;
  std::size_t val_size = 200;
  std::size_t test_size = 200;
  double noise = 0.4;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  TaskConfig task;
};

// Parses flat key=value text with [model]/[train]/[task] sections, applies
// defaults, and validates. Unknown keys, type errors and invariant
// violations throw ConfigError naming the key and constraint.
RunConfig parse_config(const std::string& text);

// parse_config on file contents; the SMOA_SEED environment variable, when
// set, overrides the model seed.
RunConfig load_config(const std::string& path);

void validate_config(RunConfig& cfg);

// Stable canonical serialization (fixed key order) and the 64-bit FNV-1a
// hash over it; the hash binds every output artifact to its config.
std::string canonical_config(const RunConfig& cfg);
std::uint64_t config_hash(const RunConfig& cfg);
std::string config_hash_hex(const RunConfig& cfg);

}  // namespace smoa
