#pragma once

#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "smoa/adapter.hpp"
#include "smoa/config.hpp"
#include "smoa/tensor.hpp"

namespace smoa {

// The shared adapter-expert repository: N bottleneck experts operating on
// sub-tokens of width d/h, low-dimensional expert embeddings, and the
// bias-free router projection into the embedding space. In shared modes a
// single instance is aliased by every transformer block.
struct ExpertPool {
  std::vector<AdapterWeights> experts;
  Tensor embeddings;  // [N x d_e]
  Tensor router;      // [d_e x (d/h)]
  std::size_t n_experts = 0;
  std::size_t heads = 0;
  std::size_t d_e = 0;
  std::size_t sub_width = 0;  // d / heads
  Sigma sigma = Sigma::Gelu;
  bool detach_embedding_norm = false;
  bool top1_routing = false;
};

// Per-sub-token routing outcome; the exportable flat record.
struct RoutingRecord {
  int block_index = 0;
  long sub_token_index = 0;
  std::vector<double> gate_vector;  // N non-negative entries summing to 1
  int argmax_expert = 0;            // ties resolve to the lowest index
};

// One layer application: the differentiable gate matrix for all sub-tokens
// that passed through a block, plus their hard assignments. token_ids
// default to the row index; the encoder rewrites them to ids that are
// stable across blocks before records are exported.
struct RoutingBatch {
  int block_index = 0;
  Tensor gates;  // [m x N]
  std::vector<int> argmax;
  std::vector<long> token_ids;

  std::vector<RoutingRecord> records() const;
};

// Multi-head token split: token i becomes h contiguous sub-tokens of
// width d/h, laid out sub-tokens of token 0 first, in head order.
Tensor split_tokens(const Tensor& x, std::size_t heads);
// Exact inverse of split_tokens.
Tensor merge_tokens(const Tensor& xhat, std::size_t heads);

// s = (W xhat) . e_i / ||e_i||; the normalization has no trainable
// parameters but gradients flow through it unless detach_embedding_norm.
Tensor route_scores(const ExpertPool& pool, const Tensor& xhat);

// Row-wise softmax over the expert axis.
Tensor gate(const Tensor& scores);

// Split -> route -> gate -> soft mixture over all experts -> merge.
// Returns the mixture contribution only; the residual is applied at the
// insertion point. The RoutingBatch carries one row per sub-token.
std::pair<Tensor, RoutingBatch> smoa_forward(const ExpertPool& pool, const Tensor& x,
                                             int block_index);

// Load-balance regularizer: (N/m) sum_p sum_rows t_p * g_p(row), computed
// per layer application and averaged across applications. t_p is the
// argmax frequency of expert p (a constant for gradients); with
// soft_count, t_p is the detached mean gate instead.
Tensor balance_loss(std::span<const RoutingBatch> batches, std::size_t n_experts,
                    bool soft_count = false);

struct StatsTable {
  struct LoadRow {
    int block;
    int expert;
    double fraction;
  };
  struct PathRow {
    long token_id;
    int block;
    int expert;
    double gate;
  };
  std::vector<LoadRow> load;    // per block, fraction of sub-tokens per expert
  std::vector<PathRow> paths;   // per token: gate vector per block on its path
};

StatsTable routing_stats(std::span<const RoutingRecord> records);

void write_expert_load_csv(const std::string& path, const StatsTable& stats);
void write_token_paths_csv(const std::string& path, const StatsTable& stats);

}  // namespace smoa
