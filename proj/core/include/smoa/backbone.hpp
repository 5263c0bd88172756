#pragma once

#include <span>
#include <vector>

#include "smoa/config.hpp"
#include "smoa/params.hpp"
#include "smoa/peft.hpp"
#include "smoa/tensor.hpp"

namespace smoa {

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct EncoderBlock {
  Tensor norm1_gamma, norm1_beta;
  AttentionWeights attn;
  Tensor norm2_gamma, norm2_beta;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;  // d -> 4d -> d, gelu
};

// Minimal pre-norm vision transformer encoder. All weights truncated
// normal (std 0.02) except norms; frozen in every mode but full
// fine-tuning. The classifier head is always trainable and the ledger
// reports it separately.
struct Backbone {
  Tensor patch_weight;  // [d x patch_dim]
  Tensor patch_bias;    // [d]
  Tensor cls_token;     // [d]
  Tensor pos_embed;     // [(L+1) x d]
  std::vector<EncoderBlock> blocks;
  Tensor head_weight;  // [n_classes x d]
  Tensor head_bias;    // [n_classes]
};

struct Model {
  ModelConfig config;
  Backbone backbone;
  PeftStack stack;
  std::vector<ParamInfo> params;
};

// Builds backbone + PEFT stack per config, registering every parameter.
// randomize_zero_init perturbs zero/one initializations (gradient checker).
Model build_model(const ModelConfig& cfg, bool randomize_zero_init = false);

// The same construction pass without allocating values: names, shapes and
// flags only. Ledgers for arbitrarily large configs come from this.
std::vector<ParamInfo> param_manifest(const ModelConfig& cfg);

struct ForwardTrace {
  std::vector<RoutingBatch> routing;  // one entry per (block, forward)
  Tensor cls_features;                // [b x d] pre-head features
};

// Rolling sequence geometry of a batched forward, row layout [b*l x d].
struct BlockState {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  bool prompt_attached = false;
};

// One encoder block: x + Attn(norm1(x)), then the FFN stage with the
// configured PEFT insertion, then prompt generation/attachment when the
// stack carries block-specific parameters. stack == nullptr runs the plain
// frozen block.
Tensor block_forward(const ModelConfig& cfg, const Backbone& bb, const PeftStack* stack,
                     std::size_t block_index, const Tensor& x, BlockState& state,
                     std::vector<RoutingBatch>* routing);

// Full forward: batch [b x L x patch_dim] -> logits [b x n_classes].
Tensor encode(const ModelConfig& cfg, const Backbone& bb, const PeftStack* stack,
              const Tensor& batch, ForwardTrace* trace = nullptr);
Tensor encode(const Model& model, const Tensor& batch, ForwardTrace* trace = nullptr);

// Patch projection + CLS + positional embedding, batched rows [b*(L+1) x d].
Tensor embed_batch(const ModelConfig& cfg, const Backbone& bb, const Tensor& batch);

// Appends (or replaces) one row per sample in the batched row layout.
Tensor attach_rows_per_sample(const Tensor& x, std::span<const Tensor> rows, std::size_t batch,
                              std::size_t seq_len, bool replace_last);

}  // namespace smoa
