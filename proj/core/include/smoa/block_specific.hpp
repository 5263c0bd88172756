#pragma once

#include <vector>

#include "smoa/tensor.hpp"

namespace smoa {

// Per-block unshared components: a trainable pre-FFN norm and the prompt
// generator (scale/shift of the mean token representation). Deliberately
// one independent instance per block, the opposite of the expert pool.
struct BlockSpecificParams {
  std::vector<Tensor> norm_gamma;  // per block, [d], init 1
  std::vector<Tensor> norm_beta;   // per block, [d], init 0
  std::vector<Tensor> pg_scale;    // per block, [d], init 1
  std::vector<Tensor> pg_shift;    // per block, [d], init 0

  std::size_t depth() const { return norm_gamma.size(); }
};

Tensor block_norm(const BlockSpecificParams& params, std::size_t block_index, const Tensor& x,
                  double eps = 1e-6);

// p = pg_scale (.) mean over rows of moa_out (+) pg_shift. Callers pass
// only the rows that should enter the mean (previously attached prompts
// are excluded upstream).
Tensor generate_prompt(const BlockSpecificParams& params, std::size_t block_index,
                       const Tensor& moa_out);

// Appends the prompt at the end of the sequence; with replace_last the row
// left by the previous block is dropped first, keeping the length fixed.
// Index 0 (CLS) is never displaced.
Tensor attach_prompt(const Tensor& x, const Tensor& p, bool replace_last);

}  // namespace smoa
