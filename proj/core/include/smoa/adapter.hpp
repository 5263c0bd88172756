#pragma once

#include <span>
#include <vector>

#include "smoa/config.hpp"
#include "smoa/tensor.hpp"

namespace smoa {

// Bottleneck adapter: down-projection, nonlinearity, up-projection.
// w_up starts at zero so the module is an exact identity contribution at
// step 0 regardless of where it is inserted.
struct AdapterWeights {
  Tensor w_down;  // [r x d]
  Tensor b_down;  // [r]
  Tensor w_up;    // [d x r]
  Tensor b_up;    // [d]

  std::size_t rank() const { return w_down.dim(0); }
  std::size_t width() const { return w_down.dim(1); }
};

Tensor apply_sigma(const Tensor& x, Sigma sigma);

// w_up sigma(w_down x + b_down) + b_up, no residual. Rows of x are tokens.
Tensor adapter_core(const AdapterWeights& a, const Tensor& x, Sigma sigma = Sigma::Gelu);

// Serial form: adapter_core plus the input (residual included).
Tensor adapter_forward(const AdapterWeights& a, const Tensor& x, Sigma sigma = Sigma::Gelu);

// Parallel form: the adapter branch taps the block input before the
// pre-FFN norm and its scaled output joins the FFN output; the block-level
// residual is applied by the caller, not here.
Tensor parallel_adapter_forward(const AdapterWeights& a, const Tensor& x_pre_norm,
                                const Tensor& ffn_out, double s, Sigma sigma = Sigma::Gelu);

// Softmax over per-expert dot products h . e_i; h is a single token [d],
// embeddings are [N x d].
Tensor moe_gate(const Tensor& h, const Tensor& embeddings);

// Soft mixture layer: h + sum_i gate_i * expert_i(h), the expert applied
// without its inner residual so the residual appears exactly once.
Tensor moe_layer_forward(const Tensor& h, std::span<const AdapterWeights> experts,
                         const Tensor& embeddings, Sigma sigma = Sigma::Gelu);

}  // namespace smoa
