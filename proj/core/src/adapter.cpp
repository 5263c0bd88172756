#include "smoa/adapter.hpp"

namespace smoa {

Tensor apply_sigma(const Tensor& x, Sigma sigma) {
  return sigma == Sigma::Gelu ? gelu(x) : relu(x);
}

Tensor adapter_core(const AdapterWeights& a, const Tensor& x, Sigma sigma) {
  if (x.shape().back() != a.width())
    throw ShapeError("adapter: input " + shape_str(x.shape()) + " does not match w_down " +
                     shape_str(a.w_down.shape()));
  Tensor mid = apply_sigma(linear(x, a.w_down, a.b_down), sigma);
  return linear(mid, a.w_up, a.b_up);
}

Tensor adapter_forward(const AdapterWeights& a, const Tensor& x, Sigma sigma) {
  return add(adapter_core(a, x, sigma), x);
}

Tensor parallel_adapter_forward(const AdapterWeights& a, const Tensor& x_pre_norm,
                                const Tensor& ffn_out, double s, Sigma sigma) {
  if (x_pre_norm.shape() != ffn_out.shape())
    throw ShapeError("parallel_adapter: branch input " + shape_str(x_pre_norm.shape()) +
                     " does not match ffn output " + shape_str(ffn_out.shape()));
  return add(ffn_out, scale(adapter_core(a, x_pre_norm, sigma), s));
}

Tensor moe_gate(const Tensor& h, const Tensor& embeddings) {
  if (h.ndim() != 1)
    throw ShapeError("moe_gate: expected 1-D token, got " + shape_str(h.shape()));
  if (embeddings.ndim() != 2 || embeddings.dim(1) != h.size())
    throw ShapeError("moe_gate: embeddings " + shape_str(embeddings.shape()) +
                     " do not match token " + shape_str(h.shape()));
  Tensor scores = matmul_nt(reshape(h, {1, h.size()}), embeddings);  // [1 x N]
  return reshape(softmax(scores, 1), {embeddings.dim(0)});
}

Tensor moe_layer_forward(const Tensor& h, std::span<const AdapterWeights> experts,
                         const Tensor& embeddings, Sigma sigma) {
  if (experts.empty()) throw ContractError("moe_layer_forward: empty expert list");
  Tensor gates = reshape(moe_gate(h, embeddings), {1, experts.size()});
  Tensor row = reshape(h, {1, h.size()});
  Tensor mix;
  for (std::size_t i = 0; i < experts.size(); ++i) {
    Tensor weighted = mul(adapter_core(experts[i], row, sigma), slice_cols(gates, i, i + 1));
    mix = i == 0 ? weighted : add(mix, weighted);
  }
  return reshape(add(row, mix), h.shape());
}

}  // namespace smoa
