#include "smoa/block_specific.hpp"

#include <array>

namespace smoa {

namespace {

void check_block(const BlockSpecificParams& params, std::size_t block_index) {
  if (block_index >= params.depth())
    throw ContractError("block-specific: block index " + std::to_string(block_index) +
                        " out of range for depth " + std::to_string(params.depth()));
}

}  // namespace

Tensor block_norm(const BlockSpecificParams& params, std::size_t block_index, const Tensor& x,
                  double eps) {
  check_block(params, block_index);
  return layer_norm(x, params.norm_gamma[block_index], params.norm_beta[block_index], eps);
}

Tensor generate_prompt(const BlockSpecificParams& params, std::size_t block_index,
                       const Tensor& moa_out) {
  check_block(params, block_index);
  if (moa_out.ndim() != 2 || moa_out.dim(0) == 0)
    throw ContractError("generate_prompt: empty token set " + shape_str(moa_out.shape()));
  Tensor mean = mean_rows(moa_out);  // [1 x d]
  return add(mul(mean, params.pg_scale[block_index]), params.pg_shift[block_index]);
}

Tensor attach_prompt(const Tensor& x, const Tensor& p, bool replace_last) {
  if (x.ndim() != 2 || p.ndim() != 2 || p.dim(0) != 1 || p.dim(1) != x.dim(1))
    throw ShapeError("attach_prompt: prompt " + shape_str(p.shape()) +
                     " does not fit sequence " + shape_str(x.shape()));
  if (replace_last) {
    if (x.dim(0) < 2) throw ContractError("attach_prompt: nothing to replace");
    std::array<Tensor, 2> parts{slice_rows(x, 0, x.dim(0) - 1), p};
    return concat_rows(parts);
  }
  std::array<Tensor, 2> parts{x, p};
  return concat_rows(parts);
}

}  // namespace smoa
