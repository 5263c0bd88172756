#include "smoa/backbone.hpp"

#include <array>
#include <cmath>
#include <string>

namespace smoa {

namespace {

using Init = ParamBuilder::Init;

AdapterWeights make_adapter(ParamBuilder& pb, const std::string& prefix, std::size_t width,
                            std::size_t rank, Bucket bucket, bool trainable) {
  AdapterWeights a;
  a.w_down = pb.add(prefix + ".w_down", {rank, width}, Init::TruncNormal002, bucket, trainable, true);
  a.b_down = pb.add(prefix + ".b_down", {rank}, Init::Zeros, bucket, trainable, true);
  a.w_up = pb.add(prefix + ".w_up", {width, rank}, Init::Zeros, bucket, trainable, true);
  a.b_up = pb.add(prefix + ".b_up", {width}, Init::Zeros, bucket, trainable, true);
  return a;
}

std::shared_ptr<ExpertPool> make_pool(ParamBuilder& pb, const std::string& prefix,
                                      const ModelConfig& cfg, bool trainable) {
  auto pool = std::make_shared<ExpertPool>();
  pool->n_experts = cfg.n_experts;
  pool->heads = cfg.moa_heads;
  pool->d_e = cfg.d_e;
  pool->sub_width = cfg.sub_width();
  pool->sigma = cfg.sigma;
  pool->detach_embedding_norm = cfg.detach_embedding_norm;
  pool->top1_routing = cfg.top1_routing;
  for (std::size_t i = 0; i < cfg.n_experts; ++i)
    pool->experts.push_back(make_adapter(pb, prefix + ".experts." + std::to_string(i),
                                         cfg.sub_width(), cfg.rank, Bucket::Experts, trainable));
  pool->embeddings = pb.add(prefix + ".embeddings", {cfg.n_experts, cfg.d_e},
                            Init::TruncNormal1, Bucket::Embeddings, trainable, true);
  pool->router = pb.add(prefix + ".router", {cfg.d_e, cfg.sub_width()}, Init::TruncNormal002,
                        Bucket::Router, trainable, true);
  return pool;
}

void assemble(const ModelConfig& cfg, ParamBuilder& pb, Model& model) {
  const std::size_t d = cfg.d_model;
  const bool full = cfg.peft_mode == PeftMode::Full;

  Backbone& bb = model.backbone;
  bb.patch_weight = pb.add("patch_embed.weight", {d, cfg.patch_dim}, Init::TruncNormal002,
                           Bucket::PatchEmbed, full, full);
  bb.patch_bias = pb.add("patch_embed.bias", {d}, Init::Zeros, Bucket::PatchEmbed, full, full);
  bb.cls_token = pb.add("cls_token", {d}, Init::TruncNormal002, Bucket::ClsPos, full, full);
  bb.pos_embed = pb.add("pos_embed", {cfg.seq_len(), d}, Init::TruncNormal002, Bucket::ClsPos,
                        full, full);
  for (std::size_t k = 0; k < cfg.depth; ++k) {
    const std::string p = "blocks." + std::to_string(k);
    EncoderBlock blk;
    blk.norm1_gamma = pb.add(p + ".norm1.gamma", {d}, Init::Ones, Bucket::BackboneNorms, full, false);
    blk.norm1_beta = pb.add(p + ".norm1.beta", {d}, Init::Zeros, Bucket::BackboneNorms, full, false);
    blk.attn.wq = pb.add(p + ".attn.wq", {d, d}, Init::TruncNormal002, Bucket::Attention, full, full);
    blk.attn.bq = pb.add(p + ".attn.bq", {d}, Init::Zeros, Bucket::Attention, full, full);
    blk.attn.wk = pb.add(p + ".attn.wk", {d, d}, Init::TruncNormal002, Bucket::Attention, full, full);
    blk.attn.bk = pb.add(p + ".attn.bk", {d}, Init::Zeros, Bucket::Attention, full, full);
    blk.attn.wv = pb.add(p + ".attn.wv", {d, d}, Init::TruncNormal002, Bucket::Attention, full, full);
    blk.attn.bv = pb.add(p + ".attn.bv", {d}, Init::Zeros, Bucket::Attention, full, full);
    blk.attn.wo = pb.add(p + ".attn.wo", {d, d}, Init::TruncNormal002, Bucket::Attention, full, full);
    blk.attn.bo = pb.add(p + ".attn.bo", {d}, Init::Zeros, Bucket::Attention, full, full);
    blk.norm2_gamma = pb.add(p + ".norm2.gamma", {d}, Init::Ones, Bucket::BackboneNorms, full, false);
    blk.norm2_beta = pb.add(p + ".norm2.beta", {d}, Init::Zeros, Bucket::BackboneNorms, full, false);
    blk.ffn_w1 = pb.add(p + ".ffn.w1", {cfg.ffn_dim(), d}, Init::TruncNormal002, Bucket::Ffn, full, full);
    blk.ffn_b1 = pb.add(p + ".ffn.b1", {cfg.ffn_dim()}, Init::Zeros, Bucket::Ffn, full, full);
    blk.ffn_w2 = pb.add(p + ".ffn.w2", {d, cfg.ffn_dim()}, Init::TruncNormal002, Bucket::Ffn, full, full);
    blk.ffn_b2 = pb.add(p + ".ffn.b2", {d}, Init::Zeros, Bucket::Ffn, full, full);
    bb.blocks.push_back(blk);
  }
  bb.head_weight = pb.add("head.weight", {cfg.n_classes, d}, Init::TruncNormal002, Bucket::Head,
                          true, true);
  bb.head_bias = pb.add("head.bias", {cfg.n_classes}, Init::Zeros, Bucket::Head, true, true);

  PeftStack& stack = model.stack;
  stack.mode = cfg.peft_mode;
  stack.insertion = cfg.insertion;
  stack.scale = cfg.parallel_scale;
  stack.sigma = cfg.sigma;
  stack.accumulate_prompts = cfg.accumulate_prompts;
  switch (cfg.peft_mode) {
    case PeftMode::Full:
    case PeftMode::LinearProbe:
      break;
    case PeftMode::AdapterSerial:
    case PeftMode::AdapterParallel:
      for (std::size_t k = 0; k < cfg.depth; ++k)
        stack.adapters.push_back(make_adapter(pb, "peft.adapters." + std::to_string(k), d,
                                              cfg.rank, Bucket::Adapters, true));
      break;
    case PeftMode::Smoa:
    case PeftMode::SmoaBlockSpecific:
      stack.shared_pool = make_pool(pb, "peft.pool", cfg, true);
      break;
    case PeftMode::MoaPerBlock:
      for (std::size_t k = 0; k < cfg.depth; ++k)
        stack.block_pools.push_back(
            make_pool(pb, "peft.block_pools." + std::to_string(k), cfg, true));
      break;
  }
  if (cfg.has_block_specific()) {
    BlockSpecificParams bs;
    for (std::size_t k = 0; k < cfg.depth; ++k) {
      const std::string p = "peft.block_specific." + std::to_string(k);
      bs.norm_gamma.push_back(pb.add(p + ".norm_gamma", {d}, Init::Ones, Bucket::BlockSpecific, true, false));
      bs.norm_beta.push_back(pb.add(p + ".norm_beta", {d}, Init::Zeros, Bucket::BlockSpecific, true, false));
      bs.pg_scale.push_back(pb.add(p + ".pg_scale", {d}, Init::Ones, Bucket::BlockSpecific, true, false));
      bs.pg_shift.push_back(pb.add(p + ".pg_shift", {d}, Init::Zeros, Bucket::BlockSpecific, true, false));
    }
    stack.block_specific = std::move(bs);
  }
}

Tensor attention(const ModelConfig& cfg, const AttentionWeights& w, const Tensor& x_normed,
                 std::size_t batch, std::size_t seq_len) {
  const std::size_t nh = cfg.attn_heads;
  const std::size_t dh = cfg.d_model / nh;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor q = linear(x_normed, w.wq, w.bq);
  Tensor k = linear(x_normed, w.wk, w.bk);
  Tensor v = linear(x_normed, w.wv, w.bv);

  std::vector<Tensor> sample_outs;
  sample_outs.reserve(batch);
  for (std::size_t s = 0; s < batch; ++s) {
    const std::size_t r0 = s * seq_len, r1 = (s + 1) * seq_len;
    Tensor qs = slice_rows(q, r0, r1);
    Tensor ks = slice_rows(k, r0, r1);
    Tensor vs = slice_rows(v, r0, r1);
    std::vector<Tensor> head_outs;
    head_outs.reserve(nh);
    for (std::size_t h = 0; h < nh; ++h) {
      Tensor qh = slice_cols(qs, h * dh, (h + 1) * dh);
      Tensor kh = slice_cols(ks, h * dh, (h + 1) * dh);
      Tensor vh = slice_cols(vs, h * dh, (h + 1) * dh);
      Tensor att = softmax(scale(matmul_nt(qh, kh), inv_sqrt_dh), 1);
      head_outs.push_back(matmul(att, vh));
    }
    sample_outs.push_back(concat_cols(head_outs));
  }
  Tensor merged = concat_rows(sample_outs);
  return linear(merged, w.wo, w.bo);
}

Tensor ffn_forward(const EncoderBlock& blk, const Tensor& x) {
  return linear(gelu(linear(x, blk.ffn_w1, blk.ffn_b1)), blk.ffn_w2, blk.ffn_b2);
}

// Rewrites row-major sub-token indices into ids stable across blocks:
// sample * slot_capacity * heads + token_slot * heads + head. Slots cover
// CLS, patches and any prompt rows, so the same physical token keeps one
// id on its whole forward path.
void assign_token_ids(RoutingBatch& batch, const ModelConfig& cfg, std::size_t l) {
  const std::size_t h = cfg.moa_heads;
  const std::size_t slot_cap = cfg.seq_len() + std::max<std::size_t>(cfg.depth, 1);
  for (std::size_t r = 0; r < batch.token_ids.size(); ++r) {
    const std::size_t s = r / (l * h);
    const std::size_t rem = r % (l * h);
    const std::size_t slot = rem / h;
    const std::size_t head = rem % h;
    batch.token_ids[r] = static_cast<long>((s * slot_cap + slot) * h + head);
  }
}

}  // namespace

Model build_model(const ModelConfig& cfg, bool randomize_zero_init) {
  Model model;
  model.config = cfg;
  Rng rng = Rng(cfg.seed).fork(1);
  ParamBuilder pb(&rng);
  pb.set_randomize_zero_init(randomize_zero_init);
  assemble(cfg, pb, model);
  model.params = pb.take();
  return model;
}

std::vector<ParamInfo> param_manifest(const ModelConfig& cfg) {
  Model scratch;
  scratch.config = cfg;
  ParamBuilder pb(nullptr);
  assemble(cfg, pb, scratch);
  return pb.take();
}

ExpertPool clone_pool(const ExpertPool& pool) {
  ExpertPool out = pool;
  out.experts.clear();
  for (const AdapterWeights& a : pool.experts) out.experts.push_back(clone_adapter(a));
  out.embeddings = pool.embeddings.clone();
  out.router = pool.router.clone();
  return out;
}

AdapterWeights clone_adapter(const AdapterWeights& a) {
  return {a.w_down.clone(), a.b_down.clone(), a.w_up.clone(), a.b_up.clone()};
}

Tensor attach_rows_per_sample(const Tensor& x, std::span<const Tensor> rows, std::size_t batch,
                              std::size_t seq_len, bool replace_last) {
  if (rows.size() != batch)
    throw ShapeError("attach_rows_per_sample: " + std::to_string(rows.size()) + " rows for batch " +
                     std::to_string(batch));
  std::vector<Tensor> parts;
  parts.reserve(batch * 2);
  for (std::size_t s = 0; s < batch; ++s) {
    const std::size_t r0 = s * seq_len;
    const std::size_t keep = replace_last ? seq_len - 1 : seq_len;
    parts.push_back(slice_rows(x, r0, r0 + keep));
    parts.push_back(rows[s]);
  }
  return concat_rows(parts);
}

Tensor block_forward(const ModelConfig& cfg, const Backbone& bb, const PeftStack* stack,
                     std::size_t block_index, const Tensor& x, BlockState& state,
                     std::vector<RoutingBatch>* routing) {
  const EncoderBlock& blk = bb.blocks.at(block_index);
  const std::size_t b = state.batch;
  const std::size_t l = state.seq_len;

  Tensor h = add(x, attention(cfg, blk.attn, layer_norm(x, blk.norm1_gamma, blk.norm1_beta), b, l));

  const bool block_specific = stack != nullptr && stack->has_prompts();
  Tensor ffn_in = block_specific ? block_norm(*stack->block_specific, block_index, h)
                                 : layer_norm(h, blk.norm2_gamma, blk.norm2_beta);
  Tensor ffn_out = ffn_forward(blk, ffn_in);

  Tensor stage = ffn_out;
  Tensor moa_contrib;
  if (stack != nullptr) {
    switch (stack->mode) {
      case PeftMode::Full:
      case PeftMode::LinearProbe:
        break;
      case PeftMode::AdapterSerial:
        stage = adapter_forward(stack->adapters.at(block_index), ffn_out, stack->sigma);
        break;
      case PeftMode::AdapterParallel:
        stage = parallel_adapter_forward(stack->adapters.at(block_index), h, ffn_out, stack->scale,
                                         stack->sigma);
        break;
      case PeftMode::MoaPerBlock:
      case PeftMode::Smoa:
      case PeftMode::SmoaBlockSpecific: {
        const ExpertPool* pool = stack->pool_for_block(block_index);
        if (pool == nullptr)
          throw ContractError("block_forward: no expert pool for block " +
                              std::to_string(block_index));
        const bool serial = stack->insertion == Insertion::SerialAfterFfn;
        auto [contrib, batch_record] = smoa_forward(*pool, serial ? ffn_out : h,
                                                    static_cast<int>(block_index));
        assign_token_ids(batch_record, cfg, l);
        if (routing != nullptr) routing->push_back(std::move(batch_record));
        moa_contrib = contrib;
        stage = serial ? add(ffn_out, contrib) : add(ffn_out, scale(contrib, stack->scale));
        break;
      }
    }
  }
  Tensor out = add(h, stage);

  if (block_specific && moa_contrib.defined()) {
    // One generated prompt per sample; the mean runs over CLS + patch rows
    // only so prompts do not feed back into themselves.
    const std::size_t base = std::min(l, cfg.seq_len());
    std::vector<Tensor> prompts;
    prompts.reserve(b);
    for (std::size_t s = 0; s < b; ++s) {
      Tensor src = slice_rows(moa_contrib, s * l, s * l + base);
      prompts.push_back(generate_prompt(*stack->block_specific, block_index, src));
    }
    const bool replace = state.prompt_attached && !stack->accumulate_prompts;
    out = attach_rows_per_sample(out, prompts, b, l, replace);
    if (!replace) state.seq_len = l + 1;
    state.prompt_attached = true;
  }
  return out;
}

Tensor embed_batch(const ModelConfig& cfg, const Backbone& bb, const Tensor& batch) {
  if (batch.ndim() != 3 || batch.dim(1) != cfg.patches() || batch.dim(2) != cfg.patch_dim)
    throw ShapeError("encode: batch " + shape_str(batch.shape()) + " does not match config (b, " +
                     std::to_string(cfg.patches()) + ", " + std::to_string(cfg.patch_dim) + ")");
  const std::size_t b = batch.dim(0);
  const std::size_t L = cfg.patches();
  Tensor flat = reshape(batch, {b * L, cfg.patch_dim});
  Tensor proj = linear(flat, bb.patch_weight, bb.patch_bias);  // [b*L x d]
  Tensor cls_row = reshape(bb.cls_token, {1, cfg.d_model});
  std::vector<Tensor> samples;
  samples.reserve(b);
  for (std::size_t s = 0; s < b; ++s) {
    std::array<Tensor, 2> parts{cls_row, slice_rows(proj, s * L, (s + 1) * L)};
    samples.push_back(add(concat_rows(parts), bb.pos_embed));
  }
  return concat_rows(samples);
}

Tensor encode(const ModelConfig& cfg, const Backbone& bb, const PeftStack* stack,
              const Tensor& batch, ForwardTrace* trace) {
  const std::size_t b = batch.dim(0);
  Tensor x = embed_batch(cfg, bb, batch);
  BlockState state{b, cfg.seq_len(), false};
  for (std::size_t k = 0; k < cfg.depth; ++k)
    x = block_forward(cfg, bb, stack, k, x, state, trace != nullptr ? &trace->routing : nullptr);

  std::vector<std::size_t> cls_rows(b);
  for (std::size_t s = 0; s < b; ++s) cls_rows[s] = s * state.seq_len;
  Tensor features = gather_rows(x, cls_rows);
  if (trace != nullptr) trace->cls_features = features;
  return linear(features, bb.head_weight, bb.head_bias);
}

Tensor encode(const Model& model, const Tensor& batch, ForwardTrace* trace) {
  return encode(model.config, model.backbone, &model.stack, batch, trace);
}

}  // namespace smoa
