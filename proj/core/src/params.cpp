#include "smoa/params.hpp"

namespace smoa {

const char* bucket_name(Bucket b) {
  switch (b) {
    case Bucket::PatchEmbed: return "patch_embed";
    case Bucket::ClsPos: return "cls_pos";
    case Bucket::Attention: return "attention";
    case Bucket::Ffn: return "ffn";
    case Bucket::BackboneNorms: return "backbone_norms";
    case Bucket::Head: return "head";
    case Bucket::Adapters: return "adapters";
    case Bucket::Experts: return "experts";
    case Bucket::Router: return "router";
    case Bucket::Embeddings: return "embeddings";
    case Bucket::BlockSpecific: return "block_specific";
  }
  return "?";
}

Tensor ParamBuilder::add(std::string name, Shape shape, Init init, Bucket bucket, bool trainable,
                         bool decay) {
  ParamInfo info;
  info.name = std::move(name);
  info.bucket = bucket;
  info.trainable = trainable;
  info.decay = decay;
  info.shape = shape;

  if (!counting()) {
    const std::size_t n = shape_size(shape);
    std::vector<double> v(n);
    switch (init) {
      case Init::Zeros:
        for (double& x : v) x = randomize_zero_init_ ? rng_->trunc_normal(0.02) : 0.0;
        break;
      case Init::Ones:
        for (double& x : v) x = 1.0 + (randomize_zero_init_ ? rng_->trunc_normal(0.02) : 0.0);
        break;
      case Init::TruncNormal002:
        for (double& x : v) x = rng_->trunc_normal(0.02);
        break;
      case Init::TruncNormal1:
        for (double& x : v) x = rng_->trunc_normal(1.0);
        break;
    }
    info.tensor = Tensor::from(std::move(shape), std::move(v), trainable);
  }

  params_.push_back(info);
  return info.tensor;
}

}  // namespace smoa
