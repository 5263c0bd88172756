#pragma once

#include <string>
#include <vector>

#include "smoa/rng.hpp"
#include "smoa/tensor.hpp"

namespace smoa {

// Ledger buckets. Every parameter belongs to exactly one; the ledger and
// checkpoint both key off this registry.
enum class Bucket {
  PatchEmbed,
  ClsPos,
  Attention,
  Ffn,
  BackboneNorms,
  Head,
  Adapters,
  Experts,
  Router,
  Embeddings,
  BlockSpecific,
};

const char* bucket_name(Bucket b);

struct ParamInfo {
  std::string name;
  Bucket bucket;
  bool trainable = false;
  bool decay = false;  // weight decay applies
  Shape shape;
  Tensor tensor;  // undefined in counting mode
};

// Declares parameters while a model is being assembled. In materializing
// mode it draws initial values and returns live tensors; in counting mode
// it records names/shapes/flags only, so ledgers for large configs never
// allocate weights. Both modes run the same construction code, which keeps
// ledger formulas and real models in lockstep.
class ParamBuilder {
 public:
  enum class Init { Zeros, Ones, TruncNormal002, TruncNormal1 };

  explicit ParamBuilder(Rng* rng) : rng_(rng) {}

  bool counting() const { return rng_ == nullptr; }

  // randomize_zero_init replaces Zeros/Ones draws with small random values
  // around the nominal init; used by the gradient checker, where exact
  // zero-init makes many gradients identically zero.
  void set_randomize_zero_init(bool v) { randomize_zero_init_ = v; }

  Tensor add(std::string name, Shape shape, Init init, Bucket bucket, bool trainable, bool decay);

  std::vector<ParamInfo> take() { return std::move(params_); }
  const std::vector<ParamInfo>& params() const { return params_; }

 private:
  Rng* rng_;
  bool randomize_zero_init_ = false;
  std::vector<ParamInfo> params_;
};

}  // namespace smoa
