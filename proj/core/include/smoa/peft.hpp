#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "smoa/adapter.hpp"
#include "smoa/block_specific.hpp"
#include "smoa/config.hpp"
#include "smoa/expert_pool.hpp"

namespace smoa {

// Everything inserted into the frozen backbone for one PEFT strategy.
// In shared modes every block aliases the single shared_pool instance;
// mutating it changes the behavior of all blocks. moa-per-block carries
// depth independent pools instead.
struct PeftStack {
  PeftMode mode = PeftMode::Full;
  Insertion insertion = Insertion::SerialAfterFfn;
  double scale = 0.1;  // parallel branch scale s
  Sigma sigma = Sigma::Gelu;
  bool accumulate_prompts = false;

  std::vector<AdapterWeights> adapters;                   // adapter-serial / adapter-parallel
  std::shared_ptr<ExpertPool> shared_pool;                // smoa modes
  std::vector<std::shared_ptr<ExpertPool>> block_pools;   // moa-per-block
  std::optional<BlockSpecificParams> block_specific;

  const ExpertPool* pool_for_block(std::size_t k) const {
    if (shared_pool) return shared_pool.get();
    if (k < block_pools.size()) return block_pools[k].get();
    return nullptr;
  }
  bool has_adapters() const { return !adapters.empty(); }
  bool has_moa() const { return shared_pool != nullptr || !block_pools.empty(); }
  bool has_prompts() const { return block_specific.has_value(); }
};

// Deep copy: fresh storage, same values and flags.
ExpertPool clone_pool(const ExpertPool& pool);
AdapterWeights clone_adapter(const AdapterWeights& a);

}  // namespace smoa
