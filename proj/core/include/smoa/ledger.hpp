#pragma once

#include <string>
#include <vector>

#include "smoa/config.hpp"
#include "smoa/params.hpp"

namespace smoa {

struct LedgerRow {
  std::string component;
  std::size_t trainable = 0;
  std::size_t frozen = 0;
  std::string formula;  // closed form with config numbers substituted
};

// Per-component parameter accounting. Counts come from the registry;
// every row also carries a closed-form expression recomputed from the
// config, and the two must agree exactly (checked at build time).
// The headline follows the convention of reporting learnable parameters
// excluding the classification head, which is listed separately.
struct ParamLedger {
  std::vector<LedgerRow> rows;
  std::size_t trainable_total = 0;
  std::size_t frozen_total = 0;
  std::size_t total_params = 0;
  std::size_t head_trainable = 0;
  std::size_t headline = 0;       // trainable excluding head
  double ratio_vs_full = 0.0;     // headline / (total excluding head)
};

ParamLedger count_params(const std::vector<ParamInfo>& registry, const ModelConfig& cfg);

// Ledger from the config alone (shape manifest; no weights allocated).
ParamLedger ledger_from_config(const ModelConfig& cfg);

std::string ledger_table(const ParamLedger& ledger);
void write_ledger_csv(const std::string& path, const ParamLedger& ledger);

}  // namespace smoa
