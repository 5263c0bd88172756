#include "smoa/ledger.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "smoa/backbone.hpp"

namespace smoa {

namespace {

struct Formula {
  std::size_t count;
  std::string text;
};

// Closed-form counts per bucket, numbers substituted from the config.
std::map<Bucket, Formula> bucket_formulas(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model;
  const std::size_t depth = cfg.depth;
  const std::size_t r = cfg.rank;
  const std::size_t n = cfg.n_experts;
  const std::size_t w = cfg.sub_width();
  const std::size_t f = cfg.ffn_dim();
  const std::size_t L1 = cfg.seq_len();
  auto s = [](std::size_t v) { return std::to_string(v); };

  std::map<Bucket, Formula> out;
  out[Bucket::PatchEmbed] = {cfg.patch_dim * d + d, s(cfg.patch_dim) + "*" + s(d) + " + " + s(d)};
  out[Bucket::ClsPos] = {d + L1 * d, s(d) + " + " + s(L1) + "*" + s(d)};
  out[Bucket::Attention] = {depth * 4 * (d * d + d),
                            s(depth) + "*4*(" + s(d) + "*" + s(d) + " + " + s(d) + ")"};
  out[Bucket::Ffn] = {depth * (2 * d * f + f + d),
                      s(depth) + "*(2*" + s(d) + "*" + s(f) + " + " + s(f) + " + " + s(d) + ")"};
  out[Bucket::BackboneNorms] = {depth * 4 * d, s(depth) + "*4*" + s(d)};
  out[Bucket::Head] = {cfg.n_classes * d + cfg.n_classes,
                       s(cfg.n_classes) + "*" + s(d) + " + " + s(cfg.n_classes)};

  switch (cfg.peft_mode) {
    case PeftMode::AdapterSerial:
    case PeftMode::AdapterParallel:
      out[Bucket::Adapters] = {depth * (2 * d * r + d + r),
                               s(depth) + "*(2*" + s(d) + "*" + s(r) + " + " + s(d) + " + " + s(r) + ")"};
      break;
    case PeftMode::Smoa:
    case PeftMode::SmoaBlockSpecific:
      out[Bucket::Experts] = {n * (2 * w * r + w + r),
                              s(n) + "*(2*" + s(w) + "*" + s(r) + " + " + s(w) + " + " + s(r) + ")"};
      out[Bucket::Embeddings] = {n * cfg.d_e, s(n) + "*" + s(cfg.d_e)};
      out[Bucket::Router] = {cfg.d_e * w, s(cfg.d_e) + "*" + s(w)};
      break;
    case PeftMode::MoaPerBlock:
      out[Bucket::Experts] = {depth * n * (2 * w * r + w + r),
                              s(depth) + "*" + s(n) + "*(2*" + s(w) + "*" + s(r) + " + " + s(w) +
                                  " + " + s(r) + ")"};
      out[Bucket::Embeddings] = {depth * n * cfg.d_e, s(depth) + "*" + s(n) + "*" + s(cfg.d_e)};
      out[Bucket::Router] = {depth * cfg.d_e * w, s(depth) + "*" + s(cfg.d_e) + "*" + s(w)};
      break;
    default:
      break;
  }
  if (cfg.has_block_specific())
    out[Bucket::BlockSpecific] = {depth * 4 * d, s(depth) + "*(2*" + s(d) + " + 2*" + s(d) + ")"};
  return out;
}

}  // namespace

ParamLedger count_params(const std::vector<ParamInfo>& registry, const ModelConfig& cfg) {
  struct Tally {
    std::size_t trainable = 0;
    std::size_t frozen = 0;
  };
  std::map<Bucket, Tally> tallies;
  for (const ParamInfo& p : registry) {
    const std::size_t n = shape_size(p.shape);
    if (p.trainable) tallies[p.bucket].trainable += n;
    else tallies[p.bucket].frozen += n;
  }

  auto formulas = bucket_formulas(cfg);
  ParamLedger ledger;
  for (const auto& [bucket, f] : formulas) {
    auto it = tallies.find(bucket);
    const Tally tally = it == tallies.end() ? Tally{} : it->second;
    const std::size_t counted = tally.trainable + tally.frozen;
    if (counted != f.count)
      throw ContractError(std::string("ledger: closed form for ") + bucket_name(bucket) + " gives " +
                          std::to_string(f.count) + " but traversal counted " +
                          std::to_string(counted));
    ledger.rows.push_back({bucket_name(bucket), tally.trainable, tally.frozen, f.text});
    ledger.trainable_total += tally.trainable;
    ledger.frozen_total += tally.frozen;
    if (bucket == Bucket::Head) ledger.head_trainable = tally.trainable;
  }
  ledger.total_params = ledger.trainable_total + ledger.frozen_total;
  ledger.headline = ledger.trainable_total - ledger.head_trainable;
  const auto head_it = formulas.find(Bucket::Head);
  const std::size_t head_count = head_it == formulas.end() ? 0 : head_it->second.count;
  const std::size_t denom = ledger.total_params - head_count;
  ledger.ratio_vs_full = denom == 0 ? 0.0 : static_cast<double>(ledger.headline) / denom;
  return ledger;
}

ParamLedger ledger_from_config(const ModelConfig& cfg) {
  return count_params(param_manifest(cfg), cfg);
}

std::string ledger_table(const ParamLedger& ledger) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-16s %12s %12s   %s\n", "component", "trainable", "frozen",
                "formula");
  os << line;
  for (const LedgerRow& row : ledger.rows) {
    std::snprintf(line, sizeof(line), "%-16s %12zu %12zu   %s\n", row.component.c_str(),
                  row.trainable, row.frozen, row.formula.c_str());
    os << line;
  }
  std::snprintf(line, sizeof(line), "%-16s %12zu %12zu\n", "total", ledger.trainable_total,
                ledger.frozen_total);
  os << line;
  os << "trainable excluding head: " << ledger.headline << "\n";
  std::snprintf(line, sizeof(line), "ratio vs full fine-tuning: %.6f\n", ledger.ratio_vs_full);
  os << line;
  return os.str();
}

void write_ledger_csv(const std::string& path, const ParamLedger& ledger) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot open " + path + " for writing");
  out << "component,trainable,frozen,formula\n";
  for (const LedgerRow& row : ledger.rows)
    out << row.component << "," << row.trainable << "," << row.frozen << ",\"" << row.formula
        << "\"\n";
  out << "total," << ledger.trainable_total << "," << ledger.frozen_total << ",\n";
  out << "headline_excluding_head," << ledger.headline << ",,\n";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", ledger.ratio_vs_full);
  out << "ratio_vs_full," << buf << ",,\n";
}

}  // namespace smoa
