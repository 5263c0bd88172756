#include "smoa/expert_pool.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

namespace smoa {

std::vector<RoutingRecord> RoutingBatch::records() const {
  const std::size_t m = argmax.size();
  const std::size_t n = gates.dim(1);
  auto gv = gates.values();
  std::vector<RoutingRecord> out(m);
  for (std::size_t r = 0; r < m; ++r) {
    out[r].block_index = block_index;
    out[r].sub_token_index = token_ids.empty() ? static_cast<long>(r) : token_ids[r];
    out[r].gate_vector.assign(gv.begin() + r * n, gv.begin() + (r + 1) * n);
    out[r].argmax_expert = argmax[r];
  }
  return out;
}

Tensor split_tokens(const Tensor& x, std::size_t heads) {
  if (x.ndim() != 2)
    throw ShapeError("split_tokens: expected 2-D tokens, got " + shape_str(x.shape()));
  const std::size_t l = x.dim(0), d = x.dim(1);
  if (heads == 0 || d % heads != 0)
    throw ConfigError("split_tokens: heads=" + std::to_string(heads) + " does not divide d=" +
                      std::to_string(d));
  return reshape(x, {l * heads, d / heads});
}

Tensor merge_tokens(const Tensor& xhat, std::size_t heads) {
  if (xhat.ndim() != 2)
    throw ShapeError("merge_tokens: expected 2-D sub-tokens, got " + shape_str(xhat.shape()));
  const std::size_t m = xhat.dim(0), w = xhat.dim(1);
  if (heads == 0 || m % heads != 0)
    throw ConfigError("merge_tokens: heads=" + std::to_string(heads) +
                      " does not divide sub-token count " + std::to_string(m));
  return reshape(xhat, {m / heads, w * heads});
}

Tensor route_scores(const ExpertPool& pool, const Tensor& xhat) {
  if (xhat.ndim() != 2 || xhat.dim(1) != pool.sub_width)
    throw ShapeError("route_scores: sub-tokens " + shape_str(xhat.shape()) +
                     " do not match router " + shape_str(pool.router.shape()));
  Tensor projected = matmul_nt(xhat, pool.router);  // [m x d_e]
  Tensor e_norm = l2_normalize_rows(pool.embeddings, pool.detach_embedding_norm);
  return matmul_nt(projected, e_norm);  // [m x N]
}

Tensor gate(const Tensor& scores) { return softmax(scores, 1); }

std::pair<Tensor, RoutingBatch> smoa_forward(const ExpertPool& pool, const Tensor& x,
                                             int block_index) {
  Tensor xhat = split_tokens(x, pool.heads);
  Tensor gates = gate(route_scores(pool, xhat));
  const std::size_t m = xhat.dim(0);
  const std::size_t n = pool.n_experts;

  RoutingBatch batch;
  batch.block_index = block_index;
  batch.gates = gates;
  batch.argmax.resize(m);
  batch.token_ids.resize(m);
  auto gv = gates.values();
  for (std::size_t r = 0; r < m; ++r) {
    batch.argmax[r] = static_cast<int>(argmax(gv.subspan(r * n, n)));
    batch.token_ids[r] = static_cast<long>(r);
  }

  Tensor weights = gates;
  if (pool.top1_routing) {
    // Keep only the winning gate per row; the kept entry stays
    // differentiable.
    std::vector<double> mask(m * n, 0.0);
    for (std::size_t r = 0; r < m; ++r) mask[r * n + batch.argmax[r]] = 1.0;
    weights = mul(gates, Tensor::from({m, n}, std::move(mask)));
  }

  Tensor mix;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor weighted =
        mul(adapter_core(pool.experts[i], xhat, pool.sigma), slice_cols(weights, i, i + 1));
    mix = i == 0 ? weighted : add(mix, weighted);
  }
  return {merge_tokens(mix, pool.heads), std::move(batch)};
}

Tensor balance_loss(std::span<const RoutingBatch> batches, std::size_t n_experts,
                    bool soft_count) {
  if (batches.empty()) throw ContractError("balance_loss: empty record set");
  Tensor total;
  for (const RoutingBatch& b : batches) {
    const std::size_t m = b.argmax.size();
    const std::size_t n = n_experts;
    std::vector<double> t(n, 0.0);
    if (soft_count) {
      auto gv = b.gates.values();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t p = 0; p < n; ++p) t[p] += gv[r * n + p];
      for (double& v : t) v /= static_cast<double>(m);
    } else {
      for (int a : b.argmax) t[a] += 1.0;
      for (double& v : t) v /= static_cast<double>(m);
    }
    // Row-constant weight matrix T[r][p] = t_p; gradients flow through the
    // gates only.
    std::vector<double> tw(m * n);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t p = 0; p < n; ++p) tw[r * n + p] = t[p];
    Tensor per_block =
        scale(sum(mul(Tensor::from({m, n}, std::move(tw)), b.gates)),
              static_cast<double>(n) / static_cast<double>(m));
    total = total.defined() ? add(total, per_block) : per_block;
  }
  return scale(total, 1.0 / static_cast<double>(batches.size()));
}

StatsTable routing_stats(std::span<const RoutingRecord> records) {
  StatsTable stats;
  if (records.empty()) return stats;

  std::size_t n_experts = records.front().gate_vector.size();
  std::map<int, std::vector<double>> counts;  // block -> per-expert count
  std::map<int, std::size_t> totals;
  for (const RoutingRecord& r : records) {
    auto& c = counts[r.block_index];
    if (c.empty()) c.assign(n_experts, 0.0);
    c[r.argmax_expert] += 1.0;
    ++totals[r.block_index];
  }
  for (auto& [block, c] : counts)
    for (std::size_t p = 0; p < n_experts; ++p)
      stats.load.push_back({block, static_cast<int>(p),
                            c[p] / static_cast<double>(totals[block])});

  for (const RoutingRecord& r : records)
    for (std::size_t p = 0; p < n_experts; ++p)
      stats.paths.push_back(
          {r.sub_token_index, r.block_index, static_cast<int>(p), r.gate_vector[p]});
  std::stable_sort(stats.paths.begin(), stats.paths.end(),
                   [](const StatsTable::PathRow& a, const StatsTable::PathRow& b) {
                     if (a.token_id != b.token_id) return a.token_id < b.token_id;
                     if (a.block != b.block) return a.block < b.block;
                     return a.expert < b.expert;
                   });
  return stats;
}

void write_expert_load_csv(const std::string& path, const StatsTable& stats) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot open " + path + " for writing");
  out << "block,expert,fraction\n";
  char buf[64];
  for (const auto& row : stats.load) {
    std::snprintf(buf, sizeof(buf), "%.17g", row.fraction);
    out << row.block << "," << row.expert << "," << buf << "\n";
  }
}

void write_token_paths_csv(const std::string& path, const StatsTable& stats) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot open " + path + " for writing");
  out << "token_id,block,expert,gate\n";
  char buf[64];
  for (const auto& row : stats.paths) {
    std::snprintf(buf, sizeof(buf), "%.17g", row.gate);
    out << row.token_id << "," << row.block << "," << row.expert << "," << buf << "\n";
  }
}

}  // namespace smoa
