#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "stela/error.hpp"
#include "stela/neighborhood.hpp"
#include "stela/rng.hpp"
#include "stela/sparse_grid.hpp"
#include "stela/stela_core.hpp"

namespace stela {

struct AttentionBenchConfig {
  std::vector<int> n_grid = {1000, 2000, 4000, 8000};
  std::vector<int> k_grid = {16};
  int feature_dim = 32;
  int key_dim = 8;
  int repeats = 3;
  std::uint64_t seed = 1;
  int threads = 1;
  std::uint64_t memory_budget_bytes = 2ull << 30;
};

struct AttentionBenchRow {
  int n = 0;
  int k = 0;  // 0 on global rows
  bool global = false;
  bool skipped = false;
  double seconds_median = 0.0;
  std::uint64_t flops_correlation = 0;
  std::uint64_t flops_aggregation = 0;

  std::uint64_t flops_total() const { return flops_correlation + flops_aggregation; }
};

struct AttentionBenchResult {
  AttentionBenchConfig config;
  std::vector<AttentionBenchRow> rows;
};

namespace detail {

// Random sparse set with n unique indices in a cube scaled to keep occupancy
// around one in four cells.
template <class S>
SparseVoxelSet<S> random_bench_set(Rng& rng, int n, int d) {
  const int side = std::max(4, static_cast<int>(std::ceil(std::cbrt(4.0 * n))));
  std::set<std::array<std::int32_t, 3>> used;
  while (static_cast<int>(used.size()) < n)
    used.insert({static_cast<std::int32_t>(rng.uniform_index(side)),
                 static_cast<std::int32_t>(rng.uniform_index(side)),
                 static_cast<std::int32_t>(rng.uniform_index(side))});
  SparseVoxelSet<S> set;
  set.indices.resize(n, 3);
  set.features.resize(n, d);
  int row = 0;
  for (const auto& idx : used) {
    set.indices.row(row) << idx[0], idx[1], idx[2];
    for (int c = 0; c < d; ++c) set.features(row, c) = static_cast<S>(rng.normal());
    ++row;
  }
  return set;
}

inline double median_of(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  return xs[xs.size() / 2];
}

}  // namespace detail

// Least-squares slope of log(y) against log(x).
inline double fit_log_log_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw UsageError("slope fit needs at least two samples");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double lx = std::log(xs[i]);
    const double ly = std::log(ys[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double n = static_cast<double>(xs.size());
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// Times local attention (KNN tables prebuilt, excluded from the clock)
// against global attention over identical synthetic sparse sets, in 32-bit
// like the production inference path. FLOP counters come from one counted
// pass and are exact.
inline AttentionBenchResult bench_attention(const AttentionBenchConfig& cfg) {
  if (cfg.repeats < 1) throw ConfigError("bench: repeats must be >= 1");
  AttentionBenchResult result;
  result.config = cfg;
  Rng rng = Rng::derive(cfg.seed, "bench");

  for (int n : cfg.n_grid) {
    SparseVoxelSet<float> current = detail::random_bench_set<float>(rng, n, cfg.feature_dim);
    SparseVoxelSet<float> past = detail::random_bench_set<float>(rng, n, cfg.feature_dim);
    const std::vector<const SparseVoxelSet<float>*> past_sets{&past};
    StelaParams<float> params =
        make_stela_params<float>(cfg.feature_dim, cfg.key_dim, cfg.seed);

    for (int k : cfg.k_grid) {
      AttentionBenchRow row;
      row.n = n;
      row.k = k;
      const std::uint64_t local_bytes =
          static_cast<std::uint64_t>(n) * k * (cfg.feature_dim + cfg.key_dim + 16) * 4;
      if (local_bytes > cfg.memory_budget_bytes) {
        row.skipped = true;
        result.rows.push_back(row);
        continue;
      }
      const std::vector<NeighborhoodEntry> tables{
          knn_neighborhood(current, past, k, cfg.threads)};
      AttentionFlops flops;
      stela_forward(current, past_sets, tables, params, nullptr, &flops, cfg.threads);
      row.flops_correlation = flops.correlation;
      row.flops_aggregation = flops.aggregation;
      std::vector<double> times;
      for (int r = 0; r < cfg.repeats; ++r) {
        const auto start = std::chrono::steady_clock::now();
        volatile float sink = stela_forward(current, past_sets, tables, params, nullptr,
                                            nullptr, cfg.threads)(0, 0);
        (void)sink;
        times.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      }
      row.seconds_median = detail::median_of(std::move(times));
      result.rows.push_back(row);
    }

    AttentionBenchRow grow;
    grow.n = n;
    grow.global = true;
    const std::uint64_t score_bytes = static_cast<std::uint64_t>(n) * n * 4;
    if (score_bytes > cfg.memory_budget_bytes) {
      grow.skipped = true;
      result.rows.push_back(grow);
      continue;
    }
    AttentionFlops flops;
    global_attention_forward(current, past_sets, params, &flops, cfg.threads);
    grow.flops_correlation = flops.correlation;
    grow.flops_aggregation = flops.aggregation;
    std::vector<double> times;
    for (int r = 0; r < cfg.repeats; ++r) {
      const auto start = std::chrono::steady_clock::now();
      volatile float sink =
          global_attention_forward(current, past_sets, params, nullptr, cfg.threads)(0, 0);
      (void)sink;
      times.push_back(
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    grow.seconds_median = detail::median_of(std::move(times));
    result.rows.push_back(grow);
  }
  return result;
}

// Slope of median wall-clock over N for one series of the result.
inline double bench_slope(const AttentionBenchResult& result, bool global, int k = 0) {
  std::vector<double> ns, ts;
  for (const AttentionBenchRow& row : result.rows) {
    if (row.skipped || row.global != global) continue;
    if (!global && row.k != k) continue;
    ns.push_back(static_cast<double>(row.n));
    ts.push_back(std::max(row.seconds_median, 1e-9));
  }
  return fit_log_log_slope(ns, ts);
}

}  // namespace stela
