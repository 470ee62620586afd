#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "stela/common.hpp"
#include "stela/error.hpp"
#include "stela/mlp.hpp"
#include "stela/neighborhood.hpp"
#include "stela/parallel.hpp"
#include "stela/sparse_grid.hpp"

namespace stela {

// Exact multiply+add counts for the attention math, instrumented inside the
// compute loops. Correlation counts 2*D_K per scored slot, aggregation 2*D
// per weighted slot; softmax bookkeeping is not counted.
struct AttentionFlops {
  std::uint64_t correlation = 0;
  std::uint64_t aggregation = 0;

  std::uint64_t total() const { return correlation + aggregation; }
};

inline int default_key_dim(int feature_dim) { return std::max(feature_dim / 4, 8); }

// Learned pieces of the attention module: the shared key adapter (two-layer
// MLP, applied to both query- and key-side features) and the two fusion
// gates (linear, 2D -> D).
template <class S>
struct StelaParams {
  Mlp<S> key_adapter;
  MlpLayer<S> gate_t;
  MlpLayer<S> gate_m;

  int feature_dim() const { return key_adapter.input_dim(); }
  int key_dim() const { return key_adapter.output_dim(); }

  void validate() const {
    key_adapter.validate();
    if (key_dim() < 1) throw ConfigError("stela: key dim must be >= 1");
    const int d = feature_dim();
    auto check_gate = [d](const MlpLayer<S>& gate, const char* name) {
      if (gate.weight.cols() != 2 * d || gate.weight.rows() != d ||
          gate.bias.size() != d)
        throw ConfigError(std::string("stela: ") + name + " must map 2D -> D");
      if (!gate.weight.allFinite() || !gate.bias.allFinite())
        throw ConfigError(std::string("stela: non-finite ") + name);
    };
    check_gate(gate_t, "gate_t");
    check_gate(gate_m, "gate_m");
  }
};

template <class S>
StelaParams<S> make_stela_params(int feature_dim, int key_dim, std::uint64_t seed) {
  StelaParams<S> params;
  params.key_adapter =
      make_mlp<S>({feature_dim, feature_dim, key_dim}, seed, "stela.key_adapter");
  Mlp<S> gates = make_mlp<S>({2 * feature_dim, feature_dim}, seed, "stela.gate_t");
  params.gate_t = gates.layers[0];
  gates = make_mlp<S>({2 * feature_dim, feature_dim}, seed, "stela.gate_m");
  params.gate_m = gates.layers[0];
  params.validate();
  return params;
}

// Scaled-dot correlation scores per past frame, N x k, with -inf written to
// masked slots before the softmax.
template <class S>
struct CorrelationBlock {
  std::vector<MatX<S>> scores;
  std::vector<MaskMat> masks;

  Eigen::Index num_queries() const { return scores.empty() ? 0 : scores.front().rows(); }
  std::size_t num_frames() const { return scores.size(); }
};

// Joint softmax over neighborhood slots and frames; zero at masked slots and
// on rows with no valid slot at all.
template <class S>
struct AttentionMask {
  std::vector<MatX<S>> weights;

  Eigen::Index num_queries() const { return weights.empty() ? 0 : weights.front().rows(); }
};

// Row-wise application of the shared key adapter.
template <class S>
MatX<S> compute_keys(const MatX<S>& features, const StelaParams<S>& params,
                     MlpCache<S>* cache = nullptr) {
  if (features.cols() != params.feature_dim())
    throw ConfigError("compute_keys: feature width does not match key adapter");
  return mlp_forward(params.key_adapter, features, cache);
}

// C_n(i, j) = <keys_query(i), keys_local_n(i, j)> / sqrt(D_K) on valid slots.
template <class S>
CorrelationBlock<S> correlate(const MatX<S>& keys_query,
                              const std::vector<MatX<S>>& keys_local,
                              const std::vector<MaskMat>& masks, int key_dim,
                              AttentionFlops* flops = nullptr, int threads = 1) {
  if (keys_local.size() != masks.size())
    throw ConfigError("correlate: frames and masks disagree");
  const Eigen::Index n = keys_query.rows();
  const S inv_sqrt = S(1) / static_cast<S>(std::sqrt(static_cast<double>(key_dim)));
  const S neg_inf = -std::numeric_limits<S>::infinity();

  CorrelationBlock<S> block;
  block.masks = masks;
  std::uint64_t scored = 0;
  for (std::size_t f = 0; f < keys_local.size(); ++f) {
    const MaskMat& mask = masks[f];
    const MatX<S>& local = keys_local[f];
    const int k = static_cast<int>(mask.cols());
    if (mask.rows() != n || local.rows() != n * k || local.cols() != keys_query.cols())
      throw ConfigError("correlate: shape mismatch on frame " + std::to_string(f));
    MatX<S> scores(n, k);
    parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        const Eigen::Index row = static_cast<Eigen::Index>(i);
        for (int j = 0; j < k; ++j)
          scores(row, j) = mask(row, j)
                               ? keys_query.row(row).dot(local.row(row * k + j)) * inv_sqrt
                               : neg_inf;
      }
    });
    for (Eigen::Index i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) scored += mask(i, j) ? 1 : 0;
    block.scores.push_back(std::move(scores));
  }
  if (flops) flops->correlation += scored * 2ull * static_cast<std::uint64_t>(key_dim);
  return block;
}

// Max-subtracted exponentials normalized jointly over (j, n) per query row.
template <class S>
AttentionMask<S> attention_softmax(const CorrelationBlock<S>& block, int threads = 1) {
  AttentionMask<S> attn;
  const Eigen::Index n = block.num_queries();
  for (const MatX<S>& s : block.scores) attn.weights.push_back(MatX<S>::Zero(s.rows(), s.cols()));

  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t qi = begin; qi < end; ++qi) {
      const Eigen::Index i = static_cast<Eigen::Index>(qi);
      S max_score = -std::numeric_limits<S>::infinity();
      for (std::size_t f = 0; f < block.scores.size(); ++f)
        for (Eigen::Index j = 0; j < block.scores[f].cols(); ++j)
          if (block.masks[f](i, j) && block.scores[f](i, j) > max_score)
            max_score = block.scores[f](i, j);
      if (max_score == -std::numeric_limits<S>::infinity()) continue;  // no valid slot

      S denom = S(0);
      for (std::size_t f = 0; f < block.scores.size(); ++f)
        for (Eigen::Index j = 0; j < block.scores[f].cols(); ++j)
          if (block.masks[f](i, j)) {
            const S e = std::exp(block.scores[f](i, j) - max_score);
            attn.weights[f](i, j) = e;
            denom += e;
          }
      for (std::size_t f = 0; f < block.scores.size(); ++f)
        for (Eigen::Index j = 0; j < block.scores[f].cols(); ++j)
          if (block.masks[f](i, j)) attn.weights[f](i, j) /= denom;
    }
  });
  return attn;
}

// Memory tensor: attention-weighted sum of gathered past features.
template <class S>
MatX<S> aggregate_memory(const AttentionMask<S>& attn,
                         const std::vector<GatheredNeighborhood<S>>& gathered, int feature_dim,
                         AttentionFlops* flops = nullptr, int threads = 1) {
  if (attn.weights.size() != gathered.size())
    throw ConfigError("aggregate_memory: frames disagree");
  const Eigen::Index n = attn.num_queries();
  MatX<S> memory = MatX<S>::Zero(n, feature_dim);
  std::uint64_t weighted = 0;
  for (std::size_t f = 0; f < gathered.size(); ++f) {
    const GatheredNeighborhood<S>& g = gathered[f];
    const MatX<S>& p = attn.weights[f];
    const int k = g.k;
    parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t begin, std::size_t end) {
      for (std::size_t qi = begin; qi < end; ++qi) {
        const Eigen::Index i = static_cast<Eigen::Index>(qi);
        for (int j = 0; j < k; ++j)
          if (g.mask(i, j)) memory.row(i) += p(i, j) * g.features.row(i * k + j);
      }
    });
    for (Eigen::Index i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) weighted += g.mask(i, j) ? 1 : 0;
  }
  if (flops) flops->aggregation += weighted * 2ull * static_cast<std::uint64_t>(feature_dim);
  return memory;
}

template <class S>
struct FuseCache {
  MatX<S> concat;      // N x 2D: [V_t ; V_M]
  MatX<S> gate_t_sig;  // N x D
  MatX<S> gate_m_sig;  // N x D
};

// V_out = sigmoid(G_t [V_t; V_M]) .* V_t + sigmoid(G_M [V_t; V_M]) .* V_M.
template <class S>
MatX<S> fuse(const MatX<S>& v_current, const MatX<S>& v_memory, const StelaParams<S>& params,
             FuseCache<S>* cache = nullptr) {
  const Eigen::Index n = v_current.rows();
  const int d = params.feature_dim();
  if (v_current.cols() != d || v_memory.cols() != d || v_memory.rows() != n)
    throw ConfigError("fuse: feature shapes do not match params");

  MatX<S> concat(n, 2 * d);
  concat.leftCols(d) = v_current;
  concat.rightCols(d) = v_memory;

  auto sigmoid = [](const MatX<S>& z) -> MatX<S> {
    return z.unaryExpr([](S v) { return S(1) / (S(1) + std::exp(-v)); });
  };
  MatX<S> zt = concat * params.gate_t.weight.transpose();
  zt.rowwise() += params.gate_t.bias.transpose();
  MatX<S> zm = concat * params.gate_m.weight.transpose();
  zm.rowwise() += params.gate_m.bias.transpose();
  MatX<S> gt = sigmoid(zt);
  MatX<S> gm = sigmoid(zm);

  MatX<S> out = gt.cwiseProduct(v_current) + gm.cwiseProduct(v_memory);
  if (cache) {
    cache->concat = std::move(concat);
    cache->gate_t_sig = std::move(gt);
    cache->gate_m_sig = std::move(gm);
  }
  return out;
}

// Everything the backward pass needs from a forward run.
template <class S>
struct StelaWorkspace {
  MlpCache<S> query_key_cache;
  std::vector<MlpCache<S>> past_key_caches;
  std::vector<GatheredNeighborhood<S>> gathered;
  std::vector<MatX<S>> gathered_keys;  // per frame, (N*k) x D_K
  std::vector<NeighborhoodEntry> tables;
  std::vector<Eigen::Index> past_sizes;
  MatX<S> keys_query;
  AttentionMask<S> attn;
  MatX<S> memory;
  FuseCache<S> fuse_cache;
  bool valid = false;
};

// Full STELA pass: keys -> correlation -> joint softmax -> aggregation ->
// gated fusion. With no past frames the memory tensor is zero and the result
// is fuse(V_t, 0).
template <class S>
MatX<S> stela_forward(const SparseVoxelSet<S>& current,
                      const std::vector<const SparseVoxelSet<S>*>& past,
                      const std::vector<NeighborhoodEntry>& tables,
                      const StelaParams<S>& params, StelaWorkspace<S>* workspace = nullptr,
                      AttentionFlops* flops = nullptr, int threads = 1) {
  params.validate();
  if (past.size() != tables.size())
    throw ConfigError("stela_forward: one table per past frame required");
  const int d = params.feature_dim();
  if (current.feature_dim() != d)
    throw ConfigError("stela_forward: current feature width != params");
  const Eigen::Index n = current.size();

  if (workspace) *workspace = StelaWorkspace<S>{};

  MatX<S> memory;
  AttentionMask<S> attn;
  std::vector<GatheredNeighborhood<S>> gathered;
  std::vector<MatX<S>> gathered_keys;
  std::vector<MaskMat> masks;

  MatX<S> keys_query = compute_keys(current.features, params,
                                    workspace ? &workspace->query_key_cache : nullptr);

  for (std::size_t f = 0; f < past.size(); ++f) {
    const SparseVoxelSet<S>& p = *past[f];
    if (p.size() > 0 && p.feature_dim() != d)
      throw ConfigError("stela_forward: past feature width != params");
    if (tables[f].num_queries() != n)
      throw ConfigError("stela_forward: table row count != current voxel count");
    MlpCache<S> key_cache;
    MatX<S> past_keys =
        p.size() > 0 ? compute_keys(p.features, params, workspace ? &key_cache : nullptr)
                     : MatX<S>(0, params.key_dim());
    if (workspace) workspace->past_key_caches.push_back(std::move(key_cache));

    GatheredNeighborhood<S> g = gather_neighbors(p, tables[f]);
    // Gather rows of the past-key matrix with the same table.
    const int k = tables[f].k;
    MatX<S> local_keys = MatX<S>::Zero(n * k, params.key_dim());
    for (Eigen::Index i = 0; i < n; ++i)
      for (int j = 0; j < tables[f].neighbor_count(i); ++j)
        local_keys.row(i * k + j) = past_keys.row(tables[f].neighbor_indices(i, j));

    masks.push_back(g.mask);
    gathered.push_back(std::move(g));
    gathered_keys.push_back(std::move(local_keys));
  }

  if (!past.empty()) {
    CorrelationBlock<S> block =
        correlate(keys_query, gathered_keys, masks, params.key_dim(), flops, threads);
    attn = attention_softmax(block, threads);
    memory = aggregate_memory(attn, gathered, d, flops, threads);
  } else {
    memory = MatX<S>::Zero(n, d);
  }

  MatX<S> fused = fuse(current.features, memory, params,
                       workspace ? &workspace->fuse_cache : nullptr);

  if (workspace) {
    workspace->gathered = std::move(gathered);
    workspace->gathered_keys = std::move(gathered_keys);
    workspace->tables = tables;
    workspace->past_sizes.clear();
    for (const auto* p : past) workspace->past_sizes.push_back(p->size());
    workspace->keys_query = std::move(keys_query);
    workspace->attn = std::move(attn);
    workspace->memory = memory;
    workspace->valid = true;
  }
  return fused;
}

template <class S>
struct StelaGradients {
  MatX<S> d_current;            // N x D
  std::vector<MatX<S>> d_past;  // per frame, N_past x D
  MlpGrad<S> d_key_adapter;
  MatX<S> d_gate_t_weight;
  VecX<S> d_gate_t_bias;
  MatX<S> d_gate_m_weight;
  VecX<S> d_gate_m_bias;
};

// Analytic gradients of sum(upstream .* V_out) with respect to the current
// features, every past feature matrix, and all StelaParams tensors.
template <class S>
StelaGradients<S> stela_backward(const StelaParams<S>& params, const StelaWorkspace<S>& ws,
                                 const MatX<S>& upstream, int threads = 1) {
  if (!ws.valid) throw UsageError("stela_backward: forward workspace missing");
  const int d = params.feature_dim();
  const Eigen::Index n = upstream.rows();
  if (upstream.cols() != d || ws.fuse_cache.concat.rows() != n)
    throw UsageError("stela_backward: upstream shape does not match forward");

  StelaGradients<S> grads;
  grads.d_key_adapter = MlpGrad<S>::zeros_like(params.key_adapter);

  // Fusion. concat = [V_t ; V_M], gates g = sigmoid(z), z = concat W^T + b.
  const MatX<S> v_current = ws.fuse_cache.concat.leftCols(d);
  const MatX<S> v_memory = ws.fuse_cache.concat.rightCols(d);
  const MatX<S>& gt = ws.fuse_cache.gate_t_sig;
  const MatX<S>& gm = ws.fuse_cache.gate_m_sig;

  MatX<S> dzt = upstream.cwiseProduct(v_current).cwiseProduct(gt).cwiseProduct(
      (MatX<S>::Ones(n, d) - gt));
  MatX<S> dzm = upstream.cwiseProduct(v_memory).cwiseProduct(gm).cwiseProduct(
      (MatX<S>::Ones(n, d) - gm));

  grads.d_gate_t_weight = dzt.transpose() * ws.fuse_cache.concat;
  grads.d_gate_t_bias = dzt.colwise().sum().transpose();
  grads.d_gate_m_weight = dzm.transpose() * ws.fuse_cache.concat;
  grads.d_gate_m_bias = dzm.colwise().sum().transpose();

  MatX<S> d_concat = dzt * params.gate_t.weight + dzm * params.gate_m.weight;
  MatX<S> d_current = upstream.cwiseProduct(gt) + d_concat.leftCols(d);
  MatX<S> d_memory = upstream.cwiseProduct(gm) + d_concat.rightCols(d);

  const std::size_t n_frames = ws.gathered.size();
  grads.d_past.resize(n_frames);

  if (n_frames > 0) {
    const S inv_sqrt = S(1) / static_cast<S>(std::sqrt(static_cast<double>(params.key_dim())));

    // dP and the per-row softmax correction term.
    std::vector<MatX<S>> d_scores(n_frames);
    VecX<S> row_dot = VecX<S>::Zero(n);
    for (std::size_t f = 0; f < n_frames; ++f) {
      const GatheredNeighborhood<S>& g = ws.gathered[f];
      const MatX<S>& p = ws.attn.weights[f];
      MatX<S> dp = MatX<S>::Zero(n, g.k);
      parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t qi = b; qi < e; ++qi) {
          const Eigen::Index i = static_cast<Eigen::Index>(qi);
          for (int j = 0; j < g.k; ++j)
            if (g.mask(i, j)) dp(i, j) = d_memory.row(i).dot(g.features.row(i * g.k + j));
        }
      });
      for (Eigen::Index i = 0; i < n; ++i)
        for (int j = 0; j < g.k; ++j)
          if (g.mask(i, j)) row_dot(i) += dp(i, j) * p(i, j);
      d_scores[f] = std::move(dp);
    }
    for (std::size_t f = 0; f < n_frames; ++f) {
      const GatheredNeighborhood<S>& g = ws.gathered[f];
      const MatX<S>& p = ws.attn.weights[f];
      parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t qi = b; qi < e; ++qi) {
          const Eigen::Index i = static_cast<Eigen::Index>(qi);
          for (int j = 0; j < g.k; ++j)
            d_scores[f](i, j) = g.mask(i, j) ? p(i, j) * (d_scores[f](i, j) - row_dot(i)) : S(0);
        }
      });
    }

    // Correlation, value path, and scatter back to past rows.
    MatX<S> d_keys_query = MatX<S>::Zero(n, params.key_dim());
    for (std::size_t f = 0; f < n_frames; ++f) {
      const GatheredNeighborhood<S>& g = ws.gathered[f];
      const NeighborhoodEntry& table = ws.tables[f];
      const MatX<S>& p = ws.attn.weights[f];
      MatX<S> d_past_keys = MatX<S>::Zero(ws.past_sizes[f], params.key_dim());
      MatX<S> d_past_values = MatX<S>::Zero(ws.past_sizes[f], d);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (int j = 0; j < table.neighbor_count(i); ++j) {
          const std::int32_t row = table.neighbor_indices(i, j);
          const S dc = d_scores[f](i, j) * inv_sqrt;
          d_keys_query.row(i) += dc * ws.gathered_keys[f].row(i * g.k + j);
          d_past_keys.row(row) += dc * ws.keys_query.row(i);
          d_past_values.row(row) += p(i, j) * d_memory.row(i);
        }
      }
      if (ws.past_sizes[f] > 0) {
        MatX<S> d_past_features = mlp_backward(params.key_adapter, ws.past_key_caches[f],
                                               d_past_keys, grads.d_key_adapter);
        d_past_features += d_past_values;
        grads.d_past[f] = std::move(d_past_features);
      } else {
        grads.d_past[f] = MatX<S>(0, d);
      }
    }
    d_current +=
        mlp_backward(params.key_adapter, ws.query_key_cache, d_keys_query, grads.d_key_adapter);
  } else {
    // Query keys were still computed; route their (zero) gradient anyway so
    // shapes stay consistent.
    MatX<S> d_keys_query = MatX<S>::Zero(n, params.key_dim());
    d_current +=
        mlp_backward(params.key_adapter, ws.query_key_cache, d_keys_query, grads.d_key_adapter);
  }

  grads.d_current = std::move(d_current);
  return grads;
}

// Benchmark-side global variant: every past voxel attends to every query,
// joint softmax across frames, same key adapter and fusion. Used to measure
// what the local neighborhood saves.
template <class S>
MatX<S> global_attention_forward(const SparseVoxelSet<S>& current,
                                 const std::vector<const SparseVoxelSet<S>*>& past,
                                 const StelaParams<S>& params,
                                 AttentionFlops* flops = nullptr, int threads = 1) {
  params.validate();
  const int d = params.feature_dim();
  const Eigen::Index n = current.size();
  MatX<S> keys_query = compute_keys(current.features, params);
  const S inv_sqrt = S(1) / static_cast<S>(std::sqrt(static_cast<double>(params.key_dim())));

  std::vector<MatX<S>> scores(past.size());
  std::uint64_t pairs = 0;
  for (std::size_t f = 0; f < past.size(); ++f) {
    const SparseVoxelSet<S>& p = *past[f];
    MatX<S> past_keys = p.size() > 0 ? compute_keys(p.features, params)
                                     : MatX<S>(0, params.key_dim());
    MatX<S>& s = scores[f];
    s.resize(n, p.size());
    parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t qi = b; qi < e; ++qi) {
        const Eigen::Index i = static_cast<Eigen::Index>(qi);
        for (Eigen::Index j = 0; j < p.size(); ++j)
          s(i, j) = keys_query.row(i).dot(past_keys.row(j)) * inv_sqrt;
      }
    });
    pairs += static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(p.size());
  }
  if (flops) flops->correlation += pairs * 2ull * static_cast<std::uint64_t>(params.key_dim());

  MatX<S> memory = MatX<S>::Zero(n, d);
  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t qi = b; qi < e; ++qi) {
      const Eigen::Index i = static_cast<Eigen::Index>(qi);
      S max_score = -std::numeric_limits<S>::infinity();
      for (const MatX<S>& s : scores)
        for (Eigen::Index j = 0; j < s.cols(); ++j)
          if (s(i, j) > max_score) max_score = s(i, j);
      if (max_score == -std::numeric_limits<S>::infinity()) continue;
      S denom = S(0);
      for (const MatX<S>& s : scores)
        for (Eigen::Index j = 0; j < s.cols(); ++j) denom += std::exp(s(i, j) - max_score);
      for (std::size_t f = 0; f < past.size(); ++f) {
        const MatX<S>& s = scores[f];
        for (Eigen::Index j = 0; j < s.cols(); ++j)
          memory.row(i) += (std::exp(s(i, j) - max_score) / denom) * past[f]->features.row(j);
      }
    }
  });
  std::uint64_t weighted = 0;
  for (const auto* p : past) weighted += static_cast<std::uint64_t>(n) * p->size();
  if (flops) flops->aggregation += weighted * 2ull * static_cast<std::uint64_t>(d);

  return fuse(current.features, memory, params);
}

}  // namespace stela
