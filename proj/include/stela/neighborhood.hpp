#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <unordered_map>
#include <vector>

#include "stela/common.hpp"
#include "stela/error.hpp"
#include "stela/parallel.hpp"
#include "stela/sparse_grid.hpp"

namespace stela {

// K nearest past voxels per query voxel, one entry per past frame. Distances
// are Euclidean over raw integer grid indices; comparisons happen on exact
// squared values, ties broken by the smaller past row. Padding slots past
// neighbor_count hold index -1 and squared distance -1.
struct NeighborhoodEntry {
  Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> neighbor_indices;
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> squared_distances;
  VecX<std::int32_t> neighbor_count;
  int k = 0;

  Eigen::Index num_queries() const { return neighbor_indices.rows(); }

  double distance(Eigen::Index i, int j) const {
    return std::sqrt(static_cast<double>(squared_distances(i, j)));
  }
};

namespace detail {

inline std::int64_t squared_index_distance(const std::int32_t* a, const std::int32_t* b) {
  // Index spans in any realistic grid keep this far from overflow.
  const std::int64_t d0 = static_cast<std::int64_t>(a[0]) - b[0];
  const std::int64_t d1 = static_cast<std::int64_t>(a[1]) - b[1];
  const std::int64_t d2 = static_cast<std::int64_t>(a[2]) - b[2];
  return d0 * d0 + d1 * d1 + d2 * d2;
}

struct CellKey {
  std::array<std::int32_t, 3> v;
  bool operator==(const CellKey& o) const { return v == o.v; }
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& key) const {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (std::int32_t x : key.v) {
      h ^= static_cast<std::uint32_t>(x) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
      h *= 0xff51afd7ed558ccdULL;
    }
    return static_cast<std::size_t>(h);
  }
};

// (squared distance, past row), ordered lexicographically; the heap keeps the
// current worst at the root.
struct Candidate {
  std::int64_t d2;
  std::int32_t row;
  bool operator<(const Candidate& o) const {
    return d2 != o.d2 ? d2 < o.d2 : row < o.row;
  }
};

}  // namespace detail

// One-cell-per-voxel spatial hash over integer index triples.
class IndexHash {
 public:
  explicit IndexHash(const IndexMat& indices) {
    cells_.reserve(static_cast<std::size_t>(indices.rows()));
    for (Eigen::Index i = 0; i < indices.rows(); ++i) {
      detail::CellKey key{{indices(i, 0), indices(i, 1), indices(i, 2)}};
      cells_[key].push_back(static_cast<std::int32_t>(i));
      for (int a = 0; a < 3; ++a) {
        lo_[a] = std::min(lo_[a], indices(i, a));
        hi_[a] = std::max(hi_[a], indices(i, a));
      }
    }
  }

  bool empty() const { return cells_.empty(); }

  const std::vector<std::int32_t>* cell(std::int32_t h, std::int32_t w, std::int32_t l) const {
    auto it = cells_.find(detail::CellKey{{h, w, l}});
    return it == cells_.end() ? nullptr : &it->second;
  }

  // Largest Chebyshev distance from q to any occupied cell; rings past this
  // cannot contain points.
  std::int64_t max_ring(const std::int32_t* q) const {
    std::int64_t r = 0;
    for (int a = 0; a < 3; ++a) {
      r = std::max<std::int64_t>(r, std::abs(static_cast<std::int64_t>(q[a]) - lo_[a]));
      r = std::max<std::int64_t>(r, std::abs(static_cast<std::int64_t>(q[a]) - hi_[a]));
    }
    return r;
  }

 private:
  std::unordered_map<detail::CellKey, std::vector<std::int32_t>, detail::CellKeyHash> cells_;
  std::int32_t lo_[3] = {std::numeric_limits<std::int32_t>::max(),
                         std::numeric_limits<std::int32_t>::max(),
                         std::numeric_limits<std::int32_t>::max()};
  std::int32_t hi_[3] = {std::numeric_limits<std::int32_t>::min(),
                         std::numeric_limits<std::int32_t>::min(),
                         std::numeric_limits<std::int32_t>::min()};
};

namespace detail {

inline NeighborhoodEntry make_entry(Eigen::Index n_query, int k) {
  NeighborhoodEntry entry;
  entry.k = k;
  entry.neighbor_indices.setConstant(n_query, k, -1);
  entry.squared_distances.setConstant(n_query, k, -1);
  entry.neighbor_count = VecX<std::int32_t>::Zero(n_query);
  return entry;
}

inline void write_row(NeighborhoodEntry& entry, Eigen::Index i,
                      std::vector<Candidate>& selected) {
  std::sort(selected.begin(), selected.end());
  entry.neighbor_count(i) = static_cast<std::int32_t>(selected.size());
  for (std::size_t j = 0; j < selected.size(); ++j) {
    entry.neighbor_indices(i, static_cast<Eigen::Index>(j)) = selected[j].row;
    entry.squared_distances(i, static_cast<Eigen::Index>(j)) = selected[j].d2;
  }
}

}  // namespace detail

// Reference implementation: full distance matrix per query row plus a stable
// sort. This is the contract the accelerated path is tested against.
template <class S>
NeighborhoodEntry knn_bruteforce(const SparseVoxelSet<S>& query, const SparseVoxelSet<S>& past,
                                 int k) {
  if (k < 1) throw ConfigError("knn: k must be >= 1");
  const Eigen::Index n = query.size();
  const Eigen::Index m = past.size();
  NeighborhoodEntry entry = detail::make_entry(n, k);
  if (m == 0) return entry;

  std::vector<detail::Candidate> all(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j)
      all[static_cast<std::size_t>(j)] = detail::Candidate{
          detail::squared_index_distance(query.indices.row(i).data(), past.indices.row(j).data()),
          static_cast<std::int32_t>(j)};
    std::stable_sort(all.begin(), all.end(),
                     [](const detail::Candidate& a, const detail::Candidate& b) {
                       return a.d2 < b.d2;
                     });
    std::vector<detail::Candidate> selected(
        all.begin(), all.begin() + std::min<Eigen::Index>(k, m));
    detail::write_row(entry, i, selected);
  }
  return entry;
}

// Accelerated path: spatial hash with Chebyshev ring expansion. A cell on
// ring r is at least r away in Euclidean index distance, so expansion stops
// once the heap holds k candidates and r^2 exceeds the current worst squared
// distance (rings with r^2 equal to it can still win ties and are processed).
template <class S>
NeighborhoodEntry knn_neighborhood(const SparseVoxelSet<S>& query, const SparseVoxelSet<S>& past,
                                   int k, int threads = 1) {
  if (k < 1) throw ConfigError("knn: k must be >= 1");
  const Eigen::Index n = query.size();
  NeighborhoodEntry entry = detail::make_entry(n, k);
  if (past.size() == 0) return entry;

  const IndexHash hash(past.indices);

  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t begin, std::size_t end) {
    std::vector<detail::Candidate> heap;
    heap.reserve(static_cast<std::size_t>(k) + 1);
    for (std::size_t qi = begin; qi < end; ++qi) {
      const Eigen::Index i = static_cast<Eigen::Index>(qi);
      const std::int32_t q[3] = {query.indices(i, 0), query.indices(i, 1), query.indices(i, 2)};
      heap.clear();

      auto consider_cell = [&](std::int32_t h, std::int32_t w, std::int32_t l) {
        const std::vector<std::int32_t>* rows = hash.cell(h, w, l);
        if (!rows) return;
        for (std::int32_t row : *rows) {
          detail::Candidate cand{
              detail::squared_index_distance(q, past.indices.row(row).data()), row};
          if (heap.size() < static_cast<std::size_t>(k)) {
            heap.push_back(cand);
            std::push_heap(heap.begin(), heap.end());
          } else if (cand < heap.front()) {
            std::pop_heap(heap.begin(), heap.end());
            heap.back() = cand;
            std::push_heap(heap.begin(), heap.end());
          }
        }
      };

      const std::int64_t r_max = hash.max_ring(q);
      for (std::int64_t r = 0; r <= r_max; ++r) {
        if (heap.size() == static_cast<std::size_t>(k) && r * r > heap.front().d2) break;
        const std::int32_t ri = static_cast<std::int32_t>(r);
        if (r == 0) {
          consider_cell(q[0], q[1], q[2]);
          continue;
        }
        for (std::int32_t dh = -ri; dh <= ri; ++dh)
          for (std::int32_t dw = -ri; dw <= ri; ++dw) {
            if (std::max(std::abs(dh), std::abs(dw)) == ri) {
              for (std::int32_t dl = -ri; dl <= ri; ++dl)
                consider_cell(q[0] + dh, q[1] + dw, q[2] + dl);
            } else {
              consider_cell(q[0] + dh, q[1] + dw, q[2] - ri);
              consider_cell(q[0] + dh, q[1] + dw, q[2] + ri);
            }
          }
      }

      std::vector<detail::Candidate> selected(heap.begin(), heap.end());
      detail::write_row(entry, i, selected);
    }
  });
  return entry;
}

// Neighbor features/indices copied into contiguous N*k blocks; mask marks
// valid slots, everything else zero-filled.
template <class S>
struct GatheredNeighborhood {
  MatX<S> features;   // (N*k) x D, row i*k+j
  IndexMat indices;   // (N*k) x 3
  MaskMat mask;       // N x k
  int k = 0;

  Eigen::Index num_queries() const { return mask.rows(); }
};

template <class S>
GatheredNeighborhood<S> gather_neighbors(const SparseVoxelSet<S>& past,
                                         const NeighborhoodEntry& entry) {
  const Eigen::Index n = entry.num_queries();
  const int k = entry.k;
  const int d = past.size() > 0 ? past.feature_dim() : static_cast<int>(past.features.cols());
  GatheredNeighborhood<S> out;
  out.k = k;
  out.features = MatX<S>::Zero(n * k, d);
  out.indices = IndexMat::Zero(n * k, 3);
  out.mask = MaskMat::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < entry.neighbor_count(i); ++j) {
      const std::int32_t row = entry.neighbor_indices(i, j);
      if (row < 0 || row >= past.size())
        throw DataError("gather_neighbors: table references past row " + std::to_string(row) +
                        " outside [0, " + std::to_string(past.size()) + ")");
      out.features.row(i * k + j) = past.features.row(row);
      out.indices.row(i * k + j) = past.indices.row(row);
      out.mask(i, j) = 1;
    }
  }
  return out;
}

// Debug dump, one row per (query, past frame, rank): i, n, j_rank, past_row,
// distance. `entries[n-1]` holds the table for frame t-n.
inline void dump_neighborhood_csv(std::ostream& os,
                                  const std::vector<NeighborhoodEntry>& entries) {
  os << "i,n,j_rank,past_row,distance\n";
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const NeighborhoodEntry& entry = entries[e];
    for (Eigen::Index i = 0; i < entry.num_queries(); ++i)
      for (int j = 0; j < entry.neighbor_count(i); ++j)
        os << i << ',' << (e + 1) << ',' << j << ',' << entry.neighbor_indices(i, j) << ','
           << entry.distance(i, j) << '\n';
  }
}

}  // namespace stela
