#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "stela/common.hpp"
#include "stela/error.hpp"
#include "stela/geometry.hpp"
#include "stela/mlp.hpp"

namespace stela {

// Cylindrical voxel grid: H bins over range, W over azimuth, L over height.
struct GridConfig {
  double rho_min = 0.0;
  double rho_max = 50.0;
  double z_min = -4.0;
  double z_max = 2.0;
  int h = 240;  // range bins
  int w = 180;  // azimuth bins
  int l = 16;   // height bins
  int feature_dim = 32;

  void validate() const {
    if (!(rho_max > rho_min) || rho_min < 0.0) throw ConfigError("grid: bad rho bounds");
    if (!(z_max > z_min)) throw ConfigError("grid: bad z bounds");
    if (h < 1 || w < 1 || l < 1) throw ConfigError("grid: resolution must be >= 1");
    if (feature_dim < 1) throw ConfigError("grid: feature_dim must be >= 1");
  }

  double delta_rho() const { return (rho_max - rho_min) / h; }
  double delta_theta() const { return 2.0 * kPi / w; }
  double delta_z() const { return (z_max - z_min) / l; }
  std::size_t num_cells() const {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w) *
           static_cast<std::size_t>(l);
  }
};

// Bins a cylindrical coordinate; rho/z outside the half-open bounds yield
// nullopt. theta is always in range, but floor((theta+pi)/delta) can land on
// w when theta+pi rounds up to 2*pi, so bins are clamped to the last cell.
inline std::optional<Index3> voxel_index(const CylCoord& cyl, const GridConfig& cfg) {
  if (cyl.rho < cfg.rho_min || cyl.rho >= cfg.rho_max) return std::nullopt;
  if (cyl.z < cfg.z_min || cyl.z >= cfg.z_max) return std::nullopt;
  auto bin = [](double value, double lo, double delta, int n) {
    const int b = static_cast<int>(std::floor((value - lo) / delta));
    return std::min(std::max(b, 0), n - 1);
  };
  Index3 idx;
  idx[0] = bin(cyl.rho, cfg.rho_min, cfg.delta_rho(), cfg.h);
  idx[1] = bin(cyl.theta, -kPi, cfg.delta_theta(), cfg.w);
  idx[2] = bin(cyl.z, cfg.z_min, cfg.delta_z(), cfg.l);
  return idx;
}

namespace detail {
inline bool index_less(const std::int32_t* a, const std::int32_t* b) {
  if (a[0] != b[0]) return a[0] < b[0];
  if (a[1] != b[1]) return a[1] < b[1];
  return a[2] < b[2];
}
}  // namespace detail

// Pseudo-point cloud: features V (N x D) paired with grid indices I (N x 3),
// rows unique and sorted lexicographically by (h, w, l).
template <class S>
struct SparseVoxelSet {
  MatX<S> features;  // N x D
  IndexMat indices;  // N x 3

  Eigen::Index size() const { return features.rows(); }
  int feature_dim() const { return static_cast<int>(features.cols()); }

  void validate(const GridConfig* cfg = nullptr) const {
    if (features.rows() != indices.rows()) throw DataError("sparse set: V/I row mismatch");
    if (!features.allFinite()) throw DataError("sparse set: non-finite features");
    for (Eigen::Index i = 0; i < indices.rows(); ++i) {
      if (i > 0 && !detail::index_less(indices.row(i - 1).data(), indices.row(i).data())) {
        throw DataError("sparse set: index rows not strictly sorted/unique");
      }
      if (cfg) {
        if (indices(i, 0) < 0 || indices(i, 0) >= cfg->h || indices(i, 1) < 0 ||
            indices(i, 1) >= cfg->w || indices(i, 2) < 0 || indices(i, 2) >= cfg->l)
          throw DataError("sparse set: index out of grid bounds");
      }
    }
  }
};

// Dense counterpart, shape D x H x W x L, flat channel-major storage.
template <class S>
struct DenseGrid {
  GridConfig cfg;
  std::vector<S> values;

  static DenseGrid zeros(const GridConfig& cfg) {
    cfg.validate();
    DenseGrid g;
    g.cfg = cfg;
    g.values.assign(static_cast<std::size_t>(cfg.feature_dim) * cfg.num_cells(), S(0));
    return g;
  }

  std::size_t offset(int d, int h, int w, int l) const {
    return ((static_cast<std::size_t>(d) * cfg.h + h) * cfg.w + w) * cfg.l + l;
  }
  S& at(int d, int h, int w, int l) { return values[offset(d, h, w, l)]; }
  S at(int d, int h, int w, int l) const { return values[offset(d, h, w, l)]; }
};

// --- encode_points -----------------------------------------------------------

// Retained by encode_points when a backward pass will follow: the per-point
// MLP cache plus, per voxel channel, which point supplied the max.
template <class S>
struct EncodeCache {
  MlpCache<S> mlp;
  MatX<S> point_outputs;                                         // M x D
  Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax;  // N x D
  std::size_t num_points = 0;
};

// Runs every point feature through the encoder MLP and max-reduces points
// sharing a voxel. `assignments` must pair one-to-one with `points`
// (out-of-bounds points are dropped upstream). The max-reduction plus sorted
// output rows make the result bit-identical under input permutation.
template <class S>
SparseVoxelSet<S> encode_points(const std::vector<PointFeature>& points,
                                const std::vector<Index3>& assignments, const Mlp<S>& mlp,
                                const GridConfig& cfg, EncodeCache<S>* cache = nullptr,
                                std::vector<std::int32_t>* point_to_voxel = nullptr) {
  cfg.validate();
  mlp.validate();
  if (points.size() != assignments.size())
    throw ConfigError("encode_points: points/assignments length mismatch");
  if (mlp.input_dim() != kPointFeatureDim)
    throw ConfigError("encode_points: encoder expects width-" +
                      std::to_string(mlp.input_dim()) + " input, point features are width-" +
                      std::to_string(kPointFeatureDim));
  if (mlp.output_dim() != cfg.feature_dim)
    throw ConfigError("encode_points: encoder output width != grid feature_dim");

  const Eigen::Index m = static_cast<Eigen::Index>(points.size());
  const int d = cfg.feature_dim;

  MatX<S> input(m, kPointFeatureDim);
  for (Eigen::Index i = 0; i < m; ++i)
    for (int c = 0; c < kPointFeatureDim; ++c) input(i, c) = static_cast<S>(points[i].v[c]);
  MatX<S> outputs = mlp_forward(mlp, input, cache ? &cache->mlp : nullptr);

  // Group points by voxel: sort point ids by (index triple, point id).
  std::vector<std::int64_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    const Index3& ia = assignments[a];
    const Index3& ib = assignments[b];
    if (ia[0] != ib[0]) return ia[0] < ib[0];
    if (ia[1] != ib[1]) return ia[1] < ib[1];
    if (ia[2] != ib[2]) return ia[2] < ib[2];
    return a < b;
  });

  auto same_index = [](const Index3& a, const Index3& b) {
    return a[0] == b[0] && a[1] == b[1] && a[2] == b[2];
  };
  std::vector<Eigen::Index> run_starts;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i == 0 || !same_index(assignments[order[i]], assignments[order[i - 1]]))
      run_starts.push_back(static_cast<Eigen::Index>(i));
  }

  const Eigen::Index n = static_cast<Eigen::Index>(run_starts.size());
  SparseVoxelSet<S> out;
  out.features.resize(n, d);
  out.indices.resize(n, 3);
  if (cache) {
    cache->point_outputs = outputs;
    cache->num_points = points.size();
    cache->argmax.resize(n, d);
  }
  if (point_to_voxel) point_to_voxel->assign(points.size(), -1);

  for (Eigen::Index v = 0; v < n; ++v) {
    const Eigen::Index begin = run_starts[v];
    const Eigen::Index end =
        (v + 1 < n) ? run_starts[v + 1] : static_cast<Eigen::Index>(order.size());
    if (point_to_voxel)
      for (Eigen::Index j = begin; j < end; ++j)
        (*point_to_voxel)[static_cast<std::size_t>(order[j])] = static_cast<std::int32_t>(v);
    const Index3& idx = assignments[order[begin]];
    if (idx[0] < 0 || idx[0] >= cfg.h || idx[1] < 0 || idx[1] >= cfg.w || idx[2] < 0 ||
        idx[2] >= cfg.l)
      throw DataError("encode_points: assignment outside grid bounds");
    out.indices.row(v) << idx[0], idx[1], idx[2];
    for (int c = 0; c < d; ++c) {
      S best = outputs(order[begin], c);
      std::int64_t best_point = order[begin];
      for (Eigen::Index j = begin + 1; j < end; ++j) {
        const S val = outputs(order[j], c);
        if (val > best) {
          best = val;
          best_point = order[j];
        }
      }
      out.features(v, c) = best;
      if (cache) cache->argmax(v, c) = static_cast<std::int32_t>(best_point);
    }
  }
  return out;
}

// Routes per-voxel gradients back to the winning points and through the
// encoder MLP, accumulating parameter gradients.
template <class S>
void encode_points_backward(const Mlp<S>& mlp, const EncodeCache<S>& cache,
                            const MatX<S>& d_voxels, MlpGrad<S>& grad) {
  if (cache.argmax.rows() != d_voxels.rows() || cache.argmax.cols() != d_voxels.cols())
    throw UsageError("encode_points_backward: cache does not match gradient shape");
  MatX<S> d_outputs = MatX<S>::Zero(static_cast<Eigen::Index>(cache.num_points),
                                    d_voxels.cols());
  for (Eigen::Index v = 0; v < d_voxels.rows(); ++v)
    for (Eigen::Index c = 0; c < d_voxels.cols(); ++c)
      d_outputs(cache.argmax(v, c), c) += d_voxels(v, c);
  mlp_backward(mlp, cache.mlp, d_outputs, grad);
}

// --- decompose / densify -----------------------------------------------------

// Emits exactly the voxels whose feature vector is not all-zero, sorted.
template <class S>
SparseVoxelSet<S> decompose(const DenseGrid<S>& grid) {
  const GridConfig& cfg = grid.cfg;
  std::vector<Index3> hits;
  for (int h = 0; h < cfg.h; ++h)
    for (int w = 0; w < cfg.w; ++w)
      for (int l = 0; l < cfg.l; ++l) {
        bool nonzero = false;
        for (int d = 0; d < cfg.feature_dim && !nonzero; ++d)
          nonzero = grid.at(d, h, w, l) != S(0);
        if (nonzero) hits.push_back(Index3(h, w, l));
      }
  SparseVoxelSet<S> out;
  out.features.resize(static_cast<Eigen::Index>(hits.size()), cfg.feature_dim);
  out.indices.resize(static_cast<Eigen::Index>(hits.size()), 3);
  for (std::size_t i = 0; i < hits.size(); ++i) {
    out.indices.row(static_cast<Eigen::Index>(i)) << hits[i][0], hits[i][1], hits[i][2];
    for (int d = 0; d < cfg.feature_dim; ++d)
      out.features(static_cast<Eigen::Index>(i), d) = grid.at(d, hits[i][0], hits[i][1], hits[i][2]);
  }
  return out;
}

template <class S>
DenseGrid<S> densify(const SparseVoxelSet<S>& sparse, const GridConfig& cfg) {
  if (sparse.feature_dim() != cfg.feature_dim)
    throw ConfigError("densify: feature_dim mismatch");
  DenseGrid<S> grid = DenseGrid<S>::zeros(cfg);
  std::vector<std::uint8_t> seen(cfg.num_cells(), 0);
  for (Eigen::Index i = 0; i < sparse.size(); ++i) {
    const int h = sparse.indices(i, 0);
    const int w = sparse.indices(i, 1);
    const int l = sparse.indices(i, 2);
    if (h < 0 || h >= cfg.h || w < 0 || w >= cfg.w || l < 0 || l >= cfg.l)
      throw DataError("densify: index outside grid");
    const std::size_t cell = (static_cast<std::size_t>(h) * cfg.w + w) * cfg.l + l;
    if (seen[cell]) throw DataError("densify: duplicate voxel index");
    seen[cell] = 1;
    for (int d = 0; d < cfg.feature_dim; ++d) grid.at(d, h, w, l) = sparse.features(i, d);
  }
  return grid;
}

// --- cache container ---------------------------------------------------------
// Layout: u8 version, u64 N, u32 D, N int32 index triples, N float32 feature
// rows; all little-endian. Features narrow to float32 on disk.

inline constexpr std::uint8_t kSparseSetFormatVersion = 1;

template <class S>
std::vector<char> encode_sparse_set(const SparseVoxelSet<S>& set) {
  const std::uint64_t n = static_cast<std::uint64_t>(set.size());
  const std::uint32_t d = static_cast<std::uint32_t>(set.feature_dim());
  std::vector<char> bytes;
  bytes.reserve(1 + 8 + 4 + n * (12 + 4ull * d));
  bytes.push_back(static_cast<char>(kSparseSetFormatVersion));
  auto append = [&bytes](const void* src, std::size_t len) {
    const char* p = static_cast<const char*>(src);
    bytes.insert(bytes.end(), p, p + len);
  };
  append(&n, 8);
  append(&d, 4);
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    std::int32_t idx[3] = {set.indices(i, 0), set.indices(i, 1), set.indices(i, 2)};
    append(idx, 12);
  }
  for (Eigen::Index i = 0; i < set.size(); ++i)
    for (std::uint32_t c = 0; c < d; ++c) {
      const float f = static_cast<float>(set.features(i, c));
      append(&f, 4);
    }
  return bytes;
}

template <class S>
SparseVoxelSet<S> decode_sparse_set(const char* data, std::size_t size) {
  if (size < 13) throw FormatError("sparse-set container: truncated header");
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t len) {
    if (pos + len > size) throw FormatError("sparse-set container: truncated payload");
    std::memcpy(dst, data + pos, len);
    pos += len;
  };
  std::uint8_t version;
  take(&version, 1);
  if (version != kSparseSetFormatVersion)
    throw FormatError("sparse-set container: unsupported version " + std::to_string(version));
  std::uint64_t n;
  std::uint32_t d;
  take(&n, 8);
  take(&d, 4);
  if (size != 13 + n * (12 + 4ull * d))
    throw FormatError("sparse-set container: size does not match header");
  SparseVoxelSet<S> set;
  set.indices.resize(static_cast<Eigen::Index>(n), 3);
  set.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::uint64_t i = 0; i < n; ++i) {
    std::int32_t idx[3];
    take(idx, 12);
    set.indices.row(static_cast<Eigen::Index>(i)) << idx[0], idx[1], idx[2];
  }
  for (std::uint64_t i = 0; i < n; ++i)
    for (std::uint32_t c = 0; c < d; ++c) {
      float f;
      take(&f, 4);
      set.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
          static_cast<S>(f);
    }
  return set;
}

template <class S>
void save_sparse_set(const std::filesystem::path& path, const SparseVoxelSet<S>& set) {
  const std::vector<char> bytes = encode_sparse_set(set);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

template <class S>
SparseVoxelSet<S> load_sparse_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_sparse_set<S>(bytes.data(), bytes.size());
}

}  // namespace stela
