#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "stela/rng.hpp"
#include "stela/sparse_grid.hpp"
#include "test_util.hpp"

using namespace stela;

namespace {

GridConfig ablation_grid() {
  GridConfig cfg;
  cfg.rho_min = 0.0;
  cfg.rho_max = 50.0;
  cfg.z_min = -4.0;
  cfg.z_max = 2.0;
  cfg.h = 240;
  cfg.w = 180;
  cfg.l = 16;
  cfg.feature_dim = 4;
  return cfg;
}

DenseGrid<double> random_grid(Rng& rng, const GridConfig& cfg, double density) {
  DenseGrid<double> grid = DenseGrid<double>::zeros(cfg);
  for (int h = 0; h < cfg.h; ++h)
    for (int w = 0; w < cfg.w; ++w)
      for (int l = 0; l < cfg.l; ++l)
        if (rng.uniform() < density)
          for (int d = 0; d < cfg.feature_dim; ++d)
            grid.at(d, h, w, l) = rng.uniform(-1.0, 1.0) + 0.1;  // never exactly zero
  return grid;
}

}  // namespace

TEST_CASE("voxel_index bins the ablation grid") {
  const GridConfig cfg = ablation_grid();

  auto corner = voxel_index(CylCoord{0.0, -kPi, -4.0}, cfg);
  REQUIRE(corner.has_value());
  CHECK((*corner)[0] == 0);
  CHECK((*corner)[1] == 0);
  CHECK((*corner)[2] == 0);

  auto last_rho = voxel_index(CylCoord{49.999, 0.0, 0.0}, cfg);
  REQUIRE(last_rho.has_value());
  CHECK((*last_rho)[0] == 239);

  CHECK_FALSE(voxel_index(CylCoord{50.0, 0.0, 0.0}, cfg).has_value());
  CHECK_FALSE(voxel_index(CylCoord{10.0, 0.0, 2.0}, cfg).has_value());
  CHECK_FALSE(voxel_index(CylCoord{10.0, 0.0, -4.0001}, cfg).has_value());

  // theta is never out of bounds; just below the seam lands in the last bin.
  auto seam = voxel_index(CylCoord{10.0, std::nextafter(kPi, 0.0), 0.0}, cfg);
  REQUIRE(seam.has_value());
  CHECK((*seam)[1] == cfg.w - 1);
}

TEST_CASE("encode_points with an identity network") {
  GridConfig cfg;
  cfg.feature_dim = kPointFeatureDim;
  cfg.h = cfg.w = cfg.l = 4;
  const Mlp<double> id = identity_mlp<double>(kPointFeatureDim);

  SECTION("single point passes through") {
    std::vector<PointFeature> pts = {PointFeature{{1, 2, 3, 4, 5, 6}}};
    std::vector<Index3> idx = {Index3(1, 2, 3)};
    SparseVoxelSet<double> set = encode_points(pts, idx, id, cfg);
    REQUIRE(set.size() == 1);
    for (int c = 0; c < kPointFeatureDim; ++c) CHECK(set.features(0, c) == pts[0].v[c]);
    CHECK(set.indices(0, 0) == 1);
  }

  SECTION("one-hot features in a shared voxel max to their sum") {
    std::vector<PointFeature> pts = {PointFeature{{1, 0, 0, 0, 0, 0}},
                                     PointFeature{{0, 1, 0, 0, 0, 0}}};
    std::vector<Index3> idx = {Index3(0, 0, 0), Index3(0, 0, 0)};
    SparseVoxelSet<double> set = encode_points(pts, idx, id, cfg);
    REQUIRE(set.size() == 1);
    CHECK(set.features(0, 0) == 1.0);
    CHECK(set.features(0, 1) == 1.0);
    for (int c = 2; c < kPointFeatureDim; ++c) CHECK(set.features(0, c) == 0.0);
  }
}

TEST_CASE("encode_points matches the scalar loop oracle") {
  GridConfig cfg;
  cfg.feature_dim = 8;
  cfg.h = cfg.w = cfg.l = 8;
  const Mlp<double> mlp = make_mlp<double>({kPointFeatureDim, 16, 32, 16, 8}, 99, "enc");

  Rng rng(5);
  std::vector<PointFeature> pts;
  std::vector<Index3> idx;
  for (int i = 0; i < 3; ++i) {
    PointFeature f;
    for (double& v : f.v) v = rng.uniform(-2.0, 2.0);
    pts.push_back(f);
    idx.push_back(Index3(i, 0, 0));  // distinct voxels: encoder output visible directly
  }
  SparseVoxelSet<double> set = encode_points(pts, idx, mlp, cfg);
  REQUIRE(set.size() == 3);
  for (int i = 0; i < 3; ++i) {
    const std::vector<double> expect =
        testutil::mlp_loop_oracle(mlp, {pts[i].v, pts[i].v + kPointFeatureDim});
    for (int c = 0; c < 8; ++c)
      CHECK(std::abs(set.features(i, c) - expect[static_cast<std::size_t>(c)]) < 1e-6);
  }
}

TEST_CASE("encode_points is permutation invariant and bounded") {
  GridConfig cfg;
  cfg.feature_dim = 6;
  cfg.h = cfg.w = cfg.l = 3;
  const Mlp<double> mlp = make_mlp<double>({kPointFeatureDim, 12, 6}, 3, "enc");

  Rng rng(17);
  std::vector<PointFeature> pts;
  std::vector<Index3> idx;
  for (int i = 0; i < 40; ++i) {
    PointFeature f;
    for (double& v : f.v) v = rng.uniform(-1.0, 1.0);
    pts.push_back(f);
    idx.push_back(Index3(static_cast<std::int32_t>(rng.uniform_index(3)),
                         static_cast<std::int32_t>(rng.uniform_index(3)),
                         static_cast<std::int32_t>(rng.uniform_index(3))));
  }
  SparseVoxelSet<double> a = encode_points(pts, idx, mlp, cfg);
  a.validate(&cfg);
  CHECK(a.size() <= 40);
  CHECK(a.size() <= cfg.h * cfg.w * cfg.l);

  // Reverse the input order: output must be bit-identical.
  std::vector<PointFeature> rpts(pts.rbegin(), pts.rend());
  std::vector<Index3> ridx(idx.rbegin(), idx.rend());
  SparseVoxelSet<double> b = encode_points(rpts, ridx, mlp, cfg);
  REQUIRE(b.size() == a.size());
  CHECK(testutil::mat_equal(a.indices, b.indices));
  CHECK(testutil::mat_equal(a.features, b.features));
}

TEST_CASE("encode_points rejects mismatched dimensions") {
  GridConfig cfg;
  cfg.feature_dim = 5;
  const Mlp<double> wrong_out = make_mlp<double>({kPointFeatureDim, 8, 4}, 1, "enc");
  CHECK_THROWS_AS(encode_points({}, {}, wrong_out, cfg), ConfigError);
  const Mlp<double> wrong_in = make_mlp<double>({4, 8, 5}, 1, "enc");
  CHECK_THROWS_AS(encode_points({}, {}, wrong_in, cfg), ConfigError);
}

TEST_CASE("decompose and densify basics") {
  GridConfig cfg;
  cfg.feature_dim = 2;
  cfg.h = cfg.w = cfg.l = 2;

  DenseGrid<double> zeros = DenseGrid<double>::zeros(cfg);
  CHECK(decompose(zeros).size() == 0);

  DenseGrid<double> grid = DenseGrid<double>::zeros(cfg);
  grid.at(0, 0, 0, 0) = 1.0;
  grid.at(1, 1, 1, 1) = 2.0;
  SparseVoxelSet<double> sparse = decompose(grid);
  REQUIRE(sparse.size() == 2);
  CHECK(sparse.indices(0, 0) == 0);
  CHECK(sparse.indices(1, 0) == 1);
  CHECK(sparse.features(0, 0) == 1.0);
  CHECK(sparse.features(1, 1) == 2.0);

  DenseGrid<double> back = densify(sparse, cfg);
  CHECK(back.values == grid.values);

  // N=0 densifies to all zeros.
  SparseVoxelSet<double> empty;
  empty.features.resize(0, 2);
  empty.indices.resize(0, 3);
  DenseGrid<double> z = densify(empty, cfg);
  for (double v : z.values) CHECK(v == 0.0);
}

TEST_CASE("sparse/dense round trips are exact") {
  GridConfig cfg;
  cfg.feature_dim = 3;
  cfg.h = 6;
  cfg.w = 5;
  cfg.l = 4;
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    DenseGrid<double> grid = random_grid(rng, cfg, 0.05);
    SparseVoxelSet<double> sparse = decompose(grid);
    sparse.validate(&cfg);
    DenseGrid<double> back = densify(sparse, cfg);
    REQUIRE(back.values == grid.values);  // exact, not approximate

    SparseVoxelSet<double> again = decompose(back);
    REQUIRE(again.size() == sparse.size());
    CHECK(testutil::mat_equal(again.indices, sparse.indices));
    CHECK(testutil::mat_equal(again.features, sparse.features));
  }
}

TEST_CASE("densify rejects duplicates and out-of-range indices") {
  GridConfig cfg;
  cfg.feature_dim = 1;
  cfg.h = cfg.w = cfg.l = 2;
  SparseVoxelSet<double> s;
  s.features.resize(2, 1);
  s.features << 1.0, 2.0;
  s.indices.resize(2, 3);
  s.indices << 0, 0, 0, 0, 0, 0;
  CHECK_THROWS_AS(densify(s, cfg), DataError);

  s.indices << 0, 0, 0, 0, 0, 5;
  CHECK_THROWS_AS(densify(s, cfg), DataError);
}

TEST_CASE("sparse set container round trips") {
  Rng rng(77);
  // float32-representable features survive the narrow-on-disk format exactly.
  SparseVoxelSet<double> set;
  const int n = 25, d = 7;
  set.indices.resize(n, 3);
  set.features.resize(n, d);
  for (int i = 0; i < n; ++i) {
    set.indices.row(i) << i, 2 * i, 3 * i;
    for (int c = 0; c < d; ++c)
      set.features(i, c) = static_cast<double>(static_cast<float>(rng.normal()));
  }

  const std::vector<char> bytes = encode_sparse_set(set);
  CHECK(bytes[0] == static_cast<char>(kSparseSetFormatVersion));
  SparseVoxelSet<double> back = decode_sparse_set<double>(bytes.data(), bytes.size());
  CHECK(testutil::mat_equal(back.indices, set.indices));
  CHECK(testutil::mat_equal(back.features, set.features));

  const auto path = std::filesystem::temp_directory_path() / "stela_set.svs";
  save_sparse_set(path, set);
  SparseVoxelSet<double> loaded = load_sparse_set<double>(path);
  CHECK(testutil::mat_equal(loaded.features, set.features));

  // Truncated payload and bad version are rejected.
  CHECK_THROWS_AS(decode_sparse_set<double>(bytes.data(), bytes.size() - 1), FormatError);
  std::vector<char> bad = bytes;
  bad[0] = 9;
  CHECK_THROWS_AS(decode_sparse_set<double>(bad.data(), bad.size()), FormatError);
}
