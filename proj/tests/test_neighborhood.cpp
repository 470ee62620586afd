#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <sstream>

#include "stela/neighborhood.hpp"
#include "stela/rng.hpp"
#include "test_util.hpp"

using namespace stela;

namespace {

SparseVoxelSet<double> set_from_indices(const std::vector<std::array<std::int32_t, 3>>& idx,
                                        int d = 2) {
  SparseVoxelSet<double> s;
  s.indices.resize(static_cast<Eigen::Index>(idx.size()), 3);
  s.features.resize(static_cast<Eigen::Index>(idx.size()), d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    s.indices.row(static_cast<Eigen::Index>(i)) << idx[i][0], idx[i][1], idx[i][2];
    for (int c = 0; c < d; ++c)
      s.features(static_cast<Eigen::Index>(i), c) = static_cast<double>(i * d + c);
  }
  return s;
}

bool entries_equal(const NeighborhoodEntry& a, const NeighborhoodEntry& b) {
  return a.k == b.k && testutil::mat_equal(a.neighbor_count, b.neighbor_count) &&
         testutil::mat_equal(a.neighbor_indices, b.neighbor_indices) &&
         testutil::mat_equal(a.squared_distances, b.squared_distances);
}

}  // namespace

TEST_CASE("knn collinear example") {
  const SparseVoxelSet<double> query = set_from_indices({{0, 0, 0}});
  const SparseVoxelSet<double> past = set_from_indices({{1, 0, 0}, {2, 0, 0}, {5, 0, 0}});

  for (bool brute : {true, false}) {
    NeighborhoodEntry entry =
        brute ? knn_bruteforce(query, past, 2) : knn_neighborhood(query, past, 2);
    REQUIRE(entry.neighbor_count(0) == 2);
    CHECK(entry.neighbor_indices(0, 0) == 0);  // (1,0,0)
    CHECK(entry.neighbor_indices(0, 1) == 1);  // (2,0,0)
    CHECK(entry.squared_distances(0, 0) == 1);
    CHECK(entry.squared_distances(0, 1) == 4);
    CHECK(entry.distance(0, 0) == Catch::Approx(1.0));
    CHECK(entry.distance(0, 1) == Catch::Approx(2.0));
  }
}

TEST_CASE("knn self match") {
  Rng rng(3);
  const SparseVoxelSet<double> set = testutil::random_sparse_set(rng, 50, 2);
  NeighborhoodEntry entry = knn_neighborhood(set, set, 1);
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    CHECK(entry.neighbor_count(i) == 1);
    CHECK(entry.neighbor_indices(i, 0) == static_cast<std::int32_t>(i));
    CHECK(entry.squared_distances(i, 0) == 0);
  }
}

TEST_CASE("knn edge cases") {
  Rng rng(4);
  const SparseVoxelSet<double> query = testutil::random_sparse_set(rng, 10, 2);
  SparseVoxelSet<double> empty;
  empty.features.resize(0, 2);
  empty.indices.resize(0, 3);

  NeighborhoodEntry entry = knn_neighborhood(query, empty, 4);
  for (Eigen::Index i = 0; i < query.size(); ++i) CHECK(entry.neighbor_count(i) == 0);

  CHECK_THROWS_AS(knn_neighborhood(query, empty, 0), ConfigError);
  CHECK_THROWS_AS(knn_bruteforce(query, empty, 0), ConfigError);

  // Fewer past voxels than k: all of them come back.
  const SparseVoxelSet<double> past = testutil::random_sparse_set(rng, 3, 2);
  entry = knn_neighborhood(query, past, 16);
  for (Eigen::Index i = 0; i < query.size(); ++i) {
    CHECK(entry.neighbor_count(i) == 3);
    std::set<std::int32_t> rows;
    for (int j = 0; j < 3; ++j) rows.insert(entry.neighbor_indices(i, j));
    CHECK(rows == std::set<std::int32_t>{0, 1, 2});
    CHECK(entry.neighbor_indices(i, 3) == -1);  // padding flagged invalid
  }
}

TEST_CASE("accelerated knn equals the brute-force oracle") {
  Rng rng(1234);
  for (int trial = 0; trial < 25; ++trial) {
    const int nq = 1 + static_cast<int>(rng.uniform_index(200));
    const int np = 1 + static_cast<int>(rng.uniform_index(300));
    // Small cubes force heavy distance ties, stressing the tie rule.
    const int cube = trial % 2 == 0 ? 8 : 50;
    const SparseVoxelSet<double> query = testutil::random_sparse_set(rng, nq, 2, cube);
    const SparseVoxelSet<double> past = testutil::random_sparse_set(rng, np, 2, cube);
    for (int k : {1, 4, 16, 64}) {
      const NeighborhoodEntry fast = knn_neighborhood(query, past, k);
      const NeighborhoodEntry slow = knn_bruteforce(query, past, k);
      REQUIRE(entries_equal(fast, slow));
    }
  }
}

TEST_CASE("knn with threads matches single-threaded") {
  Rng rng(99);
  const SparseVoxelSet<double> query = testutil::random_sparse_set(rng, 300, 2);
  const SparseVoxelSet<double> past = testutil::random_sparse_set(rng, 400, 2);
  const NeighborhoodEntry one = knn_neighborhood(query, past, 8, 1);
  const NeighborhoodEntry four = knn_neighborhood(query, past, 8, 4);
  CHECK(entries_equal(one, four));
}

TEST_CASE("knn translation invariance") {
  Rng rng(8);
  SparseVoxelSet<double> query = testutil::random_sparse_set(rng, 60, 2);
  SparseVoxelSet<double> past = testutil::random_sparse_set(rng, 80, 2);
  const NeighborhoodEntry base = knn_neighborhood(query, past, 8);

  for (std::int32_t offset : {-1000, 17, 250000}) {
    SparseVoxelSet<double> q2 = query;
    SparseVoxelSet<double> p2 = past;
    q2.indices.array() += offset;
    p2.indices.array() += offset;
    const NeighborhoodEntry shifted = knn_neighborhood(q2, p2, 8);
    CHECK(testutil::mat_equal(shifted.neighbor_indices, base.neighbor_indices));
    CHECK(testutil::mat_equal(shifted.squared_distances, base.squared_distances));
  }
}

TEST_CASE("knn neighbor sets are monotone in k") {
  Rng rng(21);
  const SparseVoxelSet<double> query = testutil::random_sparse_set(rng, 40, 2);
  const SparseVoxelSet<double> past = testutil::random_sparse_set(rng, 100, 2);
  for (int k = 1; k < 12; ++k) {
    const NeighborhoodEntry small = knn_neighborhood(query, past, k);
    const NeighborhoodEntry big = knn_neighborhood(query, past, k + 1);
    for (Eigen::Index i = 0; i < query.size(); ++i) {
      std::set<std::int32_t> small_set, big_set;
      for (int j = 0; j < small.neighbor_count(i); ++j)
        small_set.insert(small.neighbor_indices(i, j));
      for (int j = 0; j < big.neighbor_count(i); ++j) big_set.insert(big.neighbor_indices(i, j));
      for (std::int32_t row : small_set) CHECK(big_set.count(row) == 1);
    }
  }
}

TEST_CASE("k >= past size returns every past voxel") {
  Rng rng(13);
  const SparseVoxelSet<double> query = testutil::random_sparse_set(rng, 30, 2);
  const SparseVoxelSet<double> past = testutil::random_sparse_set(rng, 20, 2);
  const NeighborhoodEntry entry = knn_neighborhood(query, past, 25);
  for (Eigen::Index i = 0; i < query.size(); ++i) {
    REQUIRE(entry.neighbor_count(i) == 20);
    std::set<std::int32_t> rows;
    for (int j = 0; j < 20; ++j) rows.insert(entry.neighbor_indices(i, j));
    CHECK(rows.size() == 20);
  }
}

TEST_CASE("gather_neighbors copies rows and masks padding") {
  Rng rng(55);
  const SparseVoxelSet<double> set = testutil::random_sparse_set(rng, 25, 3);

  SECTION("self-match permutation gather") {
    const NeighborhoodEntry entry = knn_neighborhood(set, set, 1);
    const GatheredNeighborhood<double> g = gather_neighbors(set, entry);
    for (Eigen::Index i = 0; i < set.size(); ++i) {
      CHECK(g.mask(i, 0) == 1);
      CHECK(testutil::mat_equal(g.features.row(i), set.features.row(i)));
    }
  }

  SECTION("empty past yields a false mask") {
    SparseVoxelSet<double> empty;
    empty.features.resize(0, 3);
    empty.indices.resize(0, 3);
    const NeighborhoodEntry entry = knn_neighborhood(set, empty, 4);
    const GatheredNeighborhood<double> g = gather_neighbors(empty, entry);
    CHECK(g.mask.sum() == 0);
    CHECK(g.features.cwiseAbs().sum() == 0.0);
  }

  SECTION("each valid slot equals a direct lookup") {
    const SparseVoxelSet<double> past = testutil::random_sparse_set(rng, 40, 3);
    const NeighborhoodEntry entry = knn_neighborhood(set, past, 6);
    const GatheredNeighborhood<double> g = gather_neighbors(past, entry);
    for (Eigen::Index i = 0; i < set.size(); ++i)
      for (int j = 0; j < entry.neighbor_count(i); ++j)
        CHECK(testutil::mat_equal(g.features.row(i * 6 + j),
                                  past.features.row(entry.neighbor_indices(i, j))));
  }

  SECTION("corrupt table rows are rejected") {
    const SparseVoxelSet<double> past = testutil::random_sparse_set(rng, 10, 3);
    NeighborhoodEntry entry = knn_neighborhood(set, past, 2);
    entry.neighbor_indices(0, 0) = 99;  // out of range
    CHECK_THROWS_AS(gather_neighbors(past, entry), DataError);
  }
}

TEST_CASE("neighborhood csv dump") {
  Rng rng(2);
  const SparseVoxelSet<double> query = testutil::random_sparse_set(rng, 5, 2);
  const SparseVoxelSet<double> past = testutil::random_sparse_set(rng, 7, 2);
  const std::vector<NeighborhoodEntry> tables = {knn_neighborhood(query, past, 3),
                                                 knn_neighborhood(query, past, 3)};
  std::ostringstream os;
  dump_neighborhood_csv(os, tables);
  const std::string text = os.str();
  CHECK(text.rfind("i,n,j_rank,past_row,distance\n", 0) == 0);
  // 5 queries x 3 ranks x 2 frames data lines plus the header.
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 5 * 3 * 2);
  CHECK(text.find("0,2,0,") != std::string::npos);  // frame offsets are 1-based
}
