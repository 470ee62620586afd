#include <catch2/catch_amalgamated.hpp>

#include "stela/geometry.hpp"
#include "stela/rng.hpp"
#include "test_util.hpp"

using namespace stela;

TEST_CASE("rigid pose validates rotations") {
  Mat3 r = Mat3::Identity();
  CHECK_NOTHROW(RigidPose(r, Vec3(1, 2, 3)));

  Mat3 scaled = 2.0 * Mat3::Identity();
  CHECK_THROWS_AS(RigidPose(scaled, Vec3::Zero()), DataError);

  Mat3 reflection = Mat3::Identity();
  reflection(2, 2) = -1.0;  // orthonormal but det = -1
  CHECK_THROWS_AS(RigidPose(reflection, Vec3::Zero()), DataError);
}

TEST_CASE("align_to_frame identity and translation") {
  RawScan scan;
  scan.points = {{0, 0, 0, 0.5}, {1, 2, 3, 0.25}};

  RigidPose t100(Mat3::Identity(), Vec3(1, 0, 0));
  RawScan same = align_to_frame(scan, t100, t100);
  for (std::size_t i = 0; i < scan.points.size(); ++i) {
    CHECK(same.points[i].x == Catch::Approx(scan.points[i].x).margin(1e-15));
    CHECK(same.points[i].intensity == scan.points[i].intensity);
  }

  RawScan moved = align_to_frame(scan, t100, RigidPose::identity());
  CHECK(moved.points[0].x == Catch::Approx(1.0));
  CHECK(moved.points[0].y == Catch::Approx(0.0).margin(1e-15));
  CHECK(moved.points[0].z == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("align_to_frame matches 4x4 homogeneous oracle") {
  // src: 90 degrees about z plus translation (2,0,0); dst: translation (0,1,0).
  RigidPose src(testutil::rot_z(kPi / 2.0), Vec3(2, 0, 0));
  RigidPose dst(Mat3::Identity(), Vec3(0, 1, 0));
  RawScan scan;
  scan.points = {{1, 1, 0, 0.0}};

  RawScan out = align_to_frame(scan, src, dst);
  // Frozen from the oracle: Rz(90)*(1,1,0) + (2,0,0) = (1,1,0); minus (0,1,0) = (1,0,0).
  CHECK(out.points[0].x == Catch::Approx(1.0).margin(1e-12));
  CHECK(out.points[0].y == Catch::Approx(0.0).margin(1e-12));
  CHECK(out.points[0].z == Catch::Approx(0.0).margin(1e-12));

  const Mat4 oracle = testutil::homogeneous(dst.rotation(), dst.translation()).inverse() *
                      testutil::homogeneous(src.rotation(), src.translation());
  Eigen::Vector4d h(1, 1, 0, 1);
  Eigen::Vector4d mapped = oracle * h;
  CHECK(out.points[0].x == Catch::Approx(mapped.x()).margin(1e-12));
  CHECK(out.points[0].y == Catch::Approx(mapped.y()).margin(1e-12));
  CHECK(out.points[0].z == Catch::Approx(mapped.z()).margin(1e-12));
}

TEST_CASE("alignment composes and preserves distances") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    auto random_pose = [&rng]() {
      const double yaw = rng.uniform(-kPi, kPi);
      return RigidPose(testutil::rot_z(yaw),
                       Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-1, 1)));
    };
    RigidPose a = random_pose(), b = random_pose(), c = random_pose();

    RawScan scan;
    for (int i = 0; i < 30; ++i)
      scan.points.push_back(
          {rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-2, 2), rng.uniform()});

    RawScan two_hops = align_to_frame(align_to_frame(scan, a, b), b, c);
    RawScan direct = align_to_frame(scan, a, c);
    for (std::size_t i = 0; i < scan.points.size(); ++i) {
      CHECK(std::abs(two_hops.points[i].x - direct.points[i].x) < 1e-9);
      CHECK(std::abs(two_hops.points[i].y - direct.points[i].y) < 1e-9);
      CHECK(std::abs(two_hops.points[i].z - direct.points[i].z) < 1e-9);
    }

    // Isometry: pairwise distances preserved.
    for (std::size_t i = 1; i < 10; ++i) {
      const auto& p = scan.points[i - 1];
      const auto& q = scan.points[i];
      const auto& pp = direct.points[i - 1];
      const auto& qq = direct.points[i];
      const double before = std::hypot(p.x - q.x, p.y - q.y, p.z - q.z);
      const double after = std::hypot(pp.x - qq.x, pp.y - qq.y, pp.z - qq.z);
      CHECK(std::abs(before - after) < 1e-9);
    }
  }
}

TEST_CASE("cylindrical projection basics") {
  CylCoord a = to_cylindrical(1, 0, 0);
  CHECK(a.rho == Catch::Approx(1.0));
  CHECK(a.theta == Catch::Approx(0.0));
  CHECK(a.z == 0.0);

  CylCoord b = to_cylindrical(0, 2, 5);
  CHECK(b.rho == Catch::Approx(2.0));
  CHECK(b.theta == Catch::Approx(kPi / 2.0));
  CHECK(b.z == 5.0);

  CylCoord c = to_cylindrical(3, 4, 0);
  CHECK(c.rho == Catch::Approx(5.0));
  CHECK(c.theta == Catch::Approx(std::atan2(4.0, 3.0)));

  CylCoord origin = to_cylindrical(0, 0, 7);
  CHECK(origin.rho == 0.0);
  CHECK(origin.theta == 0.0);

  // Seam: atan2 returns +pi here; the convention folds it to -pi.
  CylCoord seam = to_cylindrical(-1, 0, 0);
  CHECK(seam.theta == Catch::Approx(-kPi));
  CHECK(seam.theta < kPi);
}

TEST_CASE("cylindrical round trip") {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(-30, 30);
    const double y = rng.uniform(-30, 30);
    const double z = rng.uniform(-5, 5);
    const CylCoord c = to_cylindrical(x, y, z);
    if (c.rho <= 0.0) continue;
    CHECK(std::abs(c.rho * std::cos(c.theta) - x) < 1e-12);
    CHECK(std::abs(c.rho * std::sin(c.theta) - y) < 1e-12);
    CHECK(c.z == z);
    CHECK(c.theta >= -kPi);
    CHECK(c.theta < kPi);
  }
}

TEST_CASE("point feature layout") {
  CylCoord c = to_cylindrical(1, 0, 0);
  PointFeature f = build_point_features(1, 0, 0, c, 0.5);
  const double expected[6] = {1, 0, 0, 1, 0, 0.5};
  for (int i = 0; i < kPointFeatureDim; ++i) CHECK(f.v[i] == Catch::Approx(expected[i]));

  CylCoord o = to_cylindrical(0, 0, 0);
  PointFeature zero = build_point_features(0, 0, 0, o, 0.0);
  for (int i = 0; i < kPointFeatureDim; ++i) CHECK(zero.v[i] == 0.0);

  CylCoord g = to_cylindrical(3, 4, 2);
  PointFeature h = build_point_features(3, 4, 2, g, 0.7);
  CHECK(h.v[3] == Catch::Approx(5.0));
  CHECK(h.v[4] == Catch::Approx(std::atan2(4.0, 3.0)));
  CHECK(h.v[5] == 0.7);
}
