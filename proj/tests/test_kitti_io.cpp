#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "stela/kitti_io.hpp"
#include "stela/rng.hpp"
#include "test_util.hpp"

using namespace stela;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "stela_io_test";
  fs::create_directories(dir);
  return dir;
}

std::vector<char> float_bytes(std::initializer_list<float> values) {
  std::vector<char> bytes(values.size() * 4);
  std::size_t i = 0;
  for (float v : values) {
    std::memcpy(bytes.data() + i * 4, &v, 4);
    ++i;
  }
  return bytes;
}

}  // namespace

TEST_CASE("scan decode of a hand-built buffer") {
  const std::vector<char> bytes = float_bytes({1.0f, 0.0f, 0.0f, 0.5f});
  RawScan scan = decode_scan(bytes.data(), bytes.size());
  REQUIRE(scan.size() == 1);
  CHECK(scan.points[0].x == 1.0);
  CHECK(scan.points[0].y == 0.0);
  CHECK(scan.points[0].z == 0.0);
  CHECK(scan.points[0].intensity == 0.5);
}

TEST_CASE("scan decode edge cases") {
  RawScan empty = decode_scan(nullptr, 0);
  CHECK(empty.size() == 0);

  std::vector<char> bad(17, 0);
  CHECK_THROWS_AS(decode_scan(bad.data(), bad.size()), FormatError);

  CHECK_THROWS_AS(read_scan("/nonexistent/scan.bin"), IoError);
}

TEST_CASE("scan codec round trips byte-for-byte") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = static_cast<int>(rng.uniform_index(200));
    std::vector<char> bytes(static_cast<std::size_t>(n) * 16);
    for (std::size_t i = 0; i < bytes.size(); i += 4) {
      float f = static_cast<float>(rng.uniform(-100.0, 100.0));
      std::memcpy(bytes.data() + i, &f, 4);
    }
    RawScan scan = decode_scan(bytes.data(), bytes.size());
    const std::vector<char> back = encode_scan(scan);
    CHECK(back == bytes);
  }
}

TEST_CASE("label packing") {
  std::uint32_t packed = 0x00010009u;
  std::vector<char> bytes(4);
  std::memcpy(bytes.data(), &packed, 4);
  LabelArray labels = decode_labels(bytes.data(), 4, 1);
  CHECK(labels.semantic[0] == 9);
  CHECK(labels.instance[0] == 1);

  packed = 0;
  std::memcpy(bytes.data(), &packed, 4);
  labels = decode_labels(bytes.data(), 4, 1);
  CHECK(labels.semantic[0] == 0);
  CHECK(labels.instance[0] == 0);

  // One entry short of the paired point count.
  CHECK_THROWS_AS(decode_labels(bytes.data(), 4, 2), FormatError);
}

TEST_CASE("label codec round trips arbitrary pairs") {
  Rng rng(23);
  LabelArray labels;
  for (int i = 0; i < 500; ++i) {
    labels.semantic.push_back(static_cast<std::uint16_t>(rng.uniform_index(1 << 16)));
    labels.instance.push_back(static_cast<std::uint16_t>(rng.uniform_index(1 << 16)));
  }
  const std::vector<char> bytes = encode_labels(labels);
  LabelArray back = decode_labels(bytes.data(), bytes.size(), labels.size());
  CHECK(back.semantic == labels.semantic);
  CHECK(back.instance == labels.instance);
}

TEST_CASE("pose parsing and calibration conjugation") {
  const fs::path dir = temp_dir();
  {
    std::ofstream poses(dir / "poses.txt");
    poses << "1 0 0 0 0 1 0 0 0 0 1 0\n";
    poses << "1 0 0 0 0 1 0 2 0 0 1 0\n";  // camera-frame translation (0,2,0)
    std::ofstream calib(dir / "calib.txt");
    calib << "P0: 1 0 0 0 0 1 0 0 0 0 1 0\n";
    calib << "Tr: 1 0 0 0 0 1 0 0 0 0 1 0\n";
  }
  std::vector<RigidPose> poses = read_poses(dir / "poses.txt", dir / "calib.txt");
  REQUIRE(poses.size() == 2);
  CHECK(poses[0].translation().norm() == Catch::Approx(0.0).margin(1e-15));
  CHECK(poses[1].translation().y() == Catch::Approx(2.0));

  // Identity pose conjugated by a pure translation stays identity.
  {
    std::ofstream calib(dir / "calib.txt");
    calib << "Tr: 1 0 0 1 0 1 0 0 0 0 1 0\n";  // Tr = translation (1,0,0)
  }
  poses = read_poses(dir / "poses.txt", dir / "calib.txt");
  CHECK(poses[0].translation().norm() == Catch::Approx(0.0).margin(1e-12));
  CHECK((poses[0].rotation() - Mat3::Identity()).norm() == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("pose conjugation matches 4x4 brute force") {
  const fs::path dir = temp_dir();
  {
    std::ofstream poses(dir / "poses.txt");
    poses << "1 0 0 0 0 1 0 0 0 0 1 2\n";  // camera pose: translation (0,0,2)
    std::ofstream calib(dir / "calib.txt");
    // Tr: 90 degree rotation about z.
    calib << "Tr: 0 -1 0 0 1 0 0 0 0 0 1 0\n";
  }
  std::vector<RigidPose> poses = read_poses(dir / "poses.txt", dir / "calib.txt");
  REQUIRE(poses.size() == 1);

  const Mat4 tr = testutil::homogeneous(testutil::rot_z(kPi / 2.0), Vec3::Zero());
  const Mat4 cam = testutil::homogeneous(Mat3::Identity(), Vec3(0, 0, 2));
  const Mat4 expected = tr.inverse() * cam * tr;
  CHECK((poses[0].matrix() - expected).cwiseAbs().maxCoeff() < 1e-12);
  // Frozen value: rotation stays identity, translation (0,0,2) is z-invariant
  // under rotations about z.
  CHECK(poses[0].translation().z() == Catch::Approx(2.0));
  CHECK((poses[0].rotation() - Mat3::Identity()).norm() < 1e-12);
}

TEST_CASE("pose line validation") {
  CHECK_THROWS_AS(parse_pose_line("1 0 0 0 0 1 0 0 0 0 1"), FormatError);        // 11 tokens
  CHECK_THROWS_AS(parse_pose_line("1 0 0 0 0 1 0 0 0 0 1 0 5"), FormatError);    // 13 tokens
  CHECK_NOTHROW(parse_pose_line(" 1 0 0 0  0 1 0 0  0 0 1 0 "));
}

TEST_CASE("tiny subset selection") {
  SequenceManifest m;
  m.sequence_id = "08";
  for (int i = 0; i < 25; ++i) {
    m.frame_ids.push_back(i);
    m.scan_paths.push_back("scan_" + std::to_string(i) + ".bin");
    m.label_paths.push_back("");
    m.poses.push_back(RigidPose(Mat3::Identity(), Vec3(i, 0, 0)));
  }

  SequenceManifest tiny = build_tiny_subset(m, 10);
  REQUIRE(tiny.frame_ids == std::vector<int>{0, 10, 20});
  CHECK(tiny.poses[1].translation().x() == 10.0);
  CHECK(tiny.poses[2].translation().x() == 20.0);

  SequenceManifest all = build_tiny_subset(m, 1);
  CHECK(all.frame_ids == m.frame_ids);

  SequenceManifest empty;
  CHECK(build_tiny_subset(empty, 10).size() == 0);

  CHECK_THROWS_AS(build_tiny_subset(m, 0), ConfigError);
}

TEST_CASE("class map loads and remaps") {
  const fs::path dir = temp_dir();
  const fs::path path = dir / "classes.txt";
  {
    std::ofstream out(path);
    out << "# raw train name\n";
    out << "0 255 unlabeled\n";
    out << "10 0 car\n";
    out << "252 0 car  # moving merged into car\n";
    out << "11 1 bicycle\n";
  }
  ClassMap map = ClassMap::load(path);
  CHECK(map.remap(10) == 0);
  CHECK(map.remap(252) == 0);
  CHECK(map.remap(11) == 1);
  CHECK(map.remap(0) == kIgnoreId);
  CHECK(map.num_classes() == 2);
  CHECK(map.class_name(0) == "car");
  CHECK_THROWS_AS(map.remap(999), DataError);
}

TEST_CASE("shipped semantic kitti class map is consistent") {
  const fs::path path = fs::path(STELA_SOURCE_DIR) / "config" / "semantic_kitti_classes.txt";
  ClassMap map = ClassMap::load(path);
  CHECK(map.num_classes() == 19);
  CHECK(map.remap(10) == map.remap(252));  // moving car merged into car
  CHECK(map.remap(0) == kIgnoreId);
  CHECK(map.class_name(8) == "road");
}
