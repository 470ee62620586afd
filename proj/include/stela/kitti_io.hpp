#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stela/error.hpp"
#include "stela/geometry.hpp"
#include "stela/point_cloud.hpp"

namespace stela {

static_assert(std::endian::native == std::endian::little,
              "scan/label codecs assume a little-endian host");

// Sentinel class id after remapping. Everything downstream (losses, metrics,
// voxel labelling) treats this one value as "do not score".
inline constexpr std::uint16_t kIgnoreId = 255;

namespace detail {

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading " + path.string());
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, const char* data,
                             std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(data, static_cast<std::streamsize>(size));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace detail

// --- scan codec: packed little-endian float32 x4 per point -----------------

inline RawScan decode_scan(const char* data, std::size_t size) {
  if (size % 16 != 0)
    throw FormatError("malformed scan: length " + std::to_string(size) +
                      " is not a multiple of 16");
  RawScan scan;
  scan.points.resize(size / 16);
  for (std::size_t i = 0; i < scan.points.size(); ++i) {
    float f[4];
    std::memcpy(f, data + i * 16, 16);
    scan.points[i] = ScanPoint{static_cast<double>(f[0]), static_cast<double>(f[1]),
                               static_cast<double>(f[2]), static_cast<double>(f[3])};
  }
  return scan;
}

inline std::vector<char> encode_scan(const RawScan& scan) {
  std::vector<char> bytes(scan.points.size() * 16);
  for (std::size_t i = 0; i < scan.points.size(); ++i) {
    const ScanPoint& p = scan.points[i];
    float f[4] = {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z),
                  static_cast<float>(p.intensity)};
    std::memcpy(bytes.data() + i * 16, f, 16);
  }
  return bytes;
}

inline RawScan read_scan(const std::filesystem::path& path) {
  const std::vector<char> bytes = detail::read_file_bytes(path);
  return decode_scan(bytes.data(), bytes.size());
}

inline void write_scan(const std::filesystem::path& path, const RawScan& scan) {
  const std::vector<char> bytes = encode_scan(scan);
  detail::write_file_bytes(path, bytes.data(), bytes.size());
}

// --- label codec: packed little-endian uint32 per point ---------------------
// semantic = value & 0xFFFF, instance = value >> 16.

inline LabelArray decode_labels(const char* data, std::size_t size, std::size_t n_points) {
  if (size != n_points * 4)
    throw FormatError("malformed labels: expected " + std::to_string(n_points) +
                      " entries, file holds " + std::to_string(size / 4));
  LabelArray labels;
  labels.semantic.resize(n_points);
  labels.instance.resize(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    std::uint32_t v;
    std::memcpy(&v, data + i * 4, 4);
    labels.semantic[i] = static_cast<std::uint16_t>(v & 0xFFFFu);
    labels.instance[i] = static_cast<std::uint16_t>(v >> 16);
  }
  return labels;
}

inline std::vector<char> encode_labels(const LabelArray& labels) {
  std::vector<char> bytes(labels.semantic.size() * 4);
  for (std::size_t i = 0; i < labels.semantic.size(); ++i) {
    const std::uint32_t v = static_cast<std::uint32_t>(labels.semantic[i]) |
                            (static_cast<std::uint32_t>(labels.instance[i]) << 16);
    std::memcpy(bytes.data() + i * 4, &v, 4);
  }
  return bytes;
}

inline LabelArray read_labels(const std::filesystem::path& path, std::size_t n_points) {
  const std::vector<char> bytes = detail::read_file_bytes(path);
  return decode_labels(bytes.data(), bytes.size(), n_points);
}

inline void write_labels(const std::filesystem::path& path, const LabelArray& labels) {
  const std::vector<char> bytes = encode_labels(labels);
  detail::write_file_bytes(path, bytes.data(), bytes.size());
}

// --- poses ------------------------------------------------------------------

// One row-major 3x4 line of 12 decimals.
inline RigidPose parse_pose_line(const std::string& line) {
  std::istringstream iss(line);
  double v[12];
  for (int i = 0; i < 12; ++i) {
    if (!(iss >> v[i])) throw FormatError("malformed pose line: \"" + line + "\"");
  }
  std::string extra;
  if (iss >> extra) throw FormatError("malformed pose line (extra tokens): \"" + line + "\"");
  Mat3 r;
  r << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
  return RigidPose(r, Vec3(v[3], v[7], v[11]));
}

// Reads the `Tr:` sensor-to-camera calibration line.
inline RigidPose read_calibration(const std::filesystem::path& calib_path) {
  std::ifstream in(calib_path);
  if (!in) throw IoError("cannot open " + calib_path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("Tr:", 0) == 0) return parse_pose_line(line.substr(3));
  }
  throw FormatError("no Tr: line in " + calib_path.string());
}

// Camera-frame odometry conjugated into the LiDAR frame: Tr^-1 * P_cam * Tr.
inline std::vector<RigidPose> read_poses(const std::filesystem::path& poses_path,
                                         const std::filesystem::path& calib_path) {
  const RigidPose tr = read_calibration(calib_path);
  const RigidPose tr_inv = tr.inverse();
  std::ifstream in(poses_path);
  if (!in) throw IoError("cannot open " + poses_path.string());
  std::vector<RigidPose> poses;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    poses.push_back(tr_inv.compose(parse_pose_line(line)).compose(tr));
  }
  return poses;
}

// --- class remapping ---------------------------------------------------------

// Raw dataset ids -> contiguous train ids (or kIgnoreId). Loaded from a
// checked-in text config so the merge of moving/non-moving labels stays
// auditable.
class ClassMap {
 public:
  // File format: `raw_id train_id name` per line, '#' comments.
  static ClassMap load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    ClassMap map;
    std::string line;
    while (std::getline(in, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::istringstream iss(line);
      int raw_id, train_id;
      std::string name;
      if (!(iss >> raw_id)) continue;  // blank line
      if (!(iss >> train_id >> name))
        throw FormatError("malformed class-map line: \"" + line + "\"");
      if (raw_id < 0 || raw_id > 0xFFFF || train_id < 0 || train_id > 0xFFFF)
        throw FormatError("class-map id out of range in: \"" + line + "\"");
      map.raw_to_train_[static_cast<std::uint16_t>(raw_id)] =
          static_cast<std::uint16_t>(train_id);
      if (train_id != kIgnoreId) {
        if (map.names_.size() <= static_cast<std::size_t>(train_id))
          map.names_.resize(train_id + 1);
        if (map.names_[train_id].empty()) map.names_[train_id] = name;
      }
    }
    if (map.raw_to_train_.empty()) throw FormatError("empty class map: " + path.string());
    return map;
  }

  std::uint16_t remap(std::uint16_t raw_id) const {
    auto it = raw_to_train_.find(raw_id);
    if (it == raw_to_train_.end())
      throw DataError("semantic id " + std::to_string(raw_id) + " missing from class map");
    return it->second;
  }

  std::vector<std::uint16_t> remap(const std::vector<std::uint16_t>& raw_ids) const {
    std::vector<std::uint16_t> out(raw_ids.size());
    for (std::size_t i = 0; i < raw_ids.size(); ++i) out[i] = remap(raw_ids[i]);
    return out;
  }

  int num_classes() const { return static_cast<int>(names_.size()); }
  const std::string& class_name(int train_id) const { return names_.at(train_id); }

 private:
  std::map<std::uint16_t, std::uint16_t> raw_to_train_;
  std::vector<std::string> names_;
};

// --- sequence manifest -------------------------------------------------------

struct SequenceManifest {
  std::string sequence_id;
  std::vector<int> frame_ids;  // strictly increasing
  std::vector<std::filesystem::path> scan_paths;
  std::vector<std::filesystem::path> label_paths;  // empty path when absent
  std::vector<RigidPose> poses;
  RigidPose calibration;

  std::size_t size() const { return frame_ids.size(); }

  void validate() const {
    if (frame_ids.size() != scan_paths.size() || frame_ids.size() != poses.size() ||
        frame_ids.size() != label_paths.size())
      throw DataError("manifest: per-frame lists disagree in length");
    for (std::size_t i = 1; i < frame_ids.size(); ++i)
      if (frame_ids[i] <= frame_ids[i - 1])
        throw DataError("manifest: frame ids not strictly increasing");
  }
};

// Scans a SemanticKITTI-layout directory: <root>/velodyne/NNNNNN.bin,
// <root>/labels/NNNNNN.label, <root>/poses.txt, <root>/calib.txt.
inline SequenceManifest scan_sequence_dir(const std::filesystem::path& root,
                                          const std::string& sequence_id) {
  namespace fs = std::filesystem;
  SequenceManifest m;
  m.sequence_id = sequence_id;
  const fs::path velo = root / "velodyne";
  if (!fs::is_directory(velo)) throw IoError("no velodyne/ directory under " + root.string());

  std::vector<std::pair<int, fs::path>> scans;
  for (const auto& entry : fs::directory_iterator(velo)) {
    if (entry.path().extension() != ".bin") continue;
    scans.emplace_back(std::stoi(entry.path().stem().string()), entry.path());
  }
  std::sort(scans.begin(), scans.end());

  m.calibration = read_calibration(root / "calib.txt");
  std::vector<RigidPose> poses = read_poses(root / "poses.txt", root / "calib.txt");
  if (poses.size() < scans.size())
    throw DataError("poses.txt holds " + std::to_string(poses.size()) + " poses but " +
                    std::to_string(scans.size()) + " scans found");

  for (const auto& [frame_id, path] : scans) {
    m.frame_ids.push_back(frame_id);
    m.scan_paths.push_back(path);
    fs::path label = root / "labels" / (path.stem().string() + ".label");
    m.label_paths.push_back(fs::exists(label) ? label : fs::path());
    m.poses.push_back(poses.at(frame_id));
  }
  m.validate();
  return m;
}

// Keeps frames at positions 0, stride, 2*stride, ... preserving pose pairing.
inline SequenceManifest build_tiny_subset(const SequenceManifest& manifest, int stride) {
  if (stride < 1) throw ConfigError("tiny-subset stride must be >= 1");
  SequenceManifest out;
  out.sequence_id = manifest.sequence_id;
  out.calibration = manifest.calibration;
  for (std::size_t i = 0; i < manifest.size(); i += static_cast<std::size_t>(stride)) {
    out.frame_ids.push_back(manifest.frame_ids[i]);
    out.scan_paths.push_back(manifest.scan_paths[i]);
    out.label_paths.push_back(manifest.label_paths[i]);
    out.poses.push_back(manifest.poses[i]);
  }
  return out;
}

}  // namespace stela
