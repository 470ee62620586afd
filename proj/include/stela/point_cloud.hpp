#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace stela {

// One LiDAR return. Coordinates are carried as doubles end to end; scan files
// store float32, and float -> double -> float round-trips exactly, so the
// codec stays byte-exact as long as values are not modified in between.
struct ScanPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double intensity = 0.0;
};

struct RawScan {
  std::vector<ScanPoint> points;

  std::size_t size() const { return points.size(); }
};

// Per-point semantic/instance ids, unpacked from the 32-bit label encoding.
struct LabelArray {
  std::vector<std::uint16_t> semantic;
  std::vector<std::uint16_t> instance;

  std::size_t size() const { return semantic.size(); }
};

}  // namespace stela
