#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stela/error.hpp"
#include "stela/geometry.hpp"
#include "stela/point_cloud.hpp"
#include "stela/rng.hpp"

namespace stela {

// One timestep: points in the sensor frame, per-point train ids, and the
// sensor pose (sensor -> world).
struct PointCloudFrame {
  RawScan scan;
  std::vector<std::uint16_t> labels;
  RigidPose pose;
};

// Labeled geometric primitives with consistent ego motion. World geometry is
// sampled once and re-projected per frame, so a static scene aligns back to
// the exact same point set.
//
// Scenarios:
//   kSeparable - ground plane (class 0) vs elevated boxes (class 1); the two
//     are separable from a single frame.
//   kMotion - ground (0), static boxes (1), moving boxes (2); static and
//     moving boxes are geometrically identical, so class identity is only
//     inferable from motion history.
struct SyntheticSpec {
  enum class Scenario { kSeparable, kMotion };

  Scenario scenario = Scenario::kMotion;
  int num_frames = 8;
  int ground_points = 1200;
  double ground_half_extent = 16.0;  // meters, square around the start pose
  int static_boxes = 5;
  int moving_boxes = 5;              // ignored for kSeparable
  int points_per_box = 110;
  double box_half_size = 0.8;
  double box_base_z = -1.0;          // bottom of every box, relative to sensor height
  double box_height = 1.2;
  double ground_z = -1.7;
  double speed = 1.5;                // meters/frame for moving boxes
  double ego_speed = 0.4;            // meters/frame along +x
  double ego_yaw_rate = 0.02;        // radians/frame
  double jitter = 0.02;              // per-point noise, baked into world geometry

  void validate() const {
    if (num_frames < 1) throw ConfigError("synthetic: need at least one frame");
    if (ground_points < 0 || points_per_box < 0) throw ConfigError("synthetic: negative counts");
    if (static_boxes < 0 || moving_boxes < 0) throw ConfigError("synthetic: negative box count");
  }

  int num_classes() const { return scenario == Scenario::kSeparable ? 2 : 3; }

  static Scenario scenario_from_string(const std::string& s) {
    if (s == "separable") return Scenario::kSeparable;
    if (s == "motion") return Scenario::kMotion;
    throw ConfigError("synthetic: unknown scenario '" + s + "'");
  }
};

namespace detail {

struct WorldPoint {
  Vec3 position;
  double intensity;
  std::uint16_t label;
  Vec3 velocity;  // meters/frame, zero for static geometry
};

inline void add_box(std::vector<WorldPoint>& world, Rng& rng, const SyntheticSpec& spec,
                    const Vec3& center, const Vec3& velocity, std::uint16_t label) {
  for (int p = 0; p < spec.points_per_box; ++p) {
    // Points on the box surface: pick a face, then two in-face coordinates.
    const int axis = static_cast<int>(rng.uniform_index(3));
    const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
    Vec3 offset(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    offset[axis] = side;
    Vec3 half(spec.box_half_size, spec.box_half_size, spec.box_height / 2.0);
    Vec3 pos = center + offset.cwiseProduct(half);
    pos += Vec3(rng.normal(), rng.normal(), rng.normal()) * spec.jitter;
    world.push_back(WorldPoint{pos, rng.uniform(), label, velocity});
  }
}

}  // namespace detail

inline std::vector<PointCloudFrame> make_synthetic_sequence(const SyntheticSpec& spec,
                                                            std::uint64_t seed) {
  spec.validate();
  Rng rng = Rng::derive(seed, "synthetic");

  std::vector<detail::WorldPoint> world;
  world.reserve(static_cast<std::size_t>(spec.ground_points) +
                static_cast<std::size_t>(spec.static_boxes + spec.moving_boxes) *
                    spec.points_per_box);

  for (int p = 0; p < spec.ground_points; ++p) {
    Vec3 pos(rng.uniform(-spec.ground_half_extent, spec.ground_half_extent),
             rng.uniform(-spec.ground_half_extent, spec.ground_half_extent),
             spec.ground_z + rng.normal() * spec.jitter);
    world.push_back(detail::WorldPoint{pos, rng.uniform(), 0, Vec3::Zero()});
  }

  const double box_center_z = spec.box_base_z + spec.box_height / 2.0;
  auto random_center = [&]() {
    // Keep boxes away from the sensor path and inside the ground extent.
    const double r = rng.uniform(4.0, spec.ground_half_extent - 2.0);
    const double a = rng.uniform(-kPi, kPi);
    return Vec3(r * std::cos(a), r * std::sin(a), box_center_z);
  };

  for (int b = 0; b < spec.static_boxes; ++b)
    detail::add_box(world, rng, spec, random_center(), Vec3::Zero(), 1);

  const bool with_moving = spec.scenario == SyntheticSpec::Scenario::kMotion;
  if (with_moving) {
    for (int b = 0; b < spec.moving_boxes; ++b) {
      const double heading = rng.uniform(-kPi, kPi);
      const Vec3 velocity(spec.speed * std::cos(heading), spec.speed * std::sin(heading), 0.0);
      detail::add_box(world, rng, spec, random_center(), velocity, 2);
    }
  }

  std::vector<PointCloudFrame> frames;
  frames.reserve(spec.num_frames);
  for (int t = 0; t < spec.num_frames; ++t) {
    const double yaw = spec.ego_yaw_rate * t;
    Mat3 rot;
    rot << std::cos(yaw), -std::sin(yaw), 0.0, std::sin(yaw), std::cos(yaw), 0.0, 0.0, 0.0, 1.0;
    PointCloudFrame frame;
    frame.pose = RigidPose(rot, Vec3(spec.ego_speed * t, 0.0, 0.0));
    const RigidPose world_to_sensor = frame.pose.inverse();
    frame.scan.points.reserve(world.size());
    frame.labels.reserve(world.size());
    for (const detail::WorldPoint& wp : world) {
      const Vec3 world_pos = wp.position + wp.velocity * static_cast<double>(t);
      const Vec3 local = world_to_sensor.apply(world_pos);
      frame.scan.points.push_back(ScanPoint{local.x(), local.y(), local.z(), wp.intensity});
      frame.labels.push_back(wp.label);
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

}  // namespace stela
