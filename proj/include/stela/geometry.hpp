#pragma once

#include <cmath>
#include <vector>

#include "stela/common.hpp"
#include "stela/error.hpp"
#include "stela/point_cloud.hpp"

namespace stela {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

// Rigid body transform p -> R p + t. Validated at construction: R must be a
// proper rotation within 1e-9.
class RigidPose {
 public:
  RigidPose() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}

  RigidPose(const Mat3& rotation, const Vec3& translation)
      : rotation_(rotation), translation_(translation) {
    const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (!(ortho < 1e-9)) throw DataError("RigidPose: rotation is not orthonormal");
    if (!(std::abs(rotation.determinant() - 1.0) < 1e-9))
      throw DataError("RigidPose: rotation determinant is not +1");
    if (!translation.allFinite()) throw DataError("RigidPose: non-finite translation");
  }

  static RigidPose identity() { return RigidPose(); }

  static RigidPose from_matrix(const Mat4& m) {
    return RigidPose(m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>());
  }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation_;
    m.topRightCorner<3, 1>() = translation_;
    return m;
  }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }

  RigidPose inverse() const {
    Mat3 rt = rotation_.transpose();
    return RigidPose(rt, -(rt * translation_));
  }

  // this * other: applies other first.
  RigidPose compose(const RigidPose& other) const {
    return RigidPose(rotation_ * other.rotation_,
                     rotation_ * other.translation_ + translation_);
  }

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

// Re-expresses a scan captured at pose_src in the sensor frame of pose_dst:
// p -> pose_dst^-1 * pose_src * p. Intensity passes through untouched.
inline RawScan align_to_frame(const RawScan& scan, const RigidPose& pose_src,
                              const RigidPose& pose_dst) {
  const RigidPose rel = pose_dst.inverse().compose(pose_src);
  RawScan out;
  out.points.reserve(scan.points.size());
  for (const ScanPoint& p : scan.points) {
    const Vec3 q = rel.apply(Vec3(p.x, p.y, p.z));
    out.points.push_back(ScanPoint{q.x(), q.y(), q.z(), p.intensity});
  }
  return out;
}

struct CylCoord {
  double rho;    // meters, >= 0
  double theta;  // radians, in [-pi, pi)
  double z;      // meters
};

// (0,0,z) maps to rho=0, theta=0. atan2 can return +pi for y = +-0, x < 0;
// that seam value is folded to -pi to keep theta half-open.
inline CylCoord to_cylindrical(double x, double y, double z) {
  CylCoord c;
  c.rho = std::sqrt(x * x + y * y);
  c.theta = (c.rho == 0.0) ? 0.0 : std::atan2(y, x);
  if (c.theta >= kPi) c.theta = -kPi;
  c.z = z;
  return c;
}

// Point feature layout fed to the point encoder: (x, y, z, rho, theta, intensity).
inline constexpr int kPointFeatureDim = 6;

struct PointFeature {
  double v[kPointFeatureDim];
};

inline PointFeature build_point_features(double x, double y, double z, const CylCoord& cyl,
                                         double intensity) {
  return PointFeature{{x, y, z, cyl.rho, cyl.theta, intensity}};
}

}  // namespace stela
