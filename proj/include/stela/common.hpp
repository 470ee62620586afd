#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace stela {

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using Matd = MatX<double>;
using Vecd = VecX<double>;
using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Mat4 = Eigen::Matrix4d;

// Voxel grid indices (h, w, l) as rows. Signed so that translated copies used
// in the KNN invariance tests stay representable.
using IndexMat = Eigen::Matrix<std::int32_t, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Index3 = Eigen::Matrix<std::int32_t, 3, 1>;

using MaskMat = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace stela
