#pragma once

#include <Eigen/Core>
#include <array>
#include <span>
#include <vector>

namespace duet::rot {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

/// First two columns of a rotation matrix, stored column-major:
/// (R00, R10, R20, R01, R11, R21).
struct Rotation6D {
  std::array<double, 6> values{};

  [[nodiscard]] Vec3 first() const { return {values[0], values[1], values[2]}; }
  [[nodiscard]] Vec3 second() const { return {values[3], values[4], values[5]}; }
};

/// Below this norm a 6D column is treated as degenerate.
inline constexpr double kSixdDegenerateNorm = 1e-8;

/// Rodrigues' formula; the vector's magnitude is the angle in radians.
Mat3 axis_angle_to_matrix(const Vec3& axis_angle);
/// Inverse of axis_angle_to_matrix, angle in [0, pi].
Vec3 matrix_to_axis_angle(const Mat3& rotation);

Rotation6D to_sixd(const Mat3& rotation);
/// Gram-Schmidt recovery: normalize column 1, orthogonalize and normalize
/// column 2, column 3 = col1 x col2. Throws DegenerateRotationError when
/// column 1 (or the orthogonalized column 2) has norm below 1e-8.
Mat3 from_sixd(const Rotation6D& sixd);
Mat3 from_sixd(std::span<const double, 6> sixd);

/// Rotation angle of a * b^T: |arccos((tr(a b^T) - 1) / 2)| with the cosine
/// clamped to [-1, 1].
double geodesic(const Mat3& a, const Mat3& b);

/// Spherical interpolation between two rotations, u in [0, 1]. Antipodal
/// inputs (quaternion dot product exactly zero) keep the second quaternion's
/// sign, i.e. the path stays in the hemisphere chosen for the earlier frame.
Mat3 slerp(const Mat3& from, const Mat3& to, double u);

/// Resamples a rotation track recorded at fps_in to fps_out. The output spans
/// the same interval with round(duration * fps_out) + 1 uniformly spaced
/// frames; first and last frames are copied verbatim.
std::vector<Mat3> slerp_resample(std::span<const Mat3> sequence, double fps_in, double fps_out);

/// Number of frames slerp_resample produces.
std::size_t resampled_length(std::size_t frames, double fps_in, double fps_out);
/// Fractional input index for output frame k.
double resample_position(std::size_t k, std::size_t frames_in, std::size_t frames_out);

}  // namespace duet::rot
