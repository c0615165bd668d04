#include "duet/rotations.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>

#include "duet/errors.hpp"

namespace duet::rot {

Mat3 axis_angle_to_matrix(const Vec3& axis_angle) {
  const double theta = axis_angle.norm();
  if (theta < 1e-12) return Mat3::Identity();
  const Vec3 k = axis_angle / theta;
  Mat3 skew;
  skew << 0.0, -k.z(), k.y(), k.z(), 0.0, -k.x(), -k.y(), k.x(), 0.0;
  return Mat3::Identity() + std::sin(theta) * skew + (1.0 - std::cos(theta)) * skew * skew;
}

Vec3 matrix_to_axis_angle(const Mat3& rotation) {
  Eigen::Quaterniond q(rotation);
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 v = q.vec();
  const double s = v.norm();
  if (s < 1e-15) return Vec3::Zero();
  const double theta = 2.0 * std::atan2(s, q.w());
  return v * (theta / s);
}

Rotation6D to_sixd(const Mat3& rotation) {
  Rotation6D out;
  for (int r = 0; r < 3; ++r) {
    out.values[r] = rotation(r, 0);
    out.values[3 + r] = rotation(r, 1);
  }
  return out;
}

Mat3 from_sixd(const Rotation6D& sixd) {
  const Vec3 a1 = sixd.first();
  const Vec3 a2 = sixd.second();
  const double n1 = a1.norm();
  if (!(n1 >= kSixdDegenerateNorm)) throw DegenerateRotationError("6D rotation has a vanishing first column");
  const Vec3 b1 = a1 / n1;
  const Vec3 u2 = a2 - b1.dot(a2) * b1;
  const double n2 = u2.norm();
  if (!(n2 >= kSixdDegenerateNorm)) {
    throw DegenerateRotationError("6D rotation has a second column parallel to the first");
  }
  const Vec3 b2 = u2 / n2;
  Mat3 out;
  out.col(0) = b1;
  out.col(1) = b2;
  out.col(2) = b1.cross(b2);
  return out;
}

Mat3 from_sixd(std::span<const double, 6> sixd) {
  Rotation6D r;
  std::copy(sixd.begin(), sixd.end(), r.values.begin());
  return from_sixd(r);
}

double geodesic(const Mat3& a, const Mat3& b) {
  const double trace = (a * b.transpose()).trace();
  return std::fabs(std::acos(std::clamp((trace - 1.0) / 2.0, -1.0, 1.0)));
}

Mat3 slerp(const Mat3& from, const Mat3& to, double u) {
  if (u == 0.0) return from;
  if (u == 1.0) return to;
  const Eigen::Quaterniond q0(from);
  Eigen::Quaterniond q1(to);
  double dot = q0.dot(q1);
  if (dot < 0.0) {
    q1.coeffs() = -q1.coeffs();
    dot = -dot;
  }
  Eigen::Vector4d c;
  if (dot > 1.0 - 1e-12) {
    c = (1.0 - u) * q0.coeffs() + u * q1.coeffs();
  } else {
    const double theta = std::acos(std::min(dot, 1.0));
    const double s = std::sin(theta);
    c = (std::sin((1.0 - u) * theta) / s) * q0.coeffs() + (std::sin(u * theta) / s) * q1.coeffs();
  }
  Eigen::Quaterniond q;
  q.coeffs() = c.normalized();
  return q.toRotationMatrix();
}

std::size_t resampled_length(std::size_t frames, double fps_in, double fps_out) {
  const double duration = double(frames - 1) / fps_in;
  return std::max<std::size_t>(2, std::size_t(std::llround(duration * fps_out)) + 1);
}

double resample_position(std::size_t k, std::size_t frames_in, std::size_t frames_out) {
  return double(k) * double(frames_in - 1) / double(frames_out - 1);
}

std::vector<Mat3> slerp_resample(std::span<const Mat3> sequence, double fps_in, double fps_out) {
  if (!(fps_out > 0.0) || !(fps_in >= fps_out)) {
    throw ConfigError("slerp_resample: need fps_in >= fps_out > 0");
  }
  if (sequence.size() < 2) throw ConfigError("slerp_resample: need at least two frames");
  const std::size_t n_out = resampled_length(sequence.size(), fps_in, fps_out);
  std::vector<Mat3> out;
  out.reserve(n_out);
  out.push_back(sequence.front());
  for (std::size_t k = 1; k + 1 < n_out; ++k) {
    const double pos = resample_position(k, sequence.size(), n_out);
    const std::size_t i = std::min(std::size_t(pos), sequence.size() - 2);
    out.push_back(slerp(sequence[i], sequence[i + 1], pos - double(i)));
  }
  out.push_back(sequence.back());
  return out;
}

}  // namespace duet::rot
