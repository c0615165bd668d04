#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "duet/rotations.hpp"

namespace duet::rot {

inline constexpr std::size_t kJointCount = 24;

struct Joint {
  std::string name;
  int parent = -1;  // -1 only for the root
  Vec3 offset = Vec3::Zero();  // meters, in the parent's frame
};

/// Pose of the full body: root translation plus one local rotation per joint.
struct Pose {
  Vec3 translation = Vec3::Zero();
  std::array<Mat3, kJointCount> rotations;

  Pose() { rotations.fill(Mat3::Identity()); }
};

using JointPositions = std::array<Vec3, kJointCount>;

/// 24-joint kinematic tree. Construction validates that joint 0 is the only
/// root and that parent links form a tree; violations raise ConfigError.
class Skeleton {
 public:
  explicit Skeleton(std::vector<Joint> joints, int version = 1);

  /// The shipped canonical skeleton (identical to data/skeleton_v1.json).
  static const Skeleton& canonical();
  static Skeleton load(const std::filesystem::path& path);
  static Skeleton parse(std::string_view json_text);

  [[nodiscard]] const std::vector<Joint>& joints() const { return joints_; }
  [[nodiscard]] int version() const { return version_; }
  /// Joint indices ordered so that every parent precedes its children.
  [[nodiscard]] const std::vector<std::size_t>& order() const { return order_; }

 private:
  std::vector<Joint> joints_;
  std::vector<std::size_t> order_;
  int version_;
};

/// position(j) = position(parent) + GlobalRot(parent) * offset(j), with the
/// root placed at translation + offset(root).
JointPositions forward_kinematics(const Skeleton& skeleton, const Pose& pose);

}  // namespace duet::rot
