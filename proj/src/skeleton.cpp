#include "duet/skeleton.hpp"

#include <fstream>
#include <sstream>

#include "duet/errors.hpp"
#include "json.hpp"

namespace duet::rot {

namespace {

// Kept in sync with data/skeleton_v1.json (a test compares the two).
constexpr std::string_view kCanonicalJson = R"({
  "version": 1,
  "joints": [
    {"name": "pelvis",         "parent": -1, "offset": [0.0, 0.0, 0.0]},
    {"name": "left_hip",       "parent": 0,  "offset": [0.058, -0.082, -0.018]},
    {"name": "right_hip",      "parent": 0,  "offset": [-0.060, -0.091, -0.014]},
    {"name": "spine1",         "parent": 0,  "offset": [0.004, 0.124, -0.038]},
    {"name": "left_knee",      "parent": 1,  "offset": [0.043, -0.386, 0.008]},
    {"name": "right_knee",     "parent": 2,  "offset": [-0.043, -0.383, -0.005]},
    {"name": "spine2",         "parent": 3,  "offset": [0.004, 0.138, 0.027]},
    {"name": "left_ankle",     "parent": 4,  "offset": [-0.015, -0.427, -0.037]},
    {"name": "right_ankle",    "parent": 5,  "offset": [0.019, -0.420, -0.035]},
    {"name": "spine3",         "parent": 6,  "offset": [-0.002, 0.056, 0.002]},
    {"name": "left_foot",      "parent": 7,  "offset": [0.041, -0.060, 0.122]},
    {"name": "right_foot",     "parent": 8,  "offset": [-0.035, -0.062, 0.130]},
    {"name": "neck",           "parent": 9,  "offset": [-0.013, 0.212, -0.033]},
    {"name": "left_collar",    "parent": 9,  "offset": [0.072, 0.114, -0.019]},
    {"name": "right_collar",   "parent": 9,  "offset": [-0.083, 0.112, -0.024]},
    {"name": "head",           "parent": 12, "offset": [0.010, 0.089, 0.050]},
    {"name": "left_shoulder",  "parent": 13, "offset": [0.123, 0.045, -0.019]},
    {"name": "right_shoulder", "parent": 14, "offset": [-0.113, 0.047, -0.008]},
    {"name": "left_elbow",     "parent": 16, "offset": [0.255, -0.015, -0.023]},
    {"name": "right_elbow",    "parent": 17, "offset": [-0.260, -0.014, -0.031]},
    {"name": "left_wrist",     "parent": 18, "offset": [0.266, 0.013, -0.007]},
    {"name": "right_wrist",    "parent": 19, "offset": [-0.269, 0.007, -0.006]},
    {"name": "left_hand",      "parent": 20, "offset": [0.087, -0.011, -0.016]},
    {"name": "right_hand",     "parent": 21, "offset": [-0.089, -0.009, -0.010]}
  ]
})";

}  // namespace

Skeleton::Skeleton(std::vector<Joint> joints, int version) : joints_(std::move(joints)), version_(version) {
  if (joints_.size() != kJointCount) {
    throw ConfigError("skeleton must have " + std::to_string(kJointCount) + " joints, got " +
                      std::to_string(joints_.size()));
  }
  if (joints_[0].parent != -1) throw ConfigError("skeleton joint 0 must be the root (parent -1)");
  const int n = int(joints_.size());
  std::vector<std::vector<std::size_t>> children(joints_.size());
  for (int j = 1; j < n; ++j) {
    const int p = joints_[j].parent;
    if (p < 0 || p >= n || p == j) {
      throw ConfigError("skeleton joint '" + joints_[j].name + "' has invalid parent " + std::to_string(p));
    }
    children[std::size_t(p)].push_back(std::size_t(j));
  }
  // Breadth-first walk from the root; a cycle leaves joints unreached.
  order_.push_back(0);
  for (std::size_t head = 0; head < order_.size(); ++head) {
    for (std::size_t c : children[order_[head]]) order_.push_back(c);
  }
  if (order_.size() != joints_.size()) throw ConfigError("skeleton parent links contain a cycle");
}

const Skeleton& Skeleton::canonical() {
  static const Skeleton skeleton = parse(kCanonicalJson);
  return skeleton;
}

Skeleton Skeleton::parse(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("skeleton file is not valid JSON: ") + e.what());
  }
  try {
    std::vector<Joint> joints;
    for (const auto& j : doc.at("joints")) {
      Joint joint;
      joint.name = j.at("name").get<std::string>();
      joint.parent = j.at("parent").get<int>();
      const auto offset = j.at("offset").get<std::vector<double>>();
      if (offset.size() != 3) throw ConfigError("joint '" + joint.name + "' offset must have 3 entries");
      joint.offset = Vec3(offset[0], offset[1], offset[2]);
      joints.push_back(std::move(joint));
    }
    return Skeleton(std::move(joints), doc.value("version", 1));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed skeleton file: ") + e.what());
  }
}

Skeleton Skeleton::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open skeleton file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

JointPositions forward_kinematics(const Skeleton& skeleton, const Pose& pose) {
  JointPositions positions;
  std::array<Mat3, kJointCount> global;
  const auto& joints = skeleton.joints();
  for (std::size_t j : skeleton.order()) {
    const Joint& joint = joints[j];
    if (joint.parent < 0) {
      global[j] = pose.rotations[j];
      positions[j] = pose.translation + joint.offset;
    } else {
      const auto p = std::size_t(joint.parent);
      global[j] = global[p] * pose.rotations[j];
      positions[j] = positions[p] + global[p] * joint.offset;
    }
  }
  return positions;
}

}  // namespace duet::rot
