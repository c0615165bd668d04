#include "duet/sequence.hpp"

#include <cmath>

#include "duet/errors.hpp"

namespace duet::data {

MusicSequence::MusicSequence(FrameMatrix frames, double fps) : frames_(std::move(frames)), fps_(fps) {
  const auto c = std::size_t(frames_.cols());
  if (c != kMusicChannels && c != kMusicOutputChannels) {
    throw ShapeError("music frames must have 53 or 13 channels, got " + std::to_string(c));
  }
  if (frames_.rows() < 1) throw ShapeError("music sequence needs at least one frame");
}

double MusicSequence::chroma(std::size_t t, std::size_t bin) const {
  return frames_(Eigen::Index(t), Eigen::Index((compact() ? 0 : kChromaBegin) + bin));
}

double MusicSequence::beat(std::size_t t) const {
  return frames_(Eigen::Index(t), compact() ? Eigen::Index(kChromaBins) : Eigen::Index(kBeatChannel));
}

FrameMatrix MusicSequence::chroma_beat() const {
  if (compact()) return frames_;
  return frames_.rightCols(Eigen::Index(kMusicOutputChannels));
}

FrameMatrix MusicSequence::full_frames() const {
  if (!compact()) return frames_;
  FrameMatrix out = FrameMatrix::Zero(frames_.rows(), Eigen::Index(kMusicChannels));
  out.rightCols(Eigen::Index(kMusicOutputChannels)) = frames_;
  return out;
}

void MusicSequence::check_invariants() const {
  for (std::size_t t = 0; t < length(); ++t) {
    const double b = beat(t);
    if (b != 0.0 && b != 1.0) throw ConfigError("music frame " + std::to_string(t) + ": beat flag is not 0/1");
    for (std::size_t k = 0; k < kChromaBins; ++k) {
      const double c = chroma(t, k);
      if (!(c >= 0.0 && c <= 1.0)) {
        throw ConfigError("music frame " + std::to_string(t) + ": chroma bin " + std::to_string(k) +
                          " outside [0, 1]");
      }
    }
  }
}

DanceSequence::DanceSequence(FrameMatrix frames, double fps) : frames_(std::move(frames)), fps_(fps) {
  if (std::size_t(frames_.cols()) != kDanceChannels) {
    throw ShapeError("dance frames must have 147 channels, got " + std::to_string(frames_.cols()));
  }
  if (frames_.rows() < 1) throw ShapeError("dance sequence needs at least one frame");
}

rot::Vec3 DanceSequence::translation(std::size_t t) const {
  const auto r = Eigen::Index(t);
  return {frames_(r, 0), frames_(r, 1), frames_(r, 2)};
}

rot::Rotation6D DanceSequence::sixd(std::size_t t, std::size_t joint) const {
  rot::Rotation6D out;
  const std::size_t base = kRotationBegin + 6 * joint;
  for (std::size_t k = 0; k < 6; ++k) out.values[k] = frames_(Eigen::Index(t), Eigen::Index(base + k));
  return out;
}

rot::Mat3 DanceSequence::rotation(std::size_t t, std::size_t joint) const {
  try {
    return rot::from_sixd(sixd(t, joint));
  } catch (const DegenerateRotationError& e) {
    throw DegenerateRotationError("frame " + std::to_string(t) + ", joint " + std::to_string(joint) + ": " +
                                  e.what());
  }
}

rot::Pose DanceSequence::pose(std::size_t t) const {
  rot::Pose p;
  p.translation = translation(t);
  for (std::size_t j = 0; j < rot::kJointCount; ++j) p.rotations[j] = rotation(t, j);
  return p;
}

void DanceSequence::set_frame(std::size_t t, const rot::Pose& pose) {
  const auto r = Eigen::Index(t);
  for (int k = 0; k < 3; ++k) frames_(r, k) = pose.translation[k];
  for (std::size_t j = 0; j < rot::kJointCount; ++j) {
    const rot::Rotation6D s = rot::to_sixd(pose.rotations[j]);
    for (std::size_t k = 0; k < 6; ++k) frames_(r, Eigen::Index(kRotationBegin + 6 * j + k)) = s.values[k];
  }
}

DanceSequence DanceSequence::from_poses(const std::vector<rot::Pose>& poses, double fps) {
  DanceSequence out(FrameMatrix::Zero(Eigen::Index(poses.size()), Eigen::Index(kDanceChannels)), fps);
  for (std::size_t t = 0; t < poses.size(); ++t) out.set_frame(t, poses[t]);
  return out;
}

void DanceSequence::check_invariants() const {
  for (std::size_t t = 0; t < length(); ++t) {
    for (std::size_t j = 0; j < rot::kJointCount; ++j) (void)rotation(t, j);
  }
}

std::vector<rot::JointPositions> joint_trajectory(const DanceSequence& dance, const rot::Skeleton& skeleton) {
  std::vector<rot::JointPositions> out;
  out.reserve(dance.length());
  for (std::size_t t = 0; t < dance.length(); ++t) out.push_back(rot::forward_kinematics(skeleton, dance.pose(t)));
  return out;
}

DanceSequence resample(const DanceSequence& dance, double fps_out) {
  const std::size_t n_in = dance.length();
  std::vector<rot::Pose> in;
  in.reserve(n_in);
  for (std::size_t t = 0; t < n_in; ++t) in.push_back(dance.pose(t));

  std::array<std::vector<rot::Mat3>, rot::kJointCount> tracks;
  for (std::size_t j = 0; j < rot::kJointCount; ++j) {
    std::vector<rot::Mat3> track;
    track.reserve(n_in);
    for (const auto& p : in) track.push_back(p.rotations[j]);
    tracks[j] = rot::slerp_resample(track, dance.fps(), fps_out);
  }
  const std::size_t n_out = tracks[0].size();
  std::vector<rot::Pose> out(n_out);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double pos = rot::resample_position(k, n_in, n_out);
    const std::size_t i = std::min(std::size_t(pos), n_in - 2);
    const double u = pos - double(i);
    out[k].translation = k + 1 == n_out ? in.back().translation
                         : k == 0      ? in.front().translation
                                       : (1.0 - u) * in[i].translation + u * in[i + 1].translation;
    for (std::size_t j = 0; j < rot::kJointCount; ++j) out[k].rotations[j] = tracks[j][k];
  }
  return DanceSequence::from_poses(out, fps_out);
}

std::vector<const PairedSample*> PairedDataset::split(Split which) const {
  std::vector<const PairedSample*> out;
  for (const auto& s : samples) {
    if (s.split == which) out.push_back(&s);
  }
  return out;
}

void PairedDataset::validate() const {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.music.length() != s.dance.length()) {
      throw ConfigError("pair " + std::to_string(i) + ": music has " + std::to_string(s.music.length()) +
                        " frames but dance has " + std::to_string(s.dance.length()));
    }
    if (s.music.fps() != s.dance.fps()) {
      throw ConfigError("pair " + std::to_string(i) + ": music and dance frame rates differ");
    }
  }
}

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  throw ConfigError("unknown split '" + text + "' (expected train or test)");
}

std::array<double, kChromaBins> chord_to_chroma(const ChordSeed& seed) {
  if (seed.root < 0 || seed.root >= 12) throw ConfigError("chord root must be a pitch class 0..11");
  std::array<double, kChromaBins> out{};
  const int third = seed.quality == ChordQuality::major ? 4 : 3;
  for (int offset : {0, third, 7}) out[std::size_t((seed.root + offset) % 12)] = 1.0;
  return out;
}

std::array<double, kMusicOutputChannels> music_start_token(const ChordSeed& seed) {
  std::array<double, kMusicOutputChannels> out{};
  const auto chroma = chord_to_chroma(seed);
  std::copy(chroma.begin(), chroma.end(), out.begin());
  out[kChromaBins] = 1.0;
  return out;
}

std::string pitch_class_name(int pitch_class) {
  static constexpr const char* names[] = {"C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"};
  return names[((pitch_class % 12) + 12) % 12];
}

}  // namespace duet::data
