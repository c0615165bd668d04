#pragma once

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "duet/rotations.hpp"
#include "duet/skeleton.hpp"

namespace duet::data {

using FrameMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Music frame layout: [0, 20) MFCC, [20, 40) MFCC delta, [40, 52) chroma,
// [52] beat flag. Generated music carries only chroma + beat (13 channels).
inline constexpr std::size_t kMusicChannels = 53;
inline constexpr std::size_t kMusicOutputChannels = 13;
inline constexpr std::size_t kMfccBegin = 0;
inline constexpr std::size_t kMfccDeltaBegin = 20;
inline constexpr std::size_t kChromaBegin = 40;
inline constexpr std::size_t kBeatChannel = 52;
inline constexpr std::size_t kChromaBins = 12;

// Dance frame layout: [0, 3) root translation in meters, then 24 blocks of
// column-major 6D rotations.
inline constexpr std::size_t kDanceChannels = 3 + 6 * rot::kJointCount;
inline constexpr std::size_t kRotationBegin = 3;

inline constexpr double kDefaultFps = 25.0;

class MusicSequence {
 public:
  MusicSequence() = default;
  /// Accepts full (53-channel) or compact chroma+beat (13-channel) frames.
  MusicSequence(FrameMatrix frames, double fps = kDefaultFps);

  [[nodiscard]] std::size_t length() const { return std::size_t(frames_.rows()); }
  [[nodiscard]] double fps() const { return fps_; }
  [[nodiscard]] bool compact() const { return frames_.cols() == Eigen::Index(kMusicOutputChannels); }
  [[nodiscard]] const FrameMatrix& frames() const { return frames_; }
  FrameMatrix& frames() { return frames_; }

  [[nodiscard]] double chroma(std::size_t t, std::size_t bin) const;
  [[nodiscard]] double beat(std::size_t t) const;
  /// T x 13 block of chroma followed by beat, whichever layout is stored.
  [[nodiscard]] FrameMatrix chroma_beat() const;
  /// Full 53-channel frames; compact sequences get zero MFCC channels.
  [[nodiscard]] FrameMatrix full_frames() const;

  /// Throws ConfigError unless beats are binary and chroma lies in [0, 1].
  void check_invariants() const;

 private:
  FrameMatrix frames_;
  double fps_ = kDefaultFps;
};

class DanceSequence {
 public:
  DanceSequence() = default;
  DanceSequence(FrameMatrix frames, double fps = kDefaultFps);

  [[nodiscard]] std::size_t length() const { return std::size_t(frames_.rows()); }
  [[nodiscard]] double fps() const { return fps_; }
  [[nodiscard]] const FrameMatrix& frames() const { return frames_; }
  FrameMatrix& frames() { return frames_; }

  [[nodiscard]] rot::Vec3 translation(std::size_t t) const;
  [[nodiscard]] rot::Rotation6D sixd(std::size_t t, std::size_t joint) const;
  /// Recovered rotation; DegenerateRotationError names the frame and joint.
  [[nodiscard]] rot::Mat3 rotation(std::size_t t, std::size_t joint) const;
  [[nodiscard]] rot::Pose pose(std::size_t t) const;

  void set_frame(std::size_t t, const rot::Pose& pose);
  static DanceSequence from_poses(const std::vector<rot::Pose>& poses, double fps = kDefaultFps);

  /// Every 6D block recovers a valid rotation.
  void check_invariants() const;

 private:
  FrameMatrix frames_;
  double fps_ = kDefaultFps;
};

/// Joint positions for every frame.
std::vector<rot::JointPositions> joint_trajectory(const DanceSequence& dance, const rot::Skeleton& skeleton);

/// Downsamples a dance: rotations by spherical interpolation, translation
/// linearly, on the same time grid as rot::slerp_resample.
DanceSequence resample(const DanceSequence& dance, double fps_out);

enum class Split { train, test };

struct PairedSample {
  MusicSequence music;
  DanceSequence dance;
  std::string genre;
  Split split = Split::train;
};

/// Pairs with equal frame counts and a common frame rate.
struct PairedDataset {
  std::vector<PairedSample> samples;

  [[nodiscard]] std::vector<const PairedSample*> split(Split which) const;
  /// Throws ConfigError on unequal lengths or frame rates within a pair.
  void validate() const;
};

std::string to_string(Split split);
Split parse_split(const std::string& text);

// ---------------------------------------------------------------------------
// Chord seeds for the music decoder's start token.

enum class ChordQuality { major, minor };

struct ChordSeed {
  int root = 0;  // pitch class, 0 = C ... 11 = B
  ChordQuality quality = ChordQuality::major;
};

/// Triad indicator: offsets {0, 4, 7} (major) or {0, 3, 7} (minor) from the root.
std::array<double, kChromaBins> chord_to_chroma(const ChordSeed& seed);
/// 13-vector start token: the triad chroma followed by beat = 1.
std::array<double, kMusicOutputChannels> music_start_token(const ChordSeed& seed);

std::string pitch_class_name(int pitch_class);

}  // namespace duet::data
