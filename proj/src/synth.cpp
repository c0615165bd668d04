#include "duet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "duet/errors.hpp"
#include "duet/rng.hpp"

namespace duet::data {
namespace {

using ChordQuality::major;
using ChordQuality::minor;

long floor_div(long a, long b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

ChordSeed chord_at(const GenreTemplate& g, int period, long phase, long frame) {
  const long bar = floor_div(frame - phase, 4L * period);
  const auto n = long(g.progression.size());
  const auto& step = g.progression[std::size_t(((bar % n) + n) % n)];
  return {(g.key_root + step.offset) % 12, step.quality};
}

// Per-genre, per-chord joint directions: fixed by the genre name and chord,
// independent of the pair seed, so the chord-to-pose mapping is learnable.
std::array<rot::Vec3, rot::kJointCount> chord_directions(const GenreTemplate& g, const ChordSeed& chord) {
  Rng rng(fnv1a64(g.name) ^ (std::uint64_t(chord.root) * 2 + (chord.quality == minor ? 1 : 0) + 1) * 0x9E3779B97F4A7C15ULL);
  std::array<rot::Vec3, rot::kJointCount> out;
  for (auto& v : out) v = rot::Vec3(rng.normal(), rng.normal(), rng.normal());
  out[0] *= 0.3;  // keep whole-body turns small
  return out;
}

std::array<rot::Vec3, rot::kJointCount> base_pose(const GenreTemplate& g) {
  Rng rng(fnv1a64(g.name + "/base"));
  std::array<rot::Vec3, rot::kJointCount> out;
  for (auto& v : out) v = 0.15 * rot::Vec3(rng.normal(), rng.normal(), rng.normal());
  out[0].setZero();
  return out;
}

}  // namespace

const std::vector<GenreTemplate>& genre_templates() {
  static const std::vector<GenreTemplate> templates = {
      {"pop", 14, 16, 0, {{0, major}, {7, major}, {9, minor}, {5, major}}, 0.30, 0.05},
      {"ballet", 16, 18, 9, {{0, minor}, {5, minor}, {7, major}, {0, minor}}, 0.22, 0.03},
      {"hiphop", 15, 18, 5, {{0, minor}, {8, major}, {3, major}, {10, major}}, 0.35, 0.07},
      {"house", 14, 15, 7, {{0, major}, {5, major}, {7, major}, {5, major}}, 0.28, 0.06},
  };
  return templates;
}

const GenreTemplate& find_genre(const std::string& name) {
  for (const auto& g : genre_templates()) {
    if (g.name == name) return g;
  }
  std::string known;
  for (const auto& g : genre_templates()) known += (known.empty() ? "" : ", ") + g.name;
  throw ConfigError("unknown genre '" + name + "' (known: " + known + ")");
}

std::pair<MusicSequence, DanceSequence> synth_pair(std::uint64_t seed, std::size_t frames, const GenreTemplate& genre,
                                                   const SynthOptions& options, SynthTruth* truth) {
  if (frames < 2) throw ConfigError("synth_pair needs at least 2 frames");
  if (genre.progression.empty() || genre.beat_period_min < 2 || genre.beat_period_max < genre.beat_period_min) {
    throw ConfigError("genre template '" + genre.name + "' is malformed");
  }
  if (!(options.alignment_fraction >= 0.0 && options.alignment_fraction <= 1.0)) {
    throw ConfigError("alignment fraction must lie in [0, 1]");
  }
  Rng rng(seed);
  Rng beat_rng = rng.substream("beats");
  Rng music_rng = rng.substream("music");
  Rng dance_rng = rng.substream("dance");

  const int period =
      genre.beat_period_min + int(beat_rng.below(std::uint64_t(genre.beat_period_max - genre.beat_period_min + 1)));
  const long phase = long(beat_rng.below(std::uint64_t(period)));
  const auto T = long(frames);

  // Music.
  FrameMatrix m = FrameMatrix::Zero(T, Eigen::Index(kMusicChannels));
  std::vector<std::size_t> beats;
  for (long b = phase; b < T; b += period) beats.push_back(std::size_t(b));
  constexpr double kSmooth = 0.9;
  const double innovation = std::sqrt(1.0 - kSmooth * kSmooth);
  for (long t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < 20; ++c) {
      const double prev = t > 0 ? m(t - 1, Eigen::Index(kMfccBegin + c)) : 0.0;
      m(t, Eigen::Index(kMfccBegin + c)) = kSmooth * prev + innovation * music_rng.normal();
    }
  }
  for (std::size_t b : beats) {
    for (std::size_t c = 0; c < 3; ++c) m(Eigen::Index(b), Eigen::Index(c)) += 1.0;
  }
  for (long t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < 20; ++c) {
      m(t, Eigen::Index(kMfccDeltaBegin + c)) =
          t > 0 ? m(t, Eigen::Index(kMfccBegin + c)) - m(t - 1, Eigen::Index(kMfccBegin + c)) : 0.0;
    }
    const ChordSeed chord = chord_at(genre, period, phase, t);
    const auto triad = chord_to_chroma(chord);
    for (std::size_t k = 0; k < kChromaBins; ++k) {
      double v = triad[k] > 0 ? 0.6 + 0.2 * music_rng.uniform() : 0.1 * music_rng.uniform();
      if (int(k) == chord.root) v = 0.9 + 0.1 * music_rng.uniform();
      m(t, Eigen::Index(kChromaBegin + k)) = std::clamp(v, 0.0, 1.0);
    }
  }
  for (std::size_t b : beats) m(Eigen::Index(b), Eigen::Index(kBeatChannel)) = 1.0;

  // Dance keyframes: one per beat, with virtual beats past both ends so the
  // clip never starts or stops on an artificial keyframe.
  SynthTruth info;
  info.beat_period = period;
  info.beats = beats;
  const auto base = base_pose(genre);
  std::vector<rot::Pose> keyposes;
  const long first_beat = phase - 2L * period;
  for (long b = first_beat, i = 0; b < T + period; b += period, ++i) {
    const bool aligned = dance_rng.uniform() < options.alignment_fraction;
    const long frame = aligned ? b : b + period / 2;
    const ChordSeed chord = chord_at(genre, period, phase, b);
    const auto dirs = chord_directions(genre, chord);
    const double sign = (i % 2 == 0) ? 1.0 : -1.0;
    rot::Pose pose;
    pose.translation = rot::Vec3(genre.sway * sign, 0.4 * genre.sway * sign, 0.0);
    for (std::size_t j = 0; j < rot::kJointCount; ++j) {
      const rot::Vec3 jitter(dance_rng.normal(), dance_rng.normal(), dance_rng.normal());
      pose.rotations[j] = rot::axis_angle_to_matrix(base[j] + sign * genre.amplitude * dirs[j] + 0.03 * jitter);
    }
    info.keyframes.push_back(frame);
    info.keyframe_aligned.push_back(aligned);
    info.chords.push_back(chord);
    keyposes.push_back(pose);
  }

  std::vector<rot::Pose> poses(frames);
  std::size_t seg = 0;
  for (long t = 0; t < T; ++t) {
    while (seg + 2 < info.keyframes.size() && info.keyframes[seg + 1] <= t) ++seg;
    const long a = info.keyframes[seg];
    const long b = info.keyframes[seg + 1];
    const double tau = std::clamp(double(t - a) / double(b - a), 0.0, 1.0);
    const double s = 0.5 * (1.0 - std::cos(std::numbers::pi * tau));
    rot::Pose& p = poses[std::size_t(t)];
    p.translation = (1.0 - s) * keyposes[seg].translation + s * keyposes[seg + 1].translation;
    for (std::size_t j = 0; j < rot::kJointCount; ++j) {
      p.rotations[j] = rot::slerp(keyposes[seg].rotations[j], keyposes[seg + 1].rotations[j], s);
    }
  }

  if (truth) *truth = std::move(info);
  return {MusicSequence(std::move(m), options.fps), DanceSequence::from_poses(poses, options.fps)};
}

PairedDataset make_synthetic_dataset(std::uint64_t seed, const SynthDatasetOptions& options) {
  std::vector<const GenreTemplate*> genres;
  if (options.genres.empty()) {
    for (const auto& g : genre_templates()) genres.push_back(&g);
  } else {
    for (const auto& name : options.genres) genres.push_back(&find_genre(name));
  }
  Rng rng = Rng(seed).substream("dataset");
  PairedDataset ds;
  const std::size_t total = options.train_pairs + options.test_pairs;
  for (std::size_t i = 0; i < total; ++i) {
    const GenreTemplate& g = *genres[i % genres.size()];
    auto [music, dance] = synth_pair(rng.next_u64(), options.frames, g, options.synth);
    ds.samples.push_back({std::move(music), std::move(dance), g.name, i < options.train_pairs ? Split::train : Split::test});
  }
  return ds;
}

}  // namespace duet::data
