#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "duet/sequence.hpp"

namespace duet::data {

struct ProgressionStep {
  int offset = 0;  // semitones above the key root
  ChordQuality quality = ChordQuality::major;
};

/// Style parameters for synthetic pairs. One chord per bar of four beats.
struct GenreTemplate {
  std::string name;
  int beat_period_min = 14;  // frames per beat
  int beat_period_max = 18;
  int key_root = 0;
  std::vector<ProgressionStep> progression;
  double amplitude = 0.3;  // keyframe rotation scale, radians
  double sway = 0.05;      // root translation swing, meters
};

const std::vector<GenreTemplate>& genre_templates();
const GenreTemplate& find_genre(const std::string& name);

struct SynthOptions {
  /// Probability that a beat's keyframe sits on the beat rather than half a
  /// period later.
  double alignment_fraction = 1.0;
  double fps = kDefaultFps;
};

/// Construction details of a synthetic pair, for tests.
struct SynthTruth {
  int beat_period = 0;
  std::vector<std::size_t> beats;      // music beat frames
  std::vector<long> keyframes;         // may extend past both ends
  std::vector<bool> keyframe_aligned;  // one flag per keyframe
  std::vector<ChordSeed> chords;       // chord at each keyframe's beat
};

/// Music with a periodic beat and the genre's chord progression; dance that
/// eases between chord-dependent keyframe poses, so joint speed dips at each
/// keyframe.
std::pair<MusicSequence, DanceSequence> synth_pair(std::uint64_t seed, std::size_t frames,
                                                   const GenreTemplate& genre, const SynthOptions& options = {},
                                                   SynthTruth* truth = nullptr);

struct SynthDatasetOptions {
  std::size_t train_pairs = 32;
  std::size_t test_pairs = 8;
  std::size_t frames = 24;
  std::vector<std::string> genres;  // empty = every template, round-robin
  SynthOptions synth;
};

PairedDataset make_synthetic_dataset(std::uint64_t seed, const SynthDatasetOptions& options);

}  // namespace duet::data
