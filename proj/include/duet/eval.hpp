#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "duet/sequence.hpp"
#include "duet/skeleton.hpp"
#include "duet/train.hpp"

namespace duet::eval {

// ---------------------------------------------------------------------------
// Dance metrics (meters)

/// Mean over frames and joints of the Euclidean distance between FK positions.
double frechet_distance(const data::DanceSequence& generated, const data::DanceSequence& truth,
                        const rot::Skeleton& skeleton = rot::Skeleton::canonical());

/// Mean over frames and joints of the spread of a joint's position across the
/// generations: sqrt(mean_g |p_g - mean(p)|^2). Needs at least two.
double diversity(std::span<const data::DanceSequence> generations,
                 const rot::Skeleton& skeleton = rot::Skeleton::canonical());

// ---------------------------------------------------------------------------
// Beats alignment

inline constexpr std::size_t kBeatWindow = 5;  // frames, 0.2 s at 25 fps

/// speed[t] = mean over joints of |p(t+1) - p(t)|, length T - 1.
std::vector<double> joint_speed(const data::DanceSequence& dance,
                                const rot::Skeleton& skeleton = rot::Skeleton::canonical());

/// Strict local minima; a plateau bounded by larger values on both sides
/// counts once, at its first index. Endpoints never count. Values within
/// `tolerance` of each other compare equal.
std::vector<std::size_t> local_minima(std::span<const double> values, double tolerance = 0.0);

/// Speed tolerance for kinematic beats, relative to the peak speed, so that
/// rounding noise in FK does not create minima in uniform motion.
inline constexpr double kSpeedTolerance = 1e-9;

/// Frames whose beat flag is above 0.5.
std::vector<std::size_t> music_beats(const data::MusicSequence& music);

struct BeatsAlignment {
  double percent = 0.0;
  std::size_t kinematic_beats = 0;
  std::size_t matched = 0;
  /// No kinematic beats were found; percent is 0.
  bool no_kinematic_beats = false;
};

/// 100 * (kinematic beats with a music beat within +-window) / kinematic beats.
BeatsAlignment align_beats(std::span<const std::size_t> kinematic, std::span<const std::size_t> music,
                           std::size_t window = kBeatWindow);

/// Requires equal lengths and 25 fps.
BeatsAlignment beats_alignment(const data::DanceSequence& dance, const data::MusicSequence& music,
                               const rot::Skeleton& skeleton = rot::Skeleton::canonical());

// ---------------------------------------------------------------------------
// Notes accuracy

/// Argmax chroma bin per frame, lowest index on ties; -1 for an all-zero frame.
std::vector<int> chroma_notes(const data::MusicSequence& music);

/// Argmax of the time-summed chroma, lowest index on ties.
int key_root(const data::MusicSequence& music);

/// Shift that maps the key root to C (major) or A (minor).
int transposition(int root, data::ChordQuality quality);

struct NotesAccuracy {
  double accuracy = 0.0;  // over compared frames; 0 if none
  std::size_t compared = 0;
  std::size_t skipped = 0;  // frames where either piece has all-zero chroma
};

/// Both pieces are transposed to C major / A minor before comparing argmax
/// notes frame by frame. A missing quality is treated as major.
NotesAccuracy notes_accuracy(const data::MusicSequence& generated, const data::MusicSequence& truth,
                             std::optional<data::ChordQuality> generated_quality = std::nullopt,
                             std::optional<data::ChordQuality> truth_quality = std::nullopt);

/// Counts of argmax notes per pitch class over non-silent frames.
std::array<std::size_t, data::kChromaBins> note_histogram(const data::MusicSequence& music);

// ---------------------------------------------------------------------------
// Reports

struct SequenceResult {
  std::size_t index = 0;  // position in the test split
  std::string genre;
  double frechet = 0.0;
  double diversity = 0.0;
  double beats_alignment = 0.0;
  bool no_kinematic_beats = false;
  double notes_accuracy = 0.0;
  std::size_t skipped_frames = 0;
};

struct Summary {
  std::size_t sequences = 0;
  double frechet = 0.0;
  double diversity = 0.0;
  double beats_alignment = 0.0;
  double notes_accuracy = 0.0;
};

struct EvalReport {
  Summary overall;
  std::map<std::string, Summary> per_genre;
  std::vector<SequenceResult> sequences;
  std::array<std::size_t, data::kChromaBins> generated_notes{};
  std::array<std::size_t, data::kChromaBins> truth_notes{};

  /// Recomputes overall and per-genre means from `sequences`.
  void summarize();
  /// Distances >= 0, percent in [0, 100], accuracy in [0, 1].
  [[nodiscard]] bool valid() const;
  [[nodiscard]] std::string to_json() const;
  static std::string csv_header();
  [[nodiscard]] std::string csv() const;  // header plus one row per sequence
};

struct EvalOptions {
  std::size_t window = 75;       // frames per generation window
  std::size_t generations = 5;   // dances per music input for diversity
  std::size_t trials = 1;        // diversity trials averaged per input
  std::size_t max_sequences = 0; // 0 = whole test split
};

/// Generates from every test pair and scores it. Start tokens come from the
/// "start_tokens" substream of `seed`. The chord seed's quality serves as the
/// generated piece's key metadata; the ground truth is treated as major.
EvalReport evaluate(const train::Generators& generators, const data::PairedDataset& dataset, std::uint64_t seed,
                    const EvalOptions& options = {}, const rot::Skeleton& skeleton = rot::Skeleton::canonical());

/// Report for a generated pair scored against a reference pair.
EvalReport compare(const data::PairedSample& generated, const data::PairedSample& reference,
                   const rot::Skeleton& skeleton = rot::Skeleton::canonical());

/// Bar chart of two note histograms in one SVG document.
std::string note_histogram_svg(const std::array<std::size_t, data::kChromaBins>& generated,
                               const std::array<std::size_t, data::kChromaBins>& truth,
                               const std::string& title = "Histogram of music notes");

/// Joint speed curve with kinematic beats (circles) and music beats (ticks).
std::string speed_curve_svg(std::span<const double> speed, std::span<const std::size_t> kinematic_beats,
                            std::span<const std::size_t> music_beats, const std::string& title = "Joint speed");

}  // namespace duet::eval
