#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "duet/autodiff.hpp"
#include "duet/rng.hpp"
#include "duet/sequence.hpp"

namespace duet::model {

using ad::Tape;
using ad::Tensor;
using ad::Var;
using data::FrameMatrix;

enum class Direction { music_to_dance, dance_to_music };

/// "music-to-dance" or "dance-to-music".
std::string to_string(Direction direction);
Direction parse_direction(std::string_view text);

struct ModelConfig {
  std::size_t input_channels = data::kMusicChannels;
  std::size_t output_channels = data::kDanceChannels;
  std::size_t width = 32;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t feedforward = 64;

  static ModelConfig for_direction(Direction direction, std::size_t width, std::size_t layers, std::size_t heads,
                                   std::size_t feedforward);
  /// Throws ConfigError on zero extents or a width not divisible by heads.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named parameter tensors of one generator in a fixed order.
///
///   in.w, in.b                        input projection
///   enc.<l>.{ln1,ln2}.{g,b}           pre-norm gains and biases
///   enc.<l>.attn.{wq,wk,wv,wo}
///   enc.<l>.ff.{w1,b1,w2,b2}
///   enc.ln.{g,b}
///   dec.in.{w,b}                      previous-frame projection
///   dec.<l>.{ln1,ln2,ln3}.{g,b}
///   dec.<l>.self.{wq,wk,wv,wo}, dec.<l>.cross.{wq,wk,wv,wo}
///   dec.<l>.ff.{w1,b1,w2,b2}
///   dec.ln.{g,b}, out.w, out.b        output head
class GeneratorWeights {
 public:
  GeneratorWeights() = default;
  /// Correctly shaped tensors: zeros, with layer-norm gains at 1.
  explicit GeneratorWeights(const ModelConfig& config);
  static GeneratorWeights initialize(const ModelConfig& config, Rng& rng);

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  [[nodiscard]] std::size_t size() const { return tensors_.size(); }
  [[nodiscard]] const std::string& name(std::size_t i) const { return names_[i]; }
  [[nodiscard]] Tensor& operator[](std::size_t i) { return tensors_[i]; }
  [[nodiscard]] const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  /// Index of a named tensor; ConfigError if unknown.
  [[nodiscard]] std::size_t index(std::string_view name) const;
  [[nodiscard]] Tensor& at(std::string_view name) { return tensors_[index(name)]; }
  [[nodiscard]] const Tensor& at(std::string_view name) const { return tensors_[index(name)]; }
  [[nodiscard]] std::size_t parameter_count() const;

  friend bool operator==(const GeneratorWeights& a, const GeneratorWeights& b) {
    return a.config_ == b.config_ && a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  void add(std::string name, Tensor value);

  ModelConfig config_;
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

Tensor to_tensor(const FrameMatrix& frames);
FrameMatrix to_frames(const Tensor& tensor);

/// Fixed sinusoidal encoding for times offset..offset+length-1, one row per time.
Tensor positional_encoding(std::size_t length, std::size_t width, std::size_t offset = 0);

// ---------------------------------------------------------------------------
// Batches. Sequences of one batch are stacked time-major: row t * B + b holds
// frame t of sequence b.

FrameMatrix interleave(std::span<const FrameMatrix> sequences);
std::vector<FrameMatrix> deinterleave(const FrameMatrix& stacked, std::size_t batch);

struct Batch {
  std::size_t size = 0;
  std::size_t length = 0;
  FrameMatrix music;         // (T*B) x 53
  FrameMatrix music_target;  // (T*B) x 13, chroma + beat
  FrameMatrix dance;         // (T*B) x 147
  FrameMatrix music_start;   // B x 13, first target frame of each sequence
  FrameMatrix dance_start;   // B x 147
};

/// Requires equal counts and equal lengths of at least one frame.
Batch make_batch(std::span<const data::MusicSequence> music, std::span<const data::DanceSequence> dance);

// ---------------------------------------------------------------------------
// Graph-level generators

/// What the losses need from a generator: both decoding modes over a
/// time-major batch.
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;
  [[nodiscard]] virtual std::size_t output_channels() const = 0;
  /// One parallel pass conditioned on [start, targets shifted by one frame].
  [[nodiscard]] virtual Var teacher_forced(Var input, Var start, Var targets, std::size_t batch) const = 0;
  /// Feeds back its own outputs; emits as many frames as the input has.
  [[nodiscard]] virtual Var autoregressive(Var input, Var start, std::size_t batch) const = 0;
};

struct Encoded {
  Var context;    // (T*B) x d
  Var embedding;  // B x d, time mean of the context
  std::size_t batch = 1;
};

/// Attention probabilities collected during a forward pass, in call order;
/// each call contributes one matrix per sequence and head.
using AttentionTrace = std::vector<Tensor>;

/// Generator weights placed on a tape as trainable leaves or as constants.
class BoundGenerator final : public SequenceModel {
 public:
  BoundGenerator(Tape& tape, const GeneratorWeights& weights, bool trainable);

  [[nodiscard]] Tape& tape() const { return *tape_; }
  [[nodiscard]] const ModelConfig& config() const { return config_; }
  /// Leaves in GeneratorWeights order.
  [[nodiscard]] const std::vector<Var>& parameters() const { return params_; }

  [[nodiscard]] Encoded encode(Var input, std::size_t batch, AttentionTrace* trace = nullptr) const;
  [[nodiscard]] Var decode_teacher_forced(const Encoded& memory, Var start, Var targets,
                                          AttentionTrace* trace = nullptr) const;
  [[nodiscard]] Var decode_autoregressive(const Encoded& memory, Var start, std::size_t length) const;

  [[nodiscard]] std::size_t output_channels() const override { return config_.output_channels; }
  [[nodiscard]] Var teacher_forced(Var input, Var start, Var targets, std::size_t batch) const override;
  [[nodiscard]] Var autoregressive(Var input, Var start, std::size_t batch) const override;

 private:
  [[nodiscard]] Var param(const std::string& name) const;
  [[nodiscard]] Var norm(Var x, const std::string& prefix) const;
  [[nodiscard]] Var feedforward(Var x, const std::string& prefix) const;
  [[nodiscard]] Var output_head(Var h) const;

  Tape* tape_;
  ModelConfig config_;
  const GeneratorWeights* weights_;
  std::vector<Var> params_;
};

// ---------------------------------------------------------------------------
// Inference

/// Dance start token: zero translation, each joint rotated about a random
/// axis-angle with N(0, 0.1^2) components. Returned as 1 x 147.
FrameMatrix random_dance_start(Rng& rng);
/// Music start token for a chord: triad chroma and beat = 1, as 1 x 13.
FrameMatrix music_start(const data::ChordSeed& chord);
data::ChordSeed random_chord(Rng& rng);

/// Embedding of one sequence (1 x d).
FrameMatrix embed(const GeneratorWeights& weights, const FrameMatrix& input);

/// Autoregressive generation for one input sequence of any length. The input
/// is cut into windows of `window` frames (the last may be shorter); each
/// window is encoded on its own and decoded from the previous window's last
/// generated frame, the first from `start`.
FrameMatrix generate(const GeneratorWeights& weights, const FrameMatrix& input, const FrameMatrix& start,
                     std::size_t window);

}  // namespace duet::model
