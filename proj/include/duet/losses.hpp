#pragma once

#include <string>

#include "duet/autodiff.hpp"
#include "duet/model.hpp"
#include "duet/sequence.hpp"

namespace duet::loss {

using ad::Var;
using data::FrameMatrix;

/// Sum over frames of the L1 translation error plus the squared geodesic
/// angle of every joint. Requires equal lengths and frame rates.
double dance_metric(const data::DanceSequence& a, const data::DanceSequence& b);
/// Sum over frames of the L1 error on chroma and beat; MFCC channels are
/// ignored. Requires equal lengths.
double music_metric(const data::MusicSequence& a, const data::MusicSequence& b);

/// Graph form of dance_metric: `generated` holds (T*B) x 147 time-major
/// frames, `target` the matching constant frames. A degenerate generated 6D
/// block raises DegenerateRotationError naming its frame, joint and sequence.
Var dance_metric(Var generated, const FrameMatrix& target, std::size_t batch = 1);
/// Graph form of music_metric on chroma + beat channels: (T*B) x 13 each.
Var music_metric(Var generated, const FrameMatrix& target);

enum class BatchReduction { sum, mean };

struct LossPair {
  Var dance;
  Var music;
};

/// Teacher-forced reconstruction: L_Y(y, G_MD(x)) and L_X(x, G_DM(y)),
/// summed (or averaged) over the batch.
LossPair reconstruction_losses(ad::Tape& tape, const model::Batch& batch, const model::SequenceModel& music_to_dance,
                               const model::SequenceModel& dance_to_music,
                               BatchReduction reduction = BatchReduction::sum);

/// Autoregressive compositions: L_Y(y, G_MD(G_DM(y))) and L_X(x, G_DM(G_MD(x))).
/// Generated music enters G_MD with zero MFCC channels.
LossPair cycle_losses(ad::Tape& tape, const model::Batch& batch, const model::SequenceModel& music_to_dance,
                      const model::SequenceModel& dance_to_music, BatchReduction reduction = BatchReduction::sum);

/// Zero-fills 13-channel chroma + beat frames to the 53-channel layout.
Var expand_music(ad::Tape& tape, Var compact);

struct LossWeights {
  double gw = 1.0;
  double dance_reconstruction = 1.0;
  double music_reconstruction = 1.0;
  double dance_cycle = 1.0;
  double music_cycle = 1.0;
};

/// Unweighted loss values of one training step; disabled terms are 0.
struct LossBreakdown {
  double dance_reconstruction = 0.0;
  double music_reconstruction = 0.0;
  double dance_cycle = 0.0;
  double music_cycle = 0.0;
  double gw = 0.0;
  /// Weighted objectives routed to G_MD and G_DM.
  double total_music_to_dance = 0.0;
  double total_dance_to_music = 0.0;

  [[nodiscard]] bool valid() const;
  static std::string csv_header();
  [[nodiscard]] std::string csv_row() const;
};

}  // namespace duet::loss
