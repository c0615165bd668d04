#include "duet/losses.hpp"

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "duet/errors.hpp"
#include "duet/rotations.hpp"

namespace duet::loss {

namespace {

using ad::Tensor;

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Column permutation x -> (x1, x2, x0) when shift = 1, (x2, x0, x1) when 2.
Tensor cyclic_shift(std::size_t shift) {
  Tensor p = Tensor::matrix(3, 3);
  for (std::size_t c = 0; c < 3; ++c) p((c + shift) % 3, c) = 1.0;
  return p;
}

void check_columns(const Tensor& norms, std::size_t batch, const char* which) {
  for (std::size_t r = 0; r < norms.rows(); ++r) {
    if (norms(r, 0) >= rot::kSixdDegenerateNorm) continue;
    const std::size_t row = r / rot::kJointCount, joint = r % rot::kJointCount;
    throw DegenerateRotationError("frame " + std::to_string(row / batch) + ", joint " + std::to_string(joint) +
                                  " (sequence " + std::to_string(row % batch) + "): 6D rotation has " + which);
  }
}

Var reduce(Var total, std::size_t batch, BatchReduction reduction) {
  return reduction == BatchReduction::mean ? ad::scale(total, 1.0 / double(batch)) : total;
}

}  // namespace

double dance_metric(const data::DanceSequence& a, const data::DanceSequence& b) {
  if (a.length() != b.length()) {
    throw ShapeError("dance_metric: lengths differ (" + std::to_string(a.length()) + " vs " +
                     std::to_string(b.length()) + ")");
  }
  if (a.fps() != b.fps()) throw ShapeError("dance_metric: frame rates differ");
  double total = 0.0;
  for (std::size_t t = 0; t < a.length(); ++t) {
    total += (a.translation(t) - b.translation(t)).cwiseAbs().sum();
    for (std::size_t j = 0; j < rot::kJointCount; ++j) {
      const double angle = rot::geodesic(a.rotation(t, j), b.rotation(t, j));
      total += angle * angle;
    }
  }
  return total;
}

double music_metric(const data::MusicSequence& a, const data::MusicSequence& b) {
  if (a.length() != b.length()) {
    throw ShapeError("music_metric: lengths differ (" + std::to_string(a.length()) + " vs " +
                     std::to_string(b.length()) + ")");
  }
  return (a.chroma_beat() - b.chroma_beat()).cwiseAbs().sum();
}

Var dance_metric(Var generated, const FrameMatrix& target, std::size_t batch) {
  ad::Tape& tape = *generated.tape;
  if (generated.cols() != data::kDanceChannels || std::size_t(target.cols()) != data::kDanceChannels ||
      std::size_t(target.rows()) != generated.rows()) {
    throw ShapeError("dance_metric: generated " + generated.value().shape_string() + " and target [" +
                     std::to_string(target.rows()) + "x" + std::to_string(target.cols()) + "] do not match");
  }
  const std::size_t frames = generated.rows(), rows = frames * rot::kJointCount;

  Tensor target_translation = Tensor::matrix(frames, 3);
  std::vector<Tensor> target_columns(3, Tensor::matrix(rows, 3));
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t c = 0; c < 3; ++c) target_translation(f, c) = target(Eigen::Index(f), Eigen::Index(c));
    for (std::size_t j = 0; j < rot::kJointCount; ++j) {
      rot::Rotation6D sixd;
      for (std::size_t c = 0; c < 6; ++c)
        sixd.values[c] = target(Eigen::Index(f), Eigen::Index(data::kRotationBegin + 6 * j + c));
      const rot::Mat3 r = rot::from_sixd(sixd);
      for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t c = 0; c < 3; ++c) target_columns[k](f * rot::kJointCount + j, c) = r(Eigen::Index(c), Eigen::Index(k));
    }
  }

  const Var translation_error =
      ad::sum(ad::abs(ad::slice_cols(generated, 0, 3) - tape.constant(std::move(target_translation))));

  // Gram-Schmidt on every 6D block at once, one row per (frame, joint).
  const Var sixd = ad::reshape(ad::slice_cols(generated, data::kRotationBegin, data::kDanceChannels), rows, 6);
  const Var a1 = ad::slice_cols(sixd, 0, 3);
  const Var a2 = ad::slice_cols(sixd, 3, 6);
  const Var n1 = ad::sqrt(ad::sum_cols(ad::square(a1)));
  check_columns(n1.value(), batch, "a vanishing first column");
  const Var b1 = a1 * ad::reciprocal(n1);
  const Var u2 = a2 - b1 * ad::sum_cols(b1 * a2);
  const Var n2 = ad::sqrt(ad::sum_cols(ad::square(u2)));
  check_columns(n2.value(), batch, "a second column parallel to the first");
  const Var b2 = u2 * ad::reciprocal(n2);
  const Var yzx = tape.constant(cyclic_shift(1)), zxy = tape.constant(cyclic_shift(2));
  const Var b3 = ad::matmul(b1, yzx) * ad::matmul(b2, zxy) - ad::matmul(b1, zxy) * ad::matmul(b2, yzx);

  const Var trace = ad::sum_cols(b1 * tape.constant(target_columns[0]) + b2 * tape.constant(target_columns[1]) +
                                 b3 * tape.constant(target_columns[2]));
  const Var angles = ad::arccos_squared(ad::add_scalar(ad::scale(trace, 0.5), -0.5));
  return translation_error + ad::sum(angles);
}

Var music_metric(Var generated, const FrameMatrix& target) {
  if (generated.cols() != data::kMusicOutputChannels || std::size_t(target.cols()) != data::kMusicOutputChannels ||
      std::size_t(target.rows()) != generated.rows()) {
    throw ShapeError("music_metric: generated " + generated.value().shape_string() + " and target [" +
                     std::to_string(target.rows()) + "x" + std::to_string(target.cols()) + "] do not match");
  }
  return ad::sum(ad::abs(generated - generated.tape->constant(model::to_tensor(target))));
}

Var expand_music(ad::Tape& tape, Var compact) {
  if (compact.cols() != data::kMusicOutputChannels)
    throw ShapeError("expand_music: expected 13 channels, got " + std::to_string(compact.cols()));
  const std::vector<Var> parts{tape.constant(Tensor::matrix(compact.rows(), data::kChromaBegin)), compact};
  return ad::concat_cols(parts);
}

LossPair reconstruction_losses(ad::Tape& tape, const model::Batch& batch, const model::SequenceModel& music_to_dance,
                               const model::SequenceModel& dance_to_music, BatchReduction reduction) {
  const Var music = tape.constant(model::to_tensor(batch.music));
  const Var dance = tape.constant(model::to_tensor(batch.dance));
  const Var music_target = tape.constant(model::to_tensor(batch.music_target));
  const Var dance_start = tape.constant(model::to_tensor(batch.dance_start));
  const Var music_start = tape.constant(model::to_tensor(batch.music_start));

  const Var dance_hat = music_to_dance.teacher_forced(music, dance_start, dance, batch.size);
  const Var music_hat = dance_to_music.teacher_forced(dance, music_start, music_target, batch.size);
  return {reduce(dance_metric(dance_hat, batch.dance, batch.size), batch.size, reduction),
          reduce(music_metric(music_hat, batch.music_target), batch.size, reduction)};
}

LossPair cycle_losses(ad::Tape& tape, const model::Batch& batch, const model::SequenceModel& music_to_dance,
                      const model::SequenceModel& dance_to_music, BatchReduction reduction) {
  const Var music = tape.constant(model::to_tensor(batch.music));
  const Var dance = tape.constant(model::to_tensor(batch.dance));
  const Var dance_start = tape.constant(model::to_tensor(batch.dance_start));
  const Var music_start = tape.constant(model::to_tensor(batch.music_start));

  const Var music_mid = dance_to_music.autoregressive(dance, music_start, batch.size);
  const Var dance_back = music_to_dance.autoregressive(expand_music(tape, music_mid), dance_start, batch.size);
  const Var dance_mid = music_to_dance.autoregressive(music, dance_start, batch.size);
  const Var music_back = dance_to_music.autoregressive(dance_mid, music_start, batch.size);
  return {reduce(dance_metric(dance_back, batch.dance, batch.size), batch.size, reduction),
          reduce(music_metric(music_back, batch.music_target), batch.size, reduction)};
}

bool LossBreakdown::valid() const {
  for (double v : {dance_reconstruction, music_reconstruction, dance_cycle, music_cycle, gw, total_music_to_dance,
                   total_dance_to_music}) {
    if (!std::isfinite(v)) return false;
  }
  return dance_reconstruction >= 0 && music_reconstruction >= 0 && dance_cycle >= 0 && music_cycle >= 0 && gw >= 0;
}

std::string LossBreakdown::csv_header() {
  return "dance_reconstruction,music_reconstruction,dance_cycle,music_cycle,gw,total_music_to_dance,"
         "total_dance_to_music";
}

std::string LossBreakdown::csv_row() const {
  return number(dance_reconstruction) + "," + number(music_reconstruction) + "," + number(dance_cycle) + "," +
         number(music_cycle) + "," + number(gw) + "," + number(total_music_to_dance) + "," +
         number(total_dance_to_music);
}

}  // namespace duet::loss
