#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "duet/errors.hpp"
#include "duet/losses.hpp"
#include "duet/model.hpp"
#include "duet/synth.hpp"
#include "gradcheck.hpp"
#include "random_rotation.hpp"

using namespace duet;
using data::DanceSequence;
using data::FrameMatrix;
using data::MusicSequence;

namespace {

DanceSequence random_dance(Rng& rng, std::size_t frames) {
  std::vector<rot::Pose> poses(frames);
  for (auto& pose : poses) {
    pose.translation = testing::random_vec3(rng, 0.3);
    for (auto& r : pose.rotations) r = testing::random_rotation(rng);
  }
  return DanceSequence::from_poses(poses);
}

MusicSequence random_music(Rng& rng, std::size_t frames) {
  FrameMatrix m(Eigen::Index(frames), Eigen::Index(data::kMusicChannels));
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(t, c) = rng.uniform();
    m(t, Eigen::Index(data::kBeatChannel)) = rng.below(2) == 0 ? 0.0 : 1.0;
  }
  return MusicSequence(m);
}

std::pair<MusicSequence, DanceSequence> pair(std::uint64_t seed, std::size_t frames) {
  return data::synth_pair(seed, frames, data::find_genre("pop"));
}

model::GeneratorWeights tiny(model::Direction direction, std::uint64_t seed) {
  Rng rng(seed);
  return model::GeneratorWeights::initialize(model::ModelConfig::for_direction(direction, 8, 1, 2, 16), rng);
}

/// Returns a fixed output for inputs equal to a registered key; the start
/// token and batch size are ignored.
class LookupModel final : public model::SequenceModel {
 public:
  explicit LookupModel(std::size_t out_channels) : out_(out_channels) {}
  void add(const FrameMatrix& key, const FrameMatrix& value) { table_.emplace_back(key, value); }

  std::size_t output_channels() const override { return out_; }
  ad::Var teacher_forced(ad::Var input, ad::Var, ad::Var, std::size_t) const override { return lookup(input); }
  ad::Var autoregressive(ad::Var input, ad::Var, std::size_t) const override { return lookup(input); }

 private:
  ad::Var lookup(ad::Var input) const {
    const FrameMatrix x = model::to_frames(input.value());
    for (const auto& [key, value] : table_) {
      if (key.rows() == x.rows() && key.cols() == x.cols() && key == x)
        return input.tape->constant(model::to_tensor(value));
    }
    throw Error("lookup model: unknown input");
  }
  std::size_t out_;
  std::vector<std::pair<FrameMatrix, FrameMatrix>> table_;
};

/// Ignores its input and emits fixed frames.
class ConstantModel final : public model::SequenceModel {
 public:
  explicit ConstantModel(FrameMatrix frames) : frames_(std::move(frames)) {}
  std::size_t output_channels() const override { return std::size_t(frames_.cols()); }
  ad::Var teacher_forced(ad::Var input, ad::Var, ad::Var, std::size_t) const override { return emit(input); }
  ad::Var autoregressive(ad::Var input, ad::Var, std::size_t) const override { return emit(input); }

 private:
  ad::Var emit(ad::Var input) const { return input.tape->constant(model::to_tensor(frames_)); }
  FrameMatrix frames_;
};

model::Batch batch_of(const std::vector<std::pair<MusicSequence, DanceSequence>>& pairs) {
  std::vector<MusicSequence> m;
  std::vector<DanceSequence> d;
  for (const auto& [music, dance] : pairs) {
    m.push_back(music);
    d.push_back(dance);
  }
  return model::make_batch(m, d);
}

}  // namespace

TEST_CASE("identical sequences have zero distance") {
  Rng rng(1);
  const DanceSequence y = random_dance(rng, 6);
  const MusicSequence x = random_music(rng, 6);
  // arccos near 1 leaves ~1e-16 per joint.
  CHECK(loss::dance_metric(y, y) >= 0.0);
  CHECK(loss::dance_metric(y, y) < 1e-12);
  CHECK(loss::music_metric(x, x) == 0.0);
}

TEST_CASE("a unit root offset on every one of 75 frames costs 75") {
  Rng rng(2);
  const DanceSequence y = random_dance(rng, 75);
  DanceSequence z = y;
  for (Eigen::Index t = 0; t < 75; ++t) z.frames()(t, 0) += 1.0;
  CHECK(std::fabs(loss::dance_metric(y, z) - 75.0) < 1e-9);
}

TEST_CASE("a quarter-turn on one joint in one frame adds (pi/2)^2") {
  Rng rng(3);
  const DanceSequence y = random_dance(rng, 10);
  std::vector<rot::Pose> poses;
  for (std::size_t t = 0; t < y.length(); ++t) poses.push_back(y.pose(t));
  poses[4].rotations[7] = poses[4].rotations[7] * rot::axis_angle_to_matrix({0.0, std::numbers::pi / 2, 0.0});
  const DanceSequence z = DanceSequence::from_poses(poses);
  const double quarter = std::numbers::pi / 2;
  CHECK(std::fabs(loss::dance_metric(y, z) - quarter * quarter) < 1e-9);
}

TEST_CASE("music metric counts chroma and beat L1 differences") {
  Rng rng(4);
  const MusicSequence x = random_music(rng, 12);
  MusicSequence chroma = x;
  chroma.frames()(5, Eigen::Index(data::kChromaBegin + 3)) += 0.5;
  CHECK(loss::music_metric(x, chroma) == doctest::Approx(0.5).epsilon(1e-12));

  for (int k : {1, 3, 12}) {
    MusicSequence flipped = x;
    for (int t = 0; t < k; ++t) {
      double& beat = flipped.frames()(t, Eigen::Index(data::kBeatChannel));
      beat = 1.0 - beat;
    }
    CHECK(loss::music_metric(x, flipped) == double(k));
  }
}

TEST_CASE("music metric ignores MFCC channels") {
  Rng rng(5);
  const MusicSequence x = random_music(rng, 8), y = random_music(rng, 8);
  MusicSequence x2 = x;
  for (Eigen::Index t = 0; t < 8; ++t)
    for (Eigen::Index c = 0; c < Eigen::Index(data::kChromaBegin); ++c) x2.frames()(t, c) = rng.normal(0.0, 10.0);
  CHECK(loss::music_metric(x2, y) == loss::music_metric(x, y));
  CHECK(loss::music_metric(MusicSequence(x.chroma_beat()), y) == loss::music_metric(x, y));
}

TEST_CASE("metrics are symmetric and invariant to a joint time relabelling") {
  Rng rng(6);
  const DanceSequence a = random_dance(rng, 9), b = random_dance(rng, 9);
  const MusicSequence x = random_music(rng, 9), y = random_music(rng, 9);
  CHECK(loss::dance_metric(a, b) == doctest::Approx(loss::dance_metric(b, a)).epsilon(1e-12));
  CHECK(loss::music_metric(x, y) == doctest::Approx(loss::music_metric(y, x)).epsilon(1e-12));
  CHECK(loss::dance_metric(a, b) > 0.0);

  const std::vector<Eigen::Index> order{4, 0, 8, 2, 6, 1, 3, 7, 5};
  FrameMatrix pa(a.frames().rows(), a.frames().cols()), pb = pa;
  for (Eigen::Index t = 0; t < 9; ++t) {
    pa.row(t) = a.frames().row(order[std::size_t(t)]);
    pb.row(t) = b.frames().row(order[std::size_t(t)]);
  }
  CHECK(loss::dance_metric(DanceSequence(pa), DanceSequence(pb)) ==
        doctest::Approx(loss::dance_metric(a, b)).epsilon(1e-12));
}

TEST_CASE("metrics reject length mismatches") {
  Rng rng(7);
  CHECK_THROWS_AS(loss::dance_metric(random_dance(rng, 3), random_dance(rng, 4)), ShapeError);
  CHECK_THROWS_AS(loss::music_metric(random_music(rng, 3), random_music(rng, 4)), ShapeError);
}

TEST_CASE("graph metrics equal the value metrics") {
  Rng rng(8);
  const DanceSequence a = random_dance(rng, 5), b = random_dance(rng, 5);
  const MusicSequence x = random_music(rng, 5), y = random_music(rng, 5);
  ad::Tape tape;
  const double dance = loss::dance_metric(tape.constant(model::to_tensor(a.frames())), b.frames()).item();
  CHECK(dance == doctest::Approx(loss::dance_metric(a, b)).epsilon(1e-12));
  const double music = loss::music_metric(tape.constant(model::to_tensor(x.chroma_beat())), y.chroma_beat()).item();
  CHECK(music == doctest::Approx(loss::music_metric(x, y)).epsilon(1e-12));
}

TEST_CASE("graph dance metric passes a finite-difference check on unnormalized 6D input") {
  Rng rng(9);
  const DanceSequence target = random_dance(rng, 2);
  ad::Tensor generated = model::to_tensor(random_dance(rng, 2).frames());
  for (double& v : generated.data()) v *= rng.uniform(0.7, 1.3);
  auto f = [&](ad::Tape&, const std::vector<ad::Var>& v) { return loss::dance_metric(v[0], target.frames()); };
  CHECK(testing::max_gradient_error(f, {generated}, 1e-6) < 1e-4);
}

TEST_CASE("a degenerate generated rotation names its frame and joint") {
  Rng rng(10);
  const DanceSequence y = random_dance(rng, 3);
  FrameMatrix bad = y.frames();
  for (Eigen::Index c = 0; c < 3; ++c) bad(2, Eigen::Index(data::kRotationBegin + 6 * 5) + c) = 0.0;
  ad::Tape tape;
  try {
    (void)loss::dance_metric(tape.constant(model::to_tensor(bad)), y.frames());
    FAIL("expected DegenerateRotationError");
  } catch (const DegenerateRotationError& e) {
    CHECK(std::string(e.what()).find("frame 2, joint 5") != std::string::npos);
  }
  try {
    (void)loss::dance_metric(DanceSequence(bad), y);
    FAIL("expected DegenerateRotationError");
  } catch (const DegenerateRotationError& e) {
    CHECK(std::string(e.what()).find("frame 2, joint 5") != std::string::npos);
  }
}

TEST_CASE("generators that reproduce the ground truth have zero reconstruction loss") {
  const model::Batch batch = batch_of({pair(1, 10), pair(2, 10)});
  const ConstantModel md(batch.dance), dm(batch.music_target);
  ad::Tape tape;
  const loss::LossPair rec = loss::reconstruction_losses(tape, batch, md, dm);
  CHECK(rec.dance.item() < 1e-12);
  CHECK(rec.music.item() == 0.0);
}

TEST_CASE("single-pair reconstruction equals the metric on that pair") {
  const auto [x, y] = pair(3, 10);
  const model::GeneratorWeights md_w = tiny(model::Direction::music_to_dance, 1);
  const model::GeneratorWeights dm_w = tiny(model::Direction::dance_to_music, 2);
  const model::Batch batch = batch_of({{x, y}});
  ad::Tape tape;
  const model::BoundGenerator md(tape, md_w, false), dm(tape, dm_w, false);
  const loss::LossPair rec = loss::reconstruction_losses(tape, batch, md, dm);

  ad::Tape direct;
  const model::BoundGenerator md2(direct, md_w, false), dm2(direct, dm_w, false);
  const auto c = [&](const FrameMatrix& m) { return direct.constant(model::to_tensor(m)); };
  const FrameMatrix dance_hat = model::to_frames(
      md2.teacher_forced(c(x.full_frames()), c(y.frames().topRows(1)), c(y.frames()), 1).value());
  const FrameMatrix music_hat = model::to_frames(
      dm2.teacher_forced(c(y.frames()), c(x.chroma_beat().topRows(1)), c(x.chroma_beat()), 1).value());
  CHECK(rec.dance.item() == doctest::Approx(loss::dance_metric(y, DanceSequence(dance_hat))).epsilon(1e-12));
  CHECK(rec.music.item() == doctest::Approx(loss::music_metric(x, MusicSequence(music_hat))).epsilon(1e-12));
}

TEST_CASE("batch reconstruction is the sum of single-pair values") {
  const model::GeneratorWeights md_w = tiny(model::Direction::music_to_dance, 3);
  const model::GeneratorWeights dm_w = tiny(model::Direction::dance_to_music, 4);
  const auto p1 = pair(4, 12), p2 = pair(5, 12);
  auto losses = [&](const model::Batch& batch, loss::BatchReduction reduction) {
    ad::Tape tape;
    const model::BoundGenerator md(tape, md_w, false), dm(tape, dm_w, false);
    const loss::LossPair rec = loss::reconstruction_losses(tape, batch, md, dm, reduction);
    return std::pair{rec.dance.item(), rec.music.item()};
  };
  const auto [d1, m1] = losses(batch_of({p1}), loss::BatchReduction::sum);
  const auto [d2, m2] = losses(batch_of({p2}), loss::BatchReduction::sum);
  const auto [d12, m12] = losses(batch_of({p1, p2}), loss::BatchReduction::sum);
  CHECK(std::fabs(d12 - (d1 + d2)) <= 1e-12 * (d1 + d2));
  CHECK(std::fabs(m12 - (m1 + m2)) <= 1e-12 * (m1 + m2));
  const auto [dmean, mmean] = losses(batch_of({p1, p2}), loss::BatchReduction::mean);
  CHECK(dmean == doctest::Approx(d12 / 2).epsilon(1e-15));
  CHECK(mmean == doctest::Approx(m12 / 2).epsilon(1e-15));
}

TEST_CASE("mutually inverse generators have zero cycle loss") {
  const auto [x, y] = pair(6, 10);
  const model::Batch batch = batch_of({{x, y}});
  LookupModel md(data::kDanceChannels), dm(data::kMusicOutputChannels);
  dm.add(y.frames(), x.chroma_beat());
  md.add(MusicSequence(x.chroma_beat()).full_frames(), y.frames());
  md.add(x.full_frames(), y.frames());
  ad::Tape tape;
  const loss::LossPair cyc = loss::cycle_losses(tape, batch, md, dm);
  CHECK(cyc.dance.item() < 1e-12);
  CHECK(cyc.music.item() == 0.0);
}

TEST_CASE("dance cycle is zero whenever the composition reproduces the dance") {
  const auto [x, y] = pair(7, 10);
  const model::Batch batch = batch_of({{x, y}});
  const model::GeneratorWeights dm_w = tiny(model::Direction::dance_to_music, 5);
  const ConstantModel md(y.frames());
  ad::Tape tape;
  const model::BoundGenerator dm(tape, dm_w, true);
  const loss::LossPair cyc = loss::cycle_losses(tape, batch, md, dm);
  CHECK(cyc.dance.item() < 1e-12);
  CHECK(cyc.music.item() > 0.0);
}

TEST_CASE("cycle losses equal the explicitly composed generations") {
  const model::GeneratorWeights md_w = tiny(model::Direction::music_to_dance, 6);
  const model::GeneratorWeights dm_w = tiny(model::Direction::dance_to_music, 7);
  const auto p1 = pair(8, 8), p2 = pair(9, 8);
  const model::Batch batch = batch_of({p1, p2});
  ad::Tape tape;
  const model::BoundGenerator md(tape, md_w, false), dm(tape, dm_w, false);
  const loss::LossPair cyc = loss::cycle_losses(tape, batch, md, dm);

  double dance = 0.0, music = 0.0;
  for (const auto& [x, y] : {p1, p2}) {
    const FrameMatrix music_start = x.chroma_beat().topRows(1), dance_start = y.frames().topRows(1);
    const FrameMatrix music_mid = model::generate(dm_w, y.frames(), music_start, 8);
    const FrameMatrix dance_back = model::generate(md_w, MusicSequence(music_mid).full_frames(), dance_start, 8);
    dance += loss::dance_metric(y, DanceSequence(dance_back));
    const FrameMatrix dance_mid = model::generate(md_w, x.full_frames(), dance_start, 8);
    const FrameMatrix music_back = model::generate(dm_w, dance_mid, music_start, 8);
    music += loss::music_metric(x, MusicSequence(music_back));
  }
  CHECK(std::fabs(cyc.dance.item() - dance) <= 1e-12 * dance);
  CHECK(std::fabs(cyc.music.item() - music) <= 1e-12 * music);
}

TEST_CASE("cycle gradients reach both generators") {
  const model::GeneratorWeights md_w = tiny(model::Direction::music_to_dance, 8);
  const model::GeneratorWeights dm_w = tiny(model::Direction::dance_to_music, 9);
  const model::Batch batch = batch_of({pair(10, 6), pair(11, 6)});
  ad::Tape tape;
  const model::BoundGenerator md(tape, md_w, true), dm(tape, dm_w, true);
  const loss::LossPair cyc = loss::cycle_losses(tape, batch, md, dm);
  const ad::Gradients g = tape.backward(cyc.dance);
  auto norm = [&](const model::BoundGenerator& gen) {
    double s = 0.0;
    for (const ad::Var& p : gen.parameters())
      for (double v : g[p].data()) s += v * v;
    return s;
  };
  CHECK(norm(md) > 0.0);
  CHECK(norm(dm) > 0.0);
}

TEST_CASE("loss breakdown serializes one CSV column per field") {
  loss::LossBreakdown b;
  b.dance_reconstruction = 1.5;
  b.gw = 0.25;
  CHECK(b.valid());
  const std::string header = loss::LossBreakdown::csv_header(), row = b.csv_row();
  CHECK(std::count(header.begin(), header.end(), ',') == std::count(row.begin(), row.end(), ','));
  CHECK(row.rfind("1.5,0,0,0,0.25,", 0) == 0);
  b.music_cycle = std::nan("");
  CHECK_FALSE(b.valid());
}
