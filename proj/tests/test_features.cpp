#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "duet/errors.hpp"
#include "duet/manifest.hpp"
#include "duet/mdseq.hpp"
#include "duet/rng.hpp"
#include "duet/synth.hpp"
#include "random_rotation.hpp"

using namespace duet;
using namespace duet::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("duet_features_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), std::streamsize(bytes.size()));
}

bool bit_identical(const FrameMatrix& a, const FrameMatrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * std::size_t(a.size())) == 0;
}

FrameMatrix random_frames(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  FrameMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * std::exp(rng.uniform(-20, 20));
  return m;
}

FormatErrorCode load_error(const fs::path& path, Modality modality) {
  try {
    (void)load_sequence(path, modality);
  } catch (const FormatError& e) {
    return e.code();
  }
  FAIL("expected a FormatError");
  return FormatErrorCode::io;
}

}  // namespace

TEST_CASE("music and dance sequences round-trip bit-exactly") {
  Rng rng(5);
  const fs::path dir = scratch_dir("roundtrip");
  for (Eigen::Index channels : {Eigen::Index(kMusicChannels), Eigen::Index(kMusicOutputChannels)}) {
    const MusicSequence music(random_frames(rng, 17, channels), 30.0);
    save_sequence(music, dir / "m.mdseq");
    const MusicSequence back = load_music(dir / "m.mdseq");
    CHECK(bit_identical(back.frames(), music.frames()));
    CHECK(back.fps() == 30.0);
    save_sequence(back, dir / "m2.mdseq");
    CHECK(read_bytes(dir / "m.mdseq") == read_bytes(dir / "m2.mdseq"));
  }
  const DanceSequence dance(random_frames(rng, 9, kDanceChannels));
  save_sequence(dance, dir / "d.mdseq");
  CHECK(bit_identical(load_dance(dir / "d.mdseq").frames(), dance.frames()));

  const FrameMatrix embeddings = random_frames(rng, 4, 7);
  save_matrix(embeddings, dir / "z.mdseq");
  CHECK(bit_identical(load_matrix(dir / "z.mdseq"), embeddings));
  CHECK(read_bytes(dir / "z.mdseq").size() == kMdseqHeaderBytes + 4 * 7 * 8);
}

TEST_CASE("golden files decode to their documented values and re-encode byte-for-byte") {
  const fs::path dir = DUET_TEST_DATA_DIR;
  const std::string music_bytes = read_bytes(dir / "golden_music.mdseq");
  const std::string dance_bytes = read_bytes(dir / "golden_dance.mdseq");
  REQUIRE(music_bytes.size() == 1720);
  REQUIRE(dance_bytes.size() == 2376);
  CHECK(checksum(music_bytes) == 0xf30bde1a97bf984fULL);
  CHECK(checksum(dance_bytes) == 0x1f025f1c468f299fULL);

  const MusicSequence music = load_music(dir / "golden_music.mdseq");
  CHECK(music.length() == 4);
  CHECK(music.fps() == 25.0);
  // First frame: channel c < 40 holds c / 8 - 3, except channels 5..7.
  CHECK(music.frames()(0, 0) == -3.0);
  CHECK(music.frames()(0, 4) == -2.5);
  CHECK(music.frames()(0, 5) == 0.0);
  CHECK(std::signbit(music.frames()(0, 5)));
  CHECK(music.frames()(0, 6) == 3.141592653589793);
  CHECK(music.frames()(0, 7) == 1e-300);
  CHECK(music.frames()(0, 39) == 39.0 / 8.0 - 3.0);
  CHECK(music.chroma(0, 0) == 0.0);
  CHECK(music.chroma(0, 11) == 1.0);
  CHECK(music.beat(0) == 1.0);
  CHECK(music.beat(1) == 0.0);
  CHECK_NOTHROW(music.check_invariants());
  CHECK(encode(Modality::music, music.frames(), music.fps()) == music_bytes);

  const DanceSequence dance = load_dance(dir / "golden_dance.mdseq");
  CHECK(dance.length() == 2);
  CHECK(dance.translation(0) == rot::Vec3(0.25, 1.0, -0.5));
  CHECK(dance.rotation(0, 23) == rot::Mat3::Identity());
  CHECK(encode(Modality::dance, dance.frames(), dance.fps()) == dance_bytes);
}

TEST_CASE("header fields are little-endian at documented offsets") {
  FrameMatrix m = FrameMatrix::Zero(2, 13);
  m(1, 12) = 1.0;
  const std::string bytes = encode(Modality::music, m, 25.0);
  CHECK(bytes.substr(0, 4) == "MDSQ");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 1);
  CHECK(bytes[8] == 2);
  CHECK(bytes[12] == 13);
  double fps = 0;
  std::memcpy(&fps, bytes.data() + 16, 8);
  CHECK(fps == 25.0);
  double last = 0;
  std::memcpy(&last, bytes.data() + bytes.size() - 8, 8);
  CHECK(last == 1.0);
}

TEST_CASE("format violations raise distinct error codes") {
  Rng rng(6);
  const fs::path dir = scratch_dir("errors");
  save_sequence(DanceSequence(random_frames(rng, 3, kDanceChannels)), dir / "dance.mdseq");
  CHECK(load_error(dir / "dance.mdseq", Modality::music) == FormatErrorCode::channel_mismatch);

  save_matrix(random_frames(rng, 3, 53), dir / "matrix53.mdseq");
  CHECK(load_error(dir / "matrix53.mdseq", Modality::music) == FormatErrorCode::modality_mismatch);

  std::string bytes = read_bytes(dir / "dance.mdseq");
  std::string bad = bytes;
  bad[0] = 'X';
  write_bytes(dir / "magic.mdseq", bad);
  CHECK(load_error(dir / "magic.mdseq", Modality::dance) == FormatErrorCode::bad_magic);

  bad = bytes;
  bad[4] = 9;
  write_bytes(dir / "version.mdseq", bad);
  CHECK(load_error(dir / "version.mdseq", Modality::dance) == FormatErrorCode::bad_version);

  write_bytes(dir / "short.mdseq", bytes.substr(0, bytes.size() - 1));
  CHECK(load_error(dir / "short.mdseq", Modality::dance) == FormatErrorCode::truncated);
  write_bytes(dir / "header.mdseq", bytes.substr(0, 10));
  CHECK(load_error(dir / "header.mdseq", Modality::dance) == FormatErrorCode::truncated);

  write_bytes(dir / "long.mdseq", bytes + "x");
  CHECK(load_error(dir / "long.mdseq", Modality::dance) == FormatErrorCode::trailing_bytes);

  CHECK(load_error(dir / "missing.mdseq", Modality::dance) == FormatErrorCode::io);

  try {
    (void)load_dance(dir / "short.mdseq");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("short.mdseq") != std::string::npos);
    CHECK(std::string(e.what()).find("truncated") != std::string::npos);
  }
  CHECK_THROWS_AS(encode(Modality::dance, random_frames(rng, 2, 53), 25.0), FormatError);
}

TEST_CASE("sequence types enforce their channel layout") {
  CHECK_THROWS_AS(MusicSequence(FrameMatrix::Zero(3, 20)), ShapeError);
  CHECK_THROWS_AS(DanceSequence(FrameMatrix::Zero(3, 146)), ShapeError);
  CHECK_THROWS_AS(MusicSequence(FrameMatrix::Zero(0, 53)), ShapeError);

  FrameMatrix m = FrameMatrix::Zero(2, 53);
  m(0, kBeatChannel) = 0.5;
  CHECK_THROWS_AS(MusicSequence(m).check_invariants(), ConfigError);
  m(0, kBeatChannel) = 1.0;
  m(1, kChromaBegin + 3) = 1.2;
  CHECK_THROWS_AS(MusicSequence(m).check_invariants(), ConfigError);

  FrameMatrix compact = FrameMatrix::Zero(2, 13);
  compact(0, 2) = 0.7;
  compact(1, 12) = 1.0;
  const MusicSequence c(compact);
  CHECK(c.compact());
  CHECK(c.chroma(0, 2) == 0.7);
  CHECK(c.beat(1) == 1.0);
  const FrameMatrix full = c.full_frames();
  CHECK(full.cols() == 53);
  CHECK(full(0, kChromaBegin + 2) == 0.7);
  CHECK(full(1, kBeatChannel) == 1.0);
  CHECK(full.leftCols(40).isZero());
  CHECK(MusicSequence(full).chroma_beat() == compact);
}

TEST_CASE("dance frames store column-major 6D blocks per joint") {
  Rng rng(7);
  rot::Pose pose;
  pose.translation = rot::Vec3(0.1, 0.9, -0.2);
  for (auto& r : pose.rotations) r = testing::random_rotation(rng);
  const DanceSequence d = DanceSequence::from_poses({pose, pose});
  for (std::size_t j = 0; j < rot::kJointCount; ++j) {
    const auto base = Eigen::Index(kRotationBegin + 6 * j);
    CHECK(d.frames()(1, base + 0) == pose.rotations[j](0, 0));
    CHECK(d.frames()(1, base + 1) == pose.rotations[j](1, 0));
    CHECK(d.frames()(1, base + 3) == pose.rotations[j](0, 1));
    CHECK((d.rotation(1, j) - pose.rotations[j]).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK(d.translation(0) == pose.translation);

  FrameMatrix broken = d.frames();
  for (Eigen::Index k = 0; k < 6; ++k) broken(1, Eigen::Index(kRotationBegin + 6 * 5) + k) = 0.0;
  const DanceSequence bad(broken);
  try {
    bad.check_invariants();
    FAIL("expected DegenerateRotationError");
  } catch (const DegenerateRotationError& e) {
    CHECK(std::string(e.what()).find("frame 1, joint 5") != std::string::npos);
  }
}

TEST_CASE("dance resampling follows the rotation time grid") {
  Rng rng(8);
  std::vector<rot::Pose> poses(61);
  for (std::size_t t = 0; t < poses.size(); ++t) {
    poses[t].translation = rot::Vec3(double(t) / 60.0, 0, 0);
    poses[t].rotations[3] = rot::axis_angle_to_matrix(rot::Vec3(0, 0, 0.02 * double(t)));
  }
  const DanceSequence d = DanceSequence::from_poses(poses, 60.0);
  const DanceSequence r = resample(d, 25.0);
  CHECK(r.length() == 26);
  CHECK(r.fps() == 25.0);
  for (std::size_t k = 0; k < r.length(); ++k) {
    const double seconds = double(k) / 25.0;
    CHECK(r.translation(k).x() == doctest::Approx(seconds).epsilon(1e-12));
    CHECK(rot::matrix_to_axis_angle(r.rotation(k, 3)).z() == doctest::Approx(0.02 * 60.0 * seconds).epsilon(1e-9));
  }
  CHECK(r.frames().row(0) == d.frames().row(0));
  CHECK(r.frames().row(25) == d.frames().row(60));
}

TEST_CASE("chord triads") {
  // Independent oracle: semitone intervals of the triad, by note name.
  const auto c_major = chord_to_chroma({0, ChordQuality::major});
  const std::array<double, 12> c_major_expected = {1, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0, 0};  // C E G
  CHECK(c_major == c_major_expected);
  const auto a_minor = chord_to_chroma({9, ChordQuality::minor});
  const std::array<double, 12> a_minor_expected = {1, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0};  // C E A
  CHECK(a_minor == a_minor_expected);

  for (auto quality : {ChordQuality::major, ChordQuality::minor}) {
    const auto base = chord_to_chroma({0, quality});
    for (int k = 0; k < 12; ++k) {
      const auto shifted = chord_to_chroma({k, quality});
      for (int bin = 0; bin < 12; ++bin) CHECK(shifted[std::size_t((bin + k) % 12)] == base[std::size_t(bin)]);
    }
  }
  CHECK_THROWS_AS(chord_to_chroma({12, ChordQuality::major}), ConfigError);

  const auto token = music_start_token({2, ChordQuality::minor});
  CHECK(token.size() == 13);
  CHECK(token[2] == 1.0);
  CHECK(token[5] == 1.0);
  CHECK(token[9] == 1.0);
  CHECK(token[12] == 1.0);
  CHECK(pitch_class_name(10) == "A#");
}

TEST_CASE("synthetic pairs are deterministic and satisfy both modality invariants") {
  for (const auto& genre : genre_templates()) {
    const auto [m1, d1] = synth_pair(42, 120, genre);
    const auto [m2, d2] = synth_pair(42, 120, genre);
    CHECK(bit_identical(m1.frames(), m2.frames()));
    CHECK(bit_identical(d1.frames(), d2.frames()));
    CHECK_NOTHROW(m1.check_invariants());
    CHECK_NOTHROW(d1.check_invariants());
    CHECK(m1.length() == 120);
    CHECK(d1.length() == 120);

    const auto [m3, d3] = synth_pair(43, 120, genre);
    CHECK_FALSE(bit_identical(d1.frames(), d3.frames()));
  }
  CHECK_THROWS_AS(synth_pair(1, 1, genre_templates()[0]), ConfigError);
  CHECK_NOTHROW(synth_pair(1, 2, genre_templates()[0]));
}

TEST_CASE("synthetic music has a periodic beat and follows the genre progression") {
  const GenreTemplate& pop = find_genre("pop");
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SynthTruth truth;
    const auto [music, dance] = synth_pair(seed, 300, pop, {}, &truth);
    CHECK(truth.beat_period >= pop.beat_period_min);
    CHECK(truth.beat_period <= pop.beat_period_max);
    std::vector<std::size_t> beats;
    for (std::size_t t = 0; t < music.length(); ++t) {
      if (music.beat(t) == 1.0) beats.push_back(t);
    }
    CHECK(beats == truth.beats);
    REQUIRE(beats.size() >= 2);
    CHECK(beats[0] < std::size_t(truth.beat_period));
    for (std::size_t i = 1; i < beats.size(); ++i) CHECK(beats[i] - beats[i - 1] == std::size_t(truth.beat_period));

    // The loudest chroma bin on each beat is the root of that bar's chord.
    std::size_t checked = 0;
    for (std::size_t i = 0; i < truth.keyframes.size(); ++i) {
      const long b = truth.keyframes[i];
      if (!truth.keyframe_aligned[i] || b < 0 || b >= long(music.length())) continue;
      std::size_t best = 0;
      for (std::size_t k = 1; k < 12; ++k) {
        if (music.chroma(std::size_t(b), k) > music.chroma(std::size_t(b), best)) best = k;
      }
      CHECK(int(best) == truth.chords[i].root);
      ++checked;
    }
    CHECK(checked == beats.size());
  }
}

TEST_CASE("alignment fraction controls which keyframes sit on beats") {
  const GenreTemplate& g = find_genre("hiphop");
  SynthTruth aligned, half;
  (void)synth_pair(3, 400, g, {1.0}, &aligned);
  for (std::size_t i = 0; i < aligned.keyframes.size(); ++i) CHECK(aligned.keyframe_aligned[i]);
  (void)synth_pair(3, 400, g, {0.0}, &half);
  for (std::size_t i = 0; i < half.keyframes.size(); ++i) {
    CHECK_FALSE(half.keyframe_aligned[i]);
    CHECK(half.keyframes[i] == aligned.keyframes[i] + half.beat_period / 2);
  }
  CHECK_THROWS_AS(synth_pair(3, 10, g, {1.5}), ConfigError);
}

TEST_CASE("synthetic datasets round-trip through a manifest") {
  SynthDatasetOptions opts;
  opts.train_pairs = 5;
  opts.test_pairs = 2;
  opts.frames = 30;
  const PairedDataset ds = make_synthetic_dataset(9, opts);
  CHECK(ds.samples.size() == 7);
  CHECK(ds.split(Split::train).size() == 5);
  CHECK(ds.split(Split::test).size() == 2);
  CHECK(ds.samples[1].genre == genre_templates()[1].name);
  CHECK_NOTHROW(ds.validate());

  const fs::path dir = scratch_dir("manifest");
  const fs::path manifest = write_dataset(ds, dir / "set");
  const auto entries = load_manifest(manifest);
  CHECK(entries.size() == 7);
  CHECK(entries[6].split == Split::test);
  const std::string text = read_bytes(manifest);
  CHECK(text.find("\"0000_music.mdseq\"") != std::string::npos);

  const PairedDataset back = load_dataset(manifest);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(bit_identical(back.samples[i].music.frames(), ds.samples[i].music.frames()));
    CHECK(bit_identical(back.samples[i].dance.frames(), ds.samples[i].dance.frames()));
    CHECK(back.samples[i].genre == ds.samples[i].genre);
    CHECK(back.samples[i].split == ds.samples[i].split);
  }
}

TEST_CASE("invalid manifests are rejected with a reason") {
  const fs::path dir = scratch_dir("bad_manifest");
  auto expect_error = [&](const std::string& body, const std::string& fragment) {
    write_bytes(dir / "m.json", body);
    try {
      (void)load_manifest(dir / "m.json");
      FAIL("expected ConfigError for " << body);
    } catch (const ConfigError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(fragment) != std::string::npos, e.what());
    }
  };
  expect_error("{", "not valid JSON");
  expect_error("{\"pairs\": 3}", "pairs");
  expect_error("{\"pairs\": []}", "no pairs");
  expect_error(R"({"pairs": [{"music": "a", "dance": "b", "genre": "pop"}]})", "split");
  expect_error(R"({"pairs": [{"music": "a", "dance": "b", "genre": "pop", "split": "dev"}]})", "dev");
  CHECK_THROWS_AS(load_manifest(dir / "absent.json"), ConfigError);

  PairedDataset ds;
  ds.samples.push_back({MusicSequence(FrameMatrix::Zero(3, 53)), DanceSequence(FrameMatrix::Zero(4, 147)), "pop", Split::train});
  CHECK_THROWS_AS(ds.validate(), ConfigError);
  CHECK_THROWS_AS(find_genre("polka"), ConfigError);
}
