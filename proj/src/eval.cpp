#include "duet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "duet/errors.hpp"
#include "duet/model.hpp"
#include "json.hpp"

namespace duet::eval {

namespace {

using data::DanceSequence;
using data::MusicSequence;

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void require_equal_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": lengths differ (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

int argmax_lowest(const double* values, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (values[i] > values[best]) best = i;
  return int(best);
}

std::string escape_xml(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

nlohmann::json summary_json(const Summary& s) {
  return {{"sequences", s.sequences},
          {"frechet", s.frechet},
          {"diversity", s.diversity},
          {"beats_alignment", s.beats_alignment},
          {"notes_accuracy", s.notes_accuracy}};
}

void accumulate(Summary& s, const SequenceResult& r) {
  s.frechet += r.frechet;
  s.diversity += r.diversity;
  s.beats_alignment += r.beats_alignment;
  s.notes_accuracy += r.notes_accuracy;
  ++s.sequences;
}

void finish(Summary& s) {
  if (s.sequences == 0) return;
  const double n = double(s.sequences);
  s.frechet /= n;
  s.diversity /= n;
  s.beats_alignment /= n;
  s.notes_accuracy /= n;
}

}  // namespace

double frechet_distance(const DanceSequence& generated, const DanceSequence& truth, const rot::Skeleton& skeleton) {
  require_equal_length(generated.length(), truth.length(), "frechet_distance");
  if (generated.length() == 0) throw ShapeError("frechet_distance: empty sequences");
  const auto a = data::joint_trajectory(generated, skeleton);
  const auto b = data::joint_trajectory(truth, skeleton);
  double total = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t j = 0; j < rot::kJointCount; ++j) total += (a[t][j] - b[t][j]).norm();
  return total / double(a.size() * rot::kJointCount);
}

double diversity(std::span<const DanceSequence> generations, const rot::Skeleton& skeleton) {
  if (generations.size() < 2) throw ConfigError("diversity needs at least two generations");
  const std::size_t frames = generations.front().length();
  for (const auto& g : generations) require_equal_length(g.length(), frames, "diversity");
  if (frames == 0) throw ShapeError("diversity: empty sequences");
  std::vector<std::vector<rot::JointPositions>> paths;
  for (const auto& g : generations) paths.push_back(data::joint_trajectory(g, skeleton));
  const double n = double(generations.size());
  double total = 0.0;
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t j = 0; j < rot::kJointCount; ++j) {
      // Offsets from the first generation, so identical inputs give exactly 0.
      const rot::Vec3 ref = paths.front()[t][j];
      rot::Vec3 mean = rot::Vec3::Zero();
      for (const auto& p : paths) mean += p[t][j] - ref;
      mean /= n;
      double spread = 0.0;
      for (const auto& p : paths) spread += (p[t][j] - ref - mean).squaredNorm();
      total += std::sqrt(spread / n);
    }
  }
  return total / double(frames * rot::kJointCount);
}

std::vector<double> joint_speed(const DanceSequence& dance, const rot::Skeleton& skeleton) {
  const auto path = data::joint_trajectory(dance, skeleton);
  std::vector<double> speed;
  for (std::size_t t = 0; t + 1 < path.size(); ++t) {
    double s = 0.0;
    for (std::size_t j = 0; j < rot::kJointCount; ++j) s += (path[t + 1][j] - path[t][j]).norm();
    speed.push_back(s / double(rot::kJointCount));
  }
  return speed;
}

std::vector<std::size_t> local_minima(std::span<const double> values, double tolerance) {
  auto less = [&](double a, double b) { return a < b - tolerance; };
  std::vector<std::size_t> out;
  const std::size_t n = values.size();
  std::size_t i = 1;
  while (i + 1 < n) {
    if (!less(values[i], values[i - 1])) {
      ++i;
      continue;
    }
    std::size_t end = i;
    while (end + 1 < n && !less(values[end + 1], values[i]) && !less(values[i], values[end + 1])) ++end;
    if (end + 1 < n && less(values[i], values[end + 1])) out.push_back(i);
    i = end + 1;
  }
  return out;
}

std::vector<std::size_t> music_beats(const MusicSequence& music) {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < music.length(); ++t)
    if (music.beat(t) > 0.5) out.push_back(t);
  return out;
}

BeatsAlignment align_beats(std::span<const std::size_t> kinematic, std::span<const std::size_t> music,
                           std::size_t window) {
  BeatsAlignment result;
  result.kinematic_beats = kinematic.size();
  if (kinematic.empty()) {
    result.no_kinematic_beats = true;
    return result;
  }
  for (std::size_t k : kinematic) {
    const bool hit = std::any_of(music.begin(), music.end(), [&](std::size_t m) {
      return (m > k ? m - k : k - m) <= window;
    });
    if (hit) ++result.matched;
  }
  result.percent = 100.0 * double(result.matched) / double(result.kinematic_beats);
  return result;
}

BeatsAlignment beats_alignment(const DanceSequence& dance, const MusicSequence& music, const rot::Skeleton& skeleton) {
  require_equal_length(dance.length(), music.length(), "beats_alignment");
  if (dance.fps() != data::kDefaultFps || music.fps() != data::kDefaultFps) {
    throw ConfigError("beats_alignment expects 25 fps sequences");
  }
  const auto speed = joint_speed(dance, skeleton);
  const double peak = speed.empty() ? 0.0 : *std::max_element(speed.begin(), speed.end());
  return align_beats(local_minima(speed, kSpeedTolerance * peak), music_beats(music));
}

std::vector<int> chroma_notes(const MusicSequence& music) {
  const data::FrameMatrix cb = music.chroma_beat();
  std::vector<int> out(music.length(), -1);
  for (std::size_t t = 0; t < music.length(); ++t) {
    const double* row = cb.row(Eigen::Index(t)).data();
    if (std::all_of(row, row + data::kChromaBins, [](double v) { return v == 0.0; })) continue;
    out[t] = argmax_lowest(row, data::kChromaBins);
  }
  return out;
}

int key_root(const MusicSequence& music) {
  const data::FrameMatrix cb = music.chroma_beat();
  std::array<double, data::kChromaBins> sum{};
  for (Eigen::Index t = 0; t < cb.rows(); ++t)
    for (std::size_t k = 0; k < data::kChromaBins; ++k) sum[k] += cb(t, Eigen::Index(k));
  return argmax_lowest(sum.data(), sum.size());
}

int transposition(int root, data::ChordQuality quality) {
  const int tonic = quality == data::ChordQuality::minor ? 9 : 0;
  return ((tonic - root) % 12 + 12) % 12;
}

NotesAccuracy notes_accuracy(const MusicSequence& generated, const MusicSequence& truth,
                             std::optional<data::ChordQuality> generated_quality,
                             std::optional<data::ChordQuality> truth_quality) {
  require_equal_length(generated.length(), truth.length(), "notes_accuracy");
  const auto a = chroma_notes(generated), b = chroma_notes(truth);
  const int shift_a = transposition(key_root(generated), generated_quality.value_or(data::ChordQuality::major));
  const int shift_b = transposition(key_root(truth), truth_quality.value_or(data::ChordQuality::major));
  NotesAccuracy result;
  std::size_t equal = 0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    if (a[t] < 0 || b[t] < 0) {
      ++result.skipped;
      continue;
    }
    ++result.compared;
    if ((a[t] + shift_a) % 12 == (b[t] + shift_b) % 12) ++equal;
  }
  if (result.compared > 0) result.accuracy = double(equal) / double(result.compared);
  return result;
}

std::array<std::size_t, data::kChromaBins> note_histogram(const MusicSequence& music) {
  std::array<std::size_t, data::kChromaBins> counts{};
  for (int n : chroma_notes(music))
    if (n >= 0) ++counts[std::size_t(n)];
  return counts;
}

void EvalReport::summarize() {
  overall = {};
  per_genre.clear();
  for (const auto& r : sequences) {
    accumulate(overall, r);
    accumulate(per_genre[r.genre], r);
  }
  finish(overall);
  for (auto& [genre, s] : per_genre) finish(s);
}

bool EvalReport::valid() const {
  auto ok = [](const Summary& s) {
    return std::isfinite(s.frechet) && s.frechet >= 0 && std::isfinite(s.diversity) && s.diversity >= 0 &&
           s.beats_alignment >= 0 && s.beats_alignment <= 100 && s.notes_accuracy >= 0 && s.notes_accuracy <= 1;
  };
  if (!ok(overall)) return false;
  return std::all_of(per_genre.begin(), per_genre.end(), [&](const auto& kv) { return ok(kv.second); });
}

std::string EvalReport::to_json() const {
  nlohmann::json doc;
  doc["overall"] = summary_json(overall);
  doc["per_genre"] = nlohmann::json::object();
  for (const auto& [genre, s] : per_genre) doc["per_genre"][genre] = summary_json(s);
  doc["sequences"] = nlohmann::json::array();
  for (const auto& r : sequences) {
    doc["sequences"].push_back({{"index", r.index},
                                {"genre", r.genre},
                                {"frechet", r.frechet},
                                {"diversity", r.diversity},
                                {"beats_alignment", r.beats_alignment},
                                {"no_kinematic_beats", r.no_kinematic_beats},
                                {"notes_accuracy", r.notes_accuracy},
                                {"skipped_frames", r.skipped_frames}});
  }
  doc["note_histogram"] = {{"generated", generated_notes}, {"truth", truth_notes}};
  return doc.dump(2);
}

std::string EvalReport::csv_header() {
  return "index,genre,frechet,diversity,beats_alignment,no_kinematic_beats,notes_accuracy,skipped_frames";
}

std::string EvalReport::csv() const {
  std::string out = csv_header() + "\n";
  for (const auto& r : sequences) {
    out += std::to_string(r.index) + "," + r.genre + "," + number(r.frechet) + "," + number(r.diversity) + "," +
           number(r.beats_alignment) + "," + (r.no_kinematic_beats ? "1" : "0") + "," + number(r.notes_accuracy) +
           "," + std::to_string(r.skipped_frames) + "\n";
  }
  return out;
}

EvalReport evaluate(const train::Generators& generators, const data::PairedDataset& dataset, std::uint64_t seed,
                    const EvalOptions& options, const rot::Skeleton& skeleton) {
  if (options.generations < 2) throw ConfigError("evaluation needs at least two generations per input");
  if (options.trials == 0 || options.window == 0) throw ConfigError("evaluation trials and window must be positive");
  const auto pairs = dataset.split(data::Split::test);
  const std::size_t count =
      options.max_sequences == 0 ? pairs.size() : std::min(pairs.size(), options.max_sequences);
  const Rng root = Rng(seed).substream("start_tokens");

  EvalReport report;
  for (std::size_t i = 0; i < count; ++i) {
    const data::PairedSample& pair = *pairs[i];
    Rng rng = root.substream(std::to_string(i));
    const data::FrameMatrix music_input = pair.music.full_frames();

    SequenceResult r;
    r.index = i;
    r.genre = pair.genre;
    double spread = 0.0;
    for (std::size_t trial = 0; trial < options.trials; ++trial) {
      std::vector<DanceSequence> dances;
      for (std::size_t g = 0; g < options.generations; ++g) {
        dances.emplace_back(model::generate(generators.music_to_dance, music_input, model::random_dance_start(rng),
                                            options.window),
                            pair.dance.fps());
      }
      if (trial == 0) {
        r.frechet = frechet_distance(dances.front(), pair.dance, skeleton);
        const BeatsAlignment beats = beats_alignment(dances.front(), pair.music, skeleton);
        r.beats_alignment = beats.percent;
        r.no_kinematic_beats = beats.no_kinematic_beats;
      }
      spread += diversity(dances, skeleton);
    }
    r.diversity = spread / double(options.trials);

    const data::ChordSeed chord = model::random_chord(rng);
    const MusicSequence music(model::generate(generators.dance_to_music, pair.dance.frames(),
                                              model::music_start(chord), options.window),
                              pair.music.fps());
    const NotesAccuracy notes = notes_accuracy(music, pair.music, chord.quality, std::nullopt);
    r.notes_accuracy = notes.accuracy;
    r.skipped_frames = notes.skipped;
    const auto gen_hist = note_histogram(music), truth_hist = note_histogram(pair.music);
    for (std::size_t k = 0; k < data::kChromaBins; ++k) {
      report.generated_notes[k] += gen_hist[k];
      report.truth_notes[k] += truth_hist[k];
    }
    report.sequences.push_back(std::move(r));
  }
  report.summarize();
  return report;
}

EvalReport compare(const data::PairedSample& generated, const data::PairedSample& reference,
                   const rot::Skeleton& skeleton) {
  EvalReport report;
  SequenceResult r;
  r.genre = reference.genre;
  r.frechet = frechet_distance(generated.dance, reference.dance, skeleton);
  const BeatsAlignment beats = beats_alignment(generated.dance, reference.music, skeleton);
  r.beats_alignment = beats.percent;
  r.no_kinematic_beats = beats.no_kinematic_beats;
  const NotesAccuracy notes = notes_accuracy(generated.music, reference.music);
  r.notes_accuracy = notes.accuracy;
  r.skipped_frames = notes.skipped;
  report.generated_notes = note_histogram(generated.music);
  report.truth_notes = note_histogram(reference.music);
  report.sequences.push_back(std::move(r));
  report.summarize();
  return report;
}

std::string note_histogram_svg(const std::array<std::size_t, data::kChromaBins>& generated,
                               const std::array<std::size_t, data::kChromaBins>& truth, const std::string& title) {
  constexpr double kWidth = 640, kHeight = 320, kLeft = 50, kRight = 20, kTop = 40, kBottom = 40;
  const double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;
  const double slot = plot_w / double(data::kChromaBins), bar = slot * 0.38;
  std::size_t peak = 1;
  for (std::size_t k = 0; k < data::kChromaBins; ++k) peak = std::max({peak, generated[k], truth[k]});

  char buf[256];
  std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                kWidth, kHeight, kWidth, kHeight);
  svg += buf;
  svg += "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "  <text x=\"%.1f\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">", kWidth / 2);
  svg += buf + escape_xml(title) + "</text>\n";
  std::snprintf(buf, sizeof buf, "  <line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", kLeft,
                kTop + plot_h, kLeft + plot_w, kTop + plot_h);
  svg += buf;
  for (std::size_t k = 0; k < data::kChromaBins; ++k) {
    const double x = kLeft + slot * double(k) + slot * 0.1;
    const double hg = plot_h * double(generated[k]) / double(peak);
    const double ht = plot_h * double(truth[k]) / double(peak);
    std::snprintf(buf, sizeof buf,
                  "  <rect class=\"generated\" x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"#d9534f\"/>\n",
                  x, kTop + plot_h - hg, bar, hg);
    svg += buf;
    std::snprintf(buf, sizeof buf,
                  "  <rect class=\"truth\" x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"#428bca\"/>\n",
                  x + bar, kTop + plot_h - ht, bar, ht);
    svg += buf;
    std::snprintf(buf, sizeof buf, "  <text x=\"%.2f\" y=\"%.2f\" font-size=\"12\" text-anchor=\"middle\">",
                  x + bar, kTop + plot_h + 16);
    svg += buf + escape_xml(data::pitch_class_name(int(k))) + "</text>\n";
  }
  std::snprintf(buf, sizeof buf,
                "  <text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" fill=\"#d9534f\">generated</text>\n"
                "  <text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" fill=\"#428bca\">ground truth</text>\n",
                kWidth - 190, kTop - 6, kWidth - 110, kTop - 6);
  svg += buf;
  svg += "</svg>\n";
  return svg;
}

std::string speed_curve_svg(std::span<const double> speed, std::span<const std::size_t> kinematic_beats,
                            std::span<const std::size_t> music_beats, const std::string& title) {
  constexpr double kWidth = 800, kHeight = 300, kLeft = 50, kRight = 20, kTop = 40, kBottom = 30;
  const double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;
  double peak = 0.0;
  for (double v : speed) peak = std::max(peak, v);
  if (peak <= 0.0) peak = 1.0;
  const double step = speed.size() > 1 ? plot_w / double(speed.size() - 1) : 0.0;
  auto x_of = [&](std::size_t t) { return kLeft + step * double(t); };
  auto y_of = [&](double v) { return kTop + plot_h * (1.0 - v / peak); };

  char buf[256];
  std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                kWidth, kHeight, kWidth, kHeight);
  svg += buf;
  svg += "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "  <text x=\"%.1f\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">", kWidth / 2);
  svg += buf + escape_xml(title) + "</text>\n";
  for (std::size_t b : music_beats) {
    if (b >= speed.size()) continue;
    std::snprintf(buf, sizeof buf,
                  "  <line class=\"music-beat\" x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#bbbbbb\"/>\n",
                  x_of(b), kTop, x_of(b), kTop + plot_h);
    svg += buf;
  }
  svg += "  <polyline class=\"speed\" fill=\"none\" stroke=\"#428bca\" points=\"";
  for (std::size_t t = 0; t < speed.size(); ++t) {
    std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", t ? " " : "", x_of(t), y_of(speed[t]));
    svg += buf;
  }
  svg += "\"/>\n";
  for (std::size_t k : kinematic_beats) {
    if (k >= speed.size()) continue;
    std::snprintf(buf, sizeof buf, "  <circle class=\"kinematic-beat\" cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"#d9534f\"/>\n",
                  x_of(k), y_of(speed[k]));
    svg += buf;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace duet::eval
