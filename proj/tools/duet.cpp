// duet: train, generate, evaluate and inspect music-dance translation models.
//
// Exit codes: 0 success, 1 unexpected error, 2 usage, 3 file format,
// 4 configuration or input shape, 5 numeric failure. Failures print one JSON
// object to stderr; stdout carries only the command's payload.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "duet/errors.hpp"
#include "duet/eval.hpp"
#include "duet/gw.hpp"
#include "duet/manifest.hpp"
#include "duet/mdseq.hpp"
#include "duet/model.hpp"
#include "duet/run_config.hpp"
#include "duet/synth.hpp"
#include "duet/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace duet;

namespace {

enum Exit { kOk = 0, kOther = 1, kUsage = 2, kFormat = 3, kConfig = 4, kNumeric = 5 };

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("failed writing " + path.string());
}

void emit(const json& payload) { std::cout << payload.dump(2) << "\n"; }

void note(const std::string& line) { std::cerr << line << "\n"; }

json losses_json(const loss::LossBreakdown& l) {
  return {{"dance_reconstruction", l.dance_reconstruction}, {"music_reconstruction", l.music_reconstruction},
          {"dance_cycle", l.dance_cycle},                   {"music_cycle", l.music_cycle},
          {"gw", l.gw},                                     {"total_music_to_dance", l.total_music_to_dance},
          {"total_dance_to_music", l.total_dance_to_music}};
}

json summary_json(const eval::Summary& s) {
  return {{"sequences", s.sequences},
          {"frechet", s.frechet},
          {"diversity", s.diversity},
          {"beats_alignment", s.beats_alignment},
          {"notes_accuracy", s.notes_accuracy}};
}

/// Options shared by commands that resolve a RunConfig.
struct ConfigFlags {
  std::string config_file;
  std::optional<std::string> preset;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  bool no_gw = false;
  bool no_cycle = false;
  std::optional<std::string> out;
  std::optional<std::string> manifest;
  std::vector<std::string> sets;

  void attach(CLI::App& cmd, bool training) {
    cmd.add_option("--config", config_file, "JSON config file (flat keys or a saved run_config.json)")
        ->check(CLI::ExistingFile);
    cmd.add_option("--preset", preset, "paper or desk")->check(CLI::IsMember({"paper", "desk"}));
    cmd.add_option("--seed", seed, "seed for data, initialization and start tokens");
    cmd.add_option("--out", out, "output directory");
    cmd.add_option("--manifest", manifest, "dataset manifest (default: synthetic data)");
    cmd.add_option("--set", sets, "override any config field: key=json_value")->take_all();
    if (training) {
      cmd.add_option("--steps", steps, "training steps");
      cmd.add_flag("--no-gw", no_gw, "disable the GW loss");
      cmd.add_flag("--no-cycle", no_cycle, "disable the cycle losses");
    }
  }

  [[nodiscard]] RunConfig resolve(const std::string& base_text = "") const {
    std::map<std::string, std::string> flags;
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
      std::string value = s.substr(eq + 1);
      if (!json::accept(value)) value = json(value).dump();  // bare strings
      flags[s.substr(0, eq)] = value;
    }
    if (preset) flags["preset"] = json(*preset).dump();
    if (seed) flags["seed"] = json(*seed).dump();
    if (steps) flags["steps"] = json(*steps).dump();
    if (no_gw) flags["gw"] = "false";
    if (no_cycle) flags["cycle"] = "false";
    if (out) flags["out"] = json(*out).dump();
    if (manifest) flags["manifest"] = json(*manifest).dump();
    const std::string text = config_file.empty() ? base_text : read_text(config_file);
    RunConfig cfg = RunConfig::resolve(text, flags);
    cfg.validate();
    return cfg;
  }
};

std::size_t checkpoint_window(const train::Checkpoint& cp) {
  try {
    return RunConfig::from_json(cp.config_json).train.length;
  } catch (const ConfigError&) {
    return train::TrainConfig{}.length;
  }
}

void write_report(const eval::EvalReport& report, const fs::path& dir) {
  write_text(dir / "eval_report.json", report.to_json() + "\n");
  write_text(dir / "eval_report.csv", report.csv());
  write_text(dir / "note_histogram.svg", eval::note_histogram_svg(report.generated_notes, report.truth_notes));
}

// ---------------------------------------------------------------------------

int cmd_train(const ConfigFlags& flags) {
  const RunConfig cfg = flags.resolve();
  const fs::path out = cfg.out;
  fs::create_directories(out / "checkpoints");
  write_text(out / "run_config.json", cfg.to_json() + "\n");
  const data::PairedDataset dataset = cfg.dataset();
  const std::string config_json = cfg.to_json();

  std::ofstream log(out / "train_log.csv", std::ios::trunc);
  if (!log) throw ConfigError("cannot write " + (out / "train_log.csv").string());
  log << train::log_header() << "\n";
  note("training " + std::to_string(dataset.split(data::Split::train).size()) + " pairs, " +
       std::to_string(cfg.train.steps) + " steps, preset " + cfg.preset);

  std::vector<std::string> checkpoints;
  const train::TrainingRun run =
      train::train(dataset, cfg.train, cfg.seed, [&](const train::LogRow& row, const train::Generators& gens) {
        log << train::log_row(row) << "\n" << std::flush;
        if (cfg.log_every && row.step % cfg.log_every == 0) {
          char buf[160];
          std::snprintf(buf, sizeof buf, "step %zu  dance_rec %.4g  music_rec %.4g  gw %.4g", row.step,
                        row.losses.dance_reconstruction, row.losses.music_reconstruction, row.losses.gw);
          note(buf);
        }
        if (cfg.checkpoint_every && row.step % cfg.checkpoint_every == 0 && row.step != cfg.train.steps) {
          char name[32];
          std::snprintf(name, sizeof name, "step_%06zu.mdck", row.step);
          const fs::path p = out / "checkpoints" / name;
          train::save_checkpoint(p, {gens, row.step, config_json});
          checkpoints.push_back(p.string());
        }
        return true;
      });

  const fs::path final_path = out / "final.mdck";
  train::save_checkpoint(final_path, {run.generators, run.log.size(), config_json});
  checkpoints.push_back(final_path.string());

  json payload{{"out", out.string()},
               {"config", (out / "run_config.json").string()},
               {"log", (out / "train_log.csv").string()},
               {"checkpoint", final_path.string()},
               {"checkpoints", checkpoints},
               {"steps", run.log.size()},
               {"final_losses", losses_json(run.log.back().losses)}};
  if (dataset.split(data::Split::test).empty()) {
    payload["eval"] = nullptr;
  } else {
    note("evaluating on the test split");
    const eval::EvalReport report =
        eval::evaluate(run.generators, dataset, cfg.seed, cfg.eval_options(), cfg.load_skeleton());
    write_report(report, out);
    payload["eval"] = summary_json(report.overall);
    payload["eval_report"] = (out / "eval_report.json").string();
  }
  emit(payload);
  return kOk;
}

struct GenerateArgs {
  std::string checkpoint, input, output, direction;
  std::uint64_t seed = 0;
  std::optional<std::size_t> window;
};

int cmd_generate(const GenerateArgs& a) {
  const model::Direction direction = model::parse_direction(a.direction);
  const train::Checkpoint cp = train::load_checkpoint(a.checkpoint);
  const std::size_t window = a.window.value_or(checkpoint_window(cp));
  if (window == 0) throw ConfigError("--window must be positive");
  const data::Modality expected =
      direction == model::Direction::music_to_dance ? data::Modality::music : data::Modality::dance;
  const data::MdseqHeader header = data::read_header(a.input);
  if (header.modality != expected) {
    throw data::FormatError(data::FormatErrorCode::modality_mismatch,
                            a.input + ": " + model::to_string(direction) + " needs a " + data::to_string(expected) +
                                " sequence, got " + data::to_string(header.modality));
  }
  Rng rng = Rng(a.seed).substream("start_tokens");
  json payload{{"direction", model::to_string(direction)}, {"seed", a.seed}, {"window", window}};
  if (direction == model::Direction::music_to_dance) {
    const data::MusicSequence music = data::load_music(a.input);
    const data::DanceSequence dance(
        model::generate(cp.generators.music_to_dance, music.full_frames(), model::random_dance_start(rng), window),
        music.fps());
    data::save_sequence(dance, a.output);
    payload["frames"] = dance.length();
    payload["channels"] = dance.frames().cols();
  } else {
    const data::DanceSequence dance = data::load_dance(a.input);
    const data::ChordSeed chord = model::random_chord(rng);
    const data::MusicSequence music(
        model::generate(cp.generators.dance_to_music, dance.frames(), model::music_start(chord), window), dance.fps());
    data::save_sequence(music, a.output);
    payload["frames"] = music.length();
    payload["channels"] = music.frames().cols();
    payload["chord"] = {{"root", data::pitch_class_name(chord.root)},
                        {"quality", chord.quality == data::ChordQuality::minor ? "minor" : "major"}};
  }
  payload["output"] = a.output;
  emit(payload);
  return kOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string music, dance, ref_music, ref_dance;
};

int cmd_eval(const EvalArgs& a, const ConfigFlags& flags) {
  const bool files = !a.music.empty() || !a.dance.empty() || !a.ref_music.empty() || !a.ref_dance.empty();
  if (files == !a.checkpoint.empty())
    throw CLI::ValidationError("eval needs either --checkpoint or --music/--dance/--ref-music/--ref-dance");
  eval::EvalReport report;
  std::optional<fs::path> out;
  if (files) {
    if (a.music.empty() || a.dance.empty() || a.ref_music.empty() || a.ref_dance.empty())
      throw CLI::ValidationError("file comparison needs --music, --dance, --ref-music and --ref-dance");
    const data::PairedSample generated{data::load_music(a.music), data::load_dance(a.dance), "", data::Split::test};
    const data::PairedSample reference{data::load_music(a.ref_music), data::load_dance(a.ref_dance), "reference",
                                       data::Split::test};
    const RunConfig cfg = flags.resolve();
    report = eval::compare(generated, reference, cfg.load_skeleton());
    if (flags.out) out = *flags.out;
  } else {
    const train::Checkpoint cp = train::load_checkpoint(a.checkpoint);
    const RunConfig cfg = flags.resolve(cp.config_json);
    note("evaluating " + a.checkpoint);
    report = eval::evaluate(cp.generators, cfg.dataset(), cfg.seed, cfg.eval_options(), cfg.load_skeleton());
    if (flags.out) out = cfg.out;
  }
  if (out) write_report(report, *out);
  std::cout << report.to_json() << "\n";
  return kOk;
}

data::FrameMatrix load_any(const fs::path& path) {
  const data::MdseqHeader header = data::read_header(path);
  switch (header.modality) {
    case data::Modality::music: return data::load_music(path).frames();
    case data::Modality::dance: return data::load_dance(path).frames();
    case data::Modality::matrix: break;
  }
  return data::load_matrix(path);
}

struct GwArgs {
  std::string x, y, plan_out;
  ot::GWConfig cfg;
};

int cmd_gw(const GwArgs& a) {
  a.cfg.validate();
  const data::FrameMatrix x = load_any(a.x), y = load_any(a.y);
  if (x.rows() != y.rows()) {
    throw ShapeError("GW needs batches of equal size (" + std::to_string(x.rows()) + " vs " +
                     std::to_string(y.rows()) + " rows)");
  }
  const ot::GWResult r = ot::entropic_gw(ot::Matrix(x), ot::Matrix(y), a.cfg);
  json plan = json::array();
  for (Eigen::Index i = 0; i < r.plan.mass.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < r.plan.mass.cols(); ++j) row.push_back(r.plan.mass(i, j));
    plan.push_back(row);
  }
  json payload{{"value", r.value},
               {"m", x.rows()},
               {"epsilon", a.cfg.epsilon},
               {"log_domain", r.log_domain},
               {"marginal_residual", r.plan.marginal_residual()},
               {"history", r.history},
               {"plan", plan}};
  if (!a.plan_out.empty()) {
    data::save_matrix(data::FrameMatrix(r.plan.mass), a.plan_out);
    payload["plan_file"] = a.plan_out;
  }
  emit(payload);
  return kOk;
}

struct PlotArgs {
  std::string input, reference, out = "plot";
};

int cmd_plot(const PlotArgs& a) {
  const fs::path out = a.out;
  const data::MdseqHeader header = data::read_header(a.input);
  json payload{{"input", a.input}};
  if (header.modality == data::Modality::music) {
    const data::MusicSequence music = data::load_music(a.input);
    const auto notes = eval::chroma_notes(music);
    std::string csv = "frame,note,pitch_class,beat\n";
    for (std::size_t t = 0; t < music.length(); ++t) {
      csv += std::to_string(t) + "," + std::to_string(notes[t]) + "," +
             (notes[t] < 0 ? std::string() : data::pitch_class_name(notes[t])) + "," +
             (music.beat(t) > 0.5 ? "1" : "0") + "\n";
    }
    std::array<std::size_t, data::kChromaBins> reference{};
    if (!a.reference.empty()) reference = eval::note_histogram(data::load_music(a.reference));
    write_text(out / "notes.csv", csv);
    write_text(out / "note_histogram.svg",
               eval::note_histogram_svg(eval::note_histogram(music), reference, "Histogram of music notes"));
    payload["csv"] = (out / "notes.csv").string();
    payload["svg"] = (out / "note_histogram.svg").string();
    payload["rows"] = music.length();
  } else if (header.modality == data::Modality::dance) {
    const data::DanceSequence dance = data::load_dance(a.input);
    const auto speed = eval::joint_speed(dance);
    const double peak = speed.empty() ? 0.0 : *std::max_element(speed.begin(), speed.end());
    const auto minima = eval::local_minima(speed, eval::kSpeedTolerance * peak);
    std::vector<std::size_t> music_beats;
    if (!a.reference.empty()) music_beats = eval::music_beats(data::load_music(a.reference));
    std::string csv = "frame,root_x,root_y,root_z,speed,kinematic_beat\n";
    char buf[160];
    for (std::size_t t = 0; t < dance.length(); ++t) {
      const rot::Vec3 p = dance.translation(t);
      const bool beat = std::find(minima.begin(), minima.end(), t) != minima.end();
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,", t, p.x(), p.y(), p.z());
      csv += buf;
      if (t < speed.size()) {
        std::snprintf(buf, sizeof buf, "%.17g", speed[t]);
        csv += buf;
      }
      csv += beat ? ",1\n" : ",0\n";
    }
    write_text(out / "motion.csv", csv);
    write_text(out / "speed.svg", eval::speed_curve_svg(speed, minima, music_beats));
    payload["csv"] = (out / "motion.csv").string();
    payload["svg"] = (out / "speed.svg").string();
    payload["rows"] = dance.length();
    payload["kinematic_beats"] = minima;
  } else {
    throw data::FormatError(data::FormatErrorCode::modality_mismatch, a.input + ": plot needs a music or dance sequence");
  }
  emit(payload);
  return kOk;
}

struct SynthArgs {
  std::string out = "synth_data";
  std::uint64_t seed = 0;
  data::SynthDatasetOptions options;
};

int cmd_synth(const SynthArgs& a) {
  const data::PairedDataset ds = data::make_synthetic_dataset(a.seed, a.options);
  const fs::path manifest = data::write_dataset(ds, a.out);
  emit({{"manifest", manifest.string()},
        {"train_pairs", ds.split(data::Split::train).size()},
        {"test_pairs", ds.split(data::Split::test).size()},
        {"frames", a.options.frames}});
  return kOk;
}

int fail(Exit code, const std::string& kind, const std::string& message, const json& extra = json::object()) {
  json err{{"error", kind}, {"exit_code", int(code)}, {"message", message}};
  for (const auto& [k, v] : extra.items()) err[k] = v;
  std::cerr << err.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"duet: music-to-dance and dance-to-music translation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "duet 1.0");

  ConfigFlags train_flags;
  CLI::App* train_cmd = app.add_subcommand("train", "train both generators and evaluate on the test split");
  train_flags.attach(*train_cmd, true);

  GenerateArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("generate", "translate one sequence with a trained checkpoint");
  gen_cmd->add_option("--checkpoint", gen.checkpoint, "checkpoint (.mdck)")->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("--input", gen.input, "input sequence (.mdseq)")->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("--direction", gen.direction, "music-to-dance or dance-to-music")
      ->required()
      ->check(CLI::IsMember({"music-to-dance", "dance-to-music"}));
  gen_cmd->add_option("--out", gen.output, "output sequence (.mdseq)")->required();
  gen_cmd->add_option("--seed", gen.seed, "start-token seed");
  gen_cmd->add_option("--window", gen.window, "frames per generation window (default: training length)");

  EvalArgs ev;
  ConfigFlags eval_flags;
  CLI::App* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a test split, or compare sequence files");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint (.mdck)")->check(CLI::ExistingFile);
  eval_cmd->add_option("--music", ev.music, "generated music (.mdseq)")->check(CLI::ExistingFile);
  eval_cmd->add_option("--dance", ev.dance, "generated dance (.mdseq)")->check(CLI::ExistingFile);
  eval_cmd->add_option("--ref-music", ev.ref_music, "reference music (.mdseq)")->check(CLI::ExistingFile);
  eval_cmd->add_option("--ref-dance", ev.ref_dance, "reference dance (.mdseq)")->check(CLI::ExistingFile);
  eval_flags.attach(*eval_cmd, false);

  GwArgs gw;
  CLI::App* gw_cmd = app.add_subcommand("gw", "entropic Gromov-Wasserstein between two batches");
  gw_cmd->add_option("--x", gw.x, "first batch (.mdseq, one row per point)")->required()->check(CLI::ExistingFile);
  gw_cmd->add_option("--y", gw.y, "second batch (.mdseq)")->required()->check(CLI::ExistingFile);
  gw_cmd->add_option("--epsilon", gw.cfg.epsilon, "entropic regularization")->capture_default_str();
  gw_cmd->add_option("--sinkhorn-iters", gw.cfg.sinkhorn_iters, "Sinkhorn iterations (L)")->capture_default_str();
  gw_cmd->add_option("--projection-iters", gw.cfg.projection_iters, "projection iterations (M)")
      ->capture_default_str();
  gw_cmd->add_option("--plan-out", gw.plan_out, "also write the plan as a matrix .mdseq");

  PlotArgs plot;
  CLI::App* plot_cmd = app.add_subcommand("plot", "note histogram (music) or speed curve (dance) as SVG and CSV");
  plot_cmd->add_option("--input", plot.input, "music or dance sequence (.mdseq)")->required()->check(CLI::ExistingFile);
  plot_cmd->add_option("--reference", plot.reference, "reference music for comparison or beat ticks")
      ->check(CLI::ExistingFile);
  plot_cmd->add_option("--out", plot.out, "output directory")->capture_default_str();

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "write a synthetic paired dataset with a manifest");
  synth_cmd->add_option("--out", synth.out, "output directory")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "dataset seed");
  synth_cmd->add_option("--train-pairs", synth.options.train_pairs)->capture_default_str();
  synth_cmd->add_option("--test-pairs", synth.options.test_pairs)->capture_default_str();
  synth_cmd->add_option("--frames", synth.options.frames)->capture_default_str();
  synth_cmd->add_option("--alignment", synth.options.synth.alignment_fraction,
                        "fraction of dance keyframes placed on music beats")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  synth_cmd->add_option("--genre", synth.options.genres, "genre templates to cycle through");

  try {
    app.parse(argc, argv);
    if (train_cmd->parsed()) return cmd_train(train_flags);
    if (gen_cmd->parsed()) return cmd_generate(gen);
    if (eval_cmd->parsed()) return cmd_eval(ev, eval_flags);
    if (gw_cmd->parsed()) return cmd_gw(gw);
    if (plot_cmd->parsed()) return cmd_plot(plot);
    if (synth_cmd->parsed()) return cmd_synth(synth);
    return fail(kUsage, "usage", "no command given");
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::Error& e) {
    return fail(kUsage, "usage", e.what());
  } catch (const data::FormatError& e) {
    return fail(kFormat, "format", e.detail(), {{"format_code", data::to_string(e.code())}});
  } catch (const ConfigError& e) {
    return fail(kConfig, "config", e.what());
  } catch (const ShapeError& e) {
    return fail(kConfig, "shape", e.what());
  } catch (const NumericError& e) {
    return fail(kNumeric, "numeric", e.what());
  } catch (const DegenerateRotationError& e) {
    return fail(kNumeric, "numeric", e.what());
  } catch (const std::exception& e) {
    return fail(kOther, "internal", e.what());
  }
}
