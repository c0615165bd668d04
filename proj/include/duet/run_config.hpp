#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "duet/eval.hpp"
#include "duet/train.hpp"

namespace duet {

/// Where a resolved field came from.
enum class Provenance { default_value, file, env, flag };

std::string to_string(Provenance p);
Provenance parse_provenance(const std::string& text);

/// Fully resolved settings of one command. Every field has a flat JSON key
/// (see RunConfig::keys) and a provenance entry.
struct RunConfig {
  std::string preset = "paper";
  std::uint64_t seed = 0;
  train::TrainConfig train = train::preset("paper");

  std::filesystem::path data_dir;  // base for relative manifest and skeleton paths
  std::filesystem::path manifest;  // empty: synthetic data
  std::filesystem::path skeleton;  // empty: canonical skeleton
  std::size_t synth_train_pairs = 32;
  std::size_t synth_test_pairs = 8;
  std::size_t synth_frames = 0;  // 0: four training windows

  std::filesystem::path out = "duet_out";
  std::size_t checkpoint_every = 500;  // 0: final checkpoint only
  std::size_t log_every = 50;          // progress lines on stderr

  std::size_t eval_window = 0;  // 0: the training window length
  std::size_t eval_generations = 5;
  std::size_t eval_trials = 1;
  std::size_t eval_max_sequences = 0;

  std::map<std::string, Provenance> provenance;

  /// Defaults of a preset, every field marked default_value. A data_dir
  /// default of DUET_DATA_DIR (env) or the build's data directory.
  static RunConfig defaults(const std::string& preset);

  /// Resolution order: preset defaults, then the config file, then flags.
  /// The preset is taken from the flags, else the file, else "paper".
  /// Flag values are JSON scalars keyed like the file ("steps": 200).
  static RunConfig resolve(const std::string& file_text, const std::map<std::string, std::string>& flags);

  /// Sets one field from JSON and records its provenance. Unknown keys and
  /// ill-typed values raise ConfigError.
  void set(const std::string& key, const std::string& json_value, Provenance source);

  [[nodiscard]] std::string to_json() const;
  /// Inverse of to_json, provenance included.
  static RunConfig from_json(const std::string& text);

  /// Throws ConfigError on inconsistent settings.
  void validate() const;

  [[nodiscard]] std::filesystem::path resolve_path(const std::filesystem::path& p) const;
  /// Manifest dataset, or the synthetic one drawn from `seed`.
  [[nodiscard]] data::PairedDataset dataset() const;
  [[nodiscard]] rot::Skeleton load_skeleton() const;
  [[nodiscard]] eval::EvalOptions eval_options() const;

  static const std::vector<std::string>& keys();

  friend bool operator==(const RunConfig& a, const RunConfig& b) { return a.to_json() == b.to_json(); }
};

}  // namespace duet
