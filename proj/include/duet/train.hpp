#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "duet/adam.hpp"
#include "duet/gw.hpp"
#include "duet/losses.hpp"
#include "duet/model.hpp"
#include "duet/rng.hpp"
#include "duet/sequence.hpp"

namespace duet::train {

struct TrainConfig {
  std::size_t length = 75;  // frames per training window (T)
  std::size_t batch = 16;
  std::size_t steps = 2000;
  std::size_t layers = 6;
  std::size_t heads = 8;
  std::size_t width_music_to_dance = 512;
  std::size_t width_dance_to_music = 256;
  std::size_t feedforward_multiplier = 2;
  ad::LearningRateSchedule schedule;
  loss::LossWeights weights;
  loss::BatchReduction reduction = loss::BatchReduction::sum;
  bool gw = true;
  bool cycle = true;
  /// Also route the GW loss into the dance encoder (G_DM).
  bool gw_to_dance_encoder = false;
  ot::GWConfig gw_config;

  [[nodiscard]] model::ModelConfig model_config(model::Direction direction) const;
  /// Throws ConfigError: T < 2, batch 0, batch < 2 with GW on, bad model shape.
  void validate() const;
};

/// "paper": T=75, batch 16, 6 layers, widths 512/256, 8 heads, lr 1e-4.
/// "desk": T=24, batch 4, 2 layers, width 32, 4 heads, lr 1e-3.
TrainConfig preset(std::string_view name);

/// Entropic GW between two embedding batches as a tape primitive. The value
/// is entropic_gw's; the backward pass is the fixed-plan gradient, into `zx`
/// and, if `both`, into `zy`.
ad::Var gromov_wasserstein(ad::Var zx, ad::Var zy, const ot::GWConfig& cfg, bool both);

struct Generators {
  model::GeneratorWeights music_to_dance;
  model::GeneratorWeights dance_to_music;
};

Generators initialize_generators(const TrainConfig& cfg, Rng& rng);

struct Optimizers {
  ad::AdamState music_to_dance;
  ad::AdamState dance_to_music;
};

Optimizers make_optimizers(const TrainConfig& cfg);

struct StepDiagnostics {
  /// Gradient of the weighted GW term alone with respect to G_MD tensors.
  std::vector<ad::Tensor> gw_gradient_music_to_dance;
  /// Full routed gradients.
  std::vector<ad::Tensor> gradient_music_to_dance;
  std::vector<ad::Tensor> gradient_dance_to_music;
};

/// Forward pass, routed backward pass and one Adam update per generator:
///   G_MD <- w_gw GW + w_rec L_rec_dance + w_cyc L_cyc_dance
///   G_DM <- w_rec L_rec_music + w_cyc L_cyc_music
/// A non-finite value raises NumericError before anything is updated.
loss::LossBreakdown train_step(const model::Batch& batch, Generators& generators, Optimizers& optimizers,
                               const TrainConfig& cfg, StepDiagnostics* diagnostics = nullptr);

/// Every loss term for a batch, regardless of the enable flags, without updates.
loss::LossBreakdown evaluate_losses(const model::Batch& batch, const Generators& generators, const TrainConfig& cfg);

/// B random windows of T frames from the given pairs.
model::Batch sample_batch(std::span<const data::PairedSample* const> pairs, std::size_t length, std::size_t batch,
                          Rng& rng);

struct LogRow {
  std::size_t step = 0;
  loss::LossBreakdown losses;
  double learning_rate = 0.0;
};

std::string log_header();
std::string log_row(const LogRow& row);

/// Called after every step; returning false stops training.
using StepCallback = std::function<bool(const LogRow& row, const Generators& generators)>;

struct TrainingRun {
  Generators generators;
  std::vector<LogRow> log;
};

/// Trains from scratch on the train split. Randomness: "init" for weights,
/// "data" for window sampling, both substreams of `seed`.
TrainingRun train(const data::PairedDataset& dataset, const TrainConfig& cfg, std::uint64_t seed,
                  const StepCallback& on_step = {});

// ---------------------------------------------------------------------------
// Checkpoints: "MDCK", u16 version, u32 length + JSON metadata, u32 tensor
// count, then per tensor u32 name length, name, u32 rank, u32 extents, f64
// data, all little-endian. Tensor names carry an "md." or "dm." prefix.

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  Generators generators;
  std::size_t step = 0;
  std::string config_json = "{}";  // the run configuration, stored verbatim
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Format problems raise data::FormatError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace duet::train
