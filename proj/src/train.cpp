#include "duet/train.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "duet/errors.hpp"
#include "duet/mdseq.hpp"
#include "json.hpp"

namespace duet::train {

namespace {

using ad::Tape;
using ad::Tensor;
using ad::Var;
using data::FormatError;
using data::FormatErrorCode;

ot::Matrix to_matrix(const Tensor& t) {
  ot::Matrix m(Eigen::Index(t.rows()), Eigen::Index(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m(Eigen::Index(r), Eigen::Index(c)) = t(r, c);
  return m;
}

Tensor to_tensor(const ot::Matrix& m, double scale) {
  Tensor t = Tensor::matrix(std::size_t(m.rows()), std::size_t(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t(std::size_t(r), std::size_t(c)) = scale * m(r, c);
  return t;
}

std::vector<Tensor> collect(const ad::Gradients& grads, const std::vector<Var>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Var& p : params) out.push_back(grads[p]);
  return out;
}

void update(ad::AdamState& state, model::GeneratorWeights& weights, const std::vector<Tensor>& grads) {
  std::vector<Tensor*> params;
  params.reserve(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) params.push_back(&weights[i]);
  ad::adam_step(state, params, grads);
}

bool all_finite(const std::vector<Tensor>& grads) {
  for (const Tensor& g : grads)
    if (!g.all_finite()) return false;
  return true;
}

}  // namespace

model::ModelConfig TrainConfig::model_config(model::Direction direction) const {
  const std::size_t width =
      direction == model::Direction::music_to_dance ? width_music_to_dance : width_dance_to_music;
  return model::ModelConfig::for_direction(direction, width, layers, heads, feedforward_multiplier * width);
}

void TrainConfig::validate() const {
  if (length < 2) throw ConfigError("training window T must be at least 2 frames");
  if (batch == 0) throw ConfigError("batch size must be positive");
  if (gw && batch < 2) throw ConfigError("GW loss needs a batch of at least 2 pairs");
  if (steps == 0) throw ConfigError("step count must be positive");
  model_config(model::Direction::music_to_dance).validate();
  model_config(model::Direction::dance_to_music).validate();
  gw_config.validate();
  for (double w : {weights.gw, weights.dance_reconstruction, weights.music_reconstruction, weights.dance_cycle,
                   weights.music_cycle}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and nonnegative");
  }
}

TrainConfig preset(std::string_view name) {
  TrainConfig cfg;
  if (name == "paper") return cfg;
  if (name == "desk") {
    cfg.length = 24;
    cfg.batch = 4;
    cfg.layers = 2;
    cfg.heads = 4;
    cfg.width_music_to_dance = 32;
    cfg.width_dance_to_music = 32;
    cfg.schedule.initial = 1e-3;
    cfg.schedule.milestones = {{20000, 1e-4}, {40000, 5e-5}};
    return cfg;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected paper or desk)");
}

Var gromov_wasserstein(Var zx, Var zy, const ot::GWConfig& cfg, bool both) {
  if (zx.tape != zy.tape) throw Error("operands recorded on different tapes");
  Tape& tape = *zx.tape;
  ot::Matrix x = to_matrix(zx.value()), y = to_matrix(zy.value());
  ot::GWResult result = ot::entropic_gw(x, y, cfg);
  return tape.record("gromov_wasserstein", Tensor::scalar(result.value), {zx, zy},
                     [zx, zy, x = std::move(x), y = std::move(y), plan = std::move(result.plan), both](
                         const Tensor& g, ad::Accumulator& acc) {
                       const ot::GWGradient grad = ot::gw_gradient(x, y, plan, both);
                       if (acc.wants(zx)) acc.add(zx, to_tensor(grad.zx, g[0]));
                       if (both && acc.wants(zy)) acc.add(zy, to_tensor(grad.zy, g[0]));
                     });
}

Generators initialize_generators(const TrainConfig& cfg, Rng& rng) {
  Rng md = rng.substream("music_to_dance"), dm = rng.substream("dance_to_music");
  return {model::GeneratorWeights::initialize(cfg.model_config(model::Direction::music_to_dance), md),
          model::GeneratorWeights::initialize(cfg.model_config(model::Direction::dance_to_music), dm)};
}

Optimizers make_optimizers(const TrainConfig& cfg) {
  ad::AdamConfig adam;
  adam.schedule = cfg.schedule;
  return {ad::AdamState(adam), ad::AdamState(adam)};
}

loss::LossBreakdown train_step(const model::Batch& batch, Generators& generators, Optimizers& optimizers,
                               const TrainConfig& cfg, StepDiagnostics* diagnostics) {
  if (cfg.gw && batch.size < 2) throw ConfigError("GW loss needs a batch of at least 2 pairs");
  Tape tape;
  const model::BoundGenerator md(tape, generators.music_to_dance, true);
  const model::BoundGenerator dm(tape, generators.dance_to_music, true);
  const loss::LossWeights& w = cfg.weights;
  loss::LossBreakdown out;

  const loss::LossPair rec = loss::reconstruction_losses(tape, batch, md, dm, cfg.reduction);
  out.dance_reconstruction = rec.dance.item();
  out.music_reconstruction = rec.music.item();
  Var total_md = ad::scale(rec.dance, w.dance_reconstruction);
  Var total_dm = ad::scale(rec.music, w.music_reconstruction);

  Var gw_term = tape.constant(Tensor::scalar(0.0));
  if (cfg.gw) {
    const Var zx = md.encode(tape.constant(model::to_tensor(batch.music)), batch.size).embedding;
    const Var zy = dm.encode(tape.constant(model::to_tensor(batch.dance)), batch.size).embedding;
    const Var gw = gromov_wasserstein(zx, zy, cfg.gw_config, cfg.gw_to_dance_encoder);
    out.gw = gw.item();
    gw_term = ad::scale(gw, w.gw);
    total_md = total_md + gw_term;
    if (cfg.gw_to_dance_encoder) total_dm = total_dm + gw_term;
  }
  if (cfg.cycle) {
    const loss::LossPair cyc = loss::cycle_losses(tape, batch, md, dm, cfg.reduction);
    out.dance_cycle = cyc.dance.item();
    out.music_cycle = cyc.music.item();
    total_md = total_md + ad::scale(cyc.dance, w.dance_cycle);
    total_dm = total_dm + ad::scale(cyc.music, w.music_cycle);
  }
  out.total_music_to_dance = total_md.item();
  out.total_dance_to_music = total_dm.item();

  std::vector<ad::Objective> objectives{{total_md, md.parameters()}, {total_dm, dm.parameters()}};
  if (diagnostics != nullptr) objectives.push_back({gw_term, md.parameters()});
  const std::vector<ad::Gradients> grads = tape.backward(objectives);
  std::vector<Tensor> grad_md = collect(grads[0], md.parameters());
  std::vector<Tensor> grad_dm = collect(grads[1], dm.parameters());
  if (!all_finite(grad_md) || !all_finite(grad_dm)) throw NumericError("non-finite gradient; step aborted");

  update(optimizers.music_to_dance, generators.music_to_dance, grad_md);
  update(optimizers.dance_to_music, generators.dance_to_music, grad_dm);
  if (diagnostics != nullptr) {
    diagnostics->gw_gradient_music_to_dance = collect(grads[2], md.parameters());
    diagnostics->gradient_music_to_dance = std::move(grad_md);
    diagnostics->gradient_dance_to_music = std::move(grad_dm);
  }
  return out;
}

loss::LossBreakdown evaluate_losses(const model::Batch& batch, const Generators& generators, const TrainConfig& cfg) {
  Tape tape;
  const model::BoundGenerator md(tape, generators.music_to_dance, false);
  const model::BoundGenerator dm(tape, generators.dance_to_music, false);
  const loss::LossWeights& w = cfg.weights;
  loss::LossBreakdown out;
  const loss::LossPair rec = loss::reconstruction_losses(tape, batch, md, dm, cfg.reduction);
  const loss::LossPair cyc = loss::cycle_losses(tape, batch, md, dm, cfg.reduction);
  out.dance_reconstruction = rec.dance.item();
  out.music_reconstruction = rec.music.item();
  out.dance_cycle = cyc.dance.item();
  out.music_cycle = cyc.music.item();
  if (batch.size >= 2) {
    const Var zx = md.encode(tape.constant(model::to_tensor(batch.music)), batch.size).embedding;
    const Var zy = dm.encode(tape.constant(model::to_tensor(batch.dance)), batch.size).embedding;
    out.gw = ot::entropic_gw(to_matrix(zx.value()), to_matrix(zy.value()), cfg.gw_config).value;
  }
  out.total_music_to_dance = w.dance_reconstruction * out.dance_reconstruction +
                             (cfg.gw ? w.gw * out.gw : 0.0) + (cfg.cycle ? w.dance_cycle * out.dance_cycle : 0.0);
  out.total_dance_to_music = w.music_reconstruction * out.music_reconstruction +
                             (cfg.gw && cfg.gw_to_dance_encoder ? w.gw * out.gw : 0.0) +
                             (cfg.cycle ? w.music_cycle * out.music_cycle : 0.0);
  return out;
}

model::Batch sample_batch(std::span<const data::PairedSample* const> pairs, std::size_t length, std::size_t batch,
                          Rng& rng) {
  if (pairs.empty()) throw ConfigError("no training pairs to sample from");
  std::vector<data::MusicSequence> music;
  std::vector<data::DanceSequence> dance;
  for (std::size_t b = 0; b < batch; ++b) {
    const data::PairedSample& pair = *pairs[rng.below(pairs.size())];
    const std::size_t frames = pair.music.length();
    if (frames < length) {
      throw ConfigError("pair of " + std::to_string(frames) + " frames is shorter than the training window T=" +
                        std::to_string(length));
    }
    const auto offset = Eigen::Index(rng.below(frames - length + 1));
    const auto n = Eigen::Index(length);
    music.emplace_back(data::FrameMatrix(pair.music.frames().middleRows(offset, n)), pair.music.fps());
    dance.emplace_back(data::FrameMatrix(pair.dance.frames().middleRows(offset, n)), pair.dance.fps());
  }
  return model::make_batch(music, dance);
}

std::string log_header() { return "step," + loss::LossBreakdown::csv_header() + ",learning_rate"; }

std::string log_row(const LogRow& row) {
  char lr[32];
  std::snprintf(lr, sizeof lr, "%.17g", row.learning_rate);
  return std::to_string(row.step) + "," + row.losses.csv_row() + "," + lr;
}

TrainingRun train(const data::PairedDataset& dataset, const TrainConfig& cfg, std::uint64_t seed,
                  const StepCallback& on_step) {
  cfg.validate();
  const Rng root(seed);
  Rng init = root.substream("init");
  Rng sampler = root.substream("data");
  const std::vector<const data::PairedSample*> pairs = dataset.split(data::Split::train);
  if (pairs.empty()) throw ConfigError("dataset has no training pairs");

  TrainingRun run{initialize_generators(cfg, init), {}};
  Optimizers optimizers = make_optimizers(cfg);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const model::Batch batch = sample_batch(pairs, cfg.length, cfg.batch, sampler);
    LogRow row;
    row.step = step;
    try {
      row.losses = train_step(batch, run.generators, optimizers, cfg);
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step) + ": " + e.what());
    }
    row.learning_rate = optimizers.music_to_dance.last_learning_rate;
    run.log.push_back(row);
    if (on_step && !on_step(row, run.generators)) break;
  }
  return run;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'M', 'D', 'C', 'K'};

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(char((value >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= U(std::uint8_t(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return value;
  }
  double get_double() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  [[nodiscard]] bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError(FormatErrorCode::truncated, "checkpoint ends unexpectedly");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

void put_weights(std::string& out, const char* prefix, const model::GeneratorWeights& weights) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const std::string name = std::string(prefix) + weights.name(i);
    put_le(out, std::uint32_t(name.size()));
    out += name;
    const Tensor& t = weights[i];
    put_le(out, std::uint32_t(t.rank()));
    for (std::size_t e : t.shape()) put_le(out, std::uint32_t(e));
    for (double v : t.data()) put_le(out, std::bit_cast<std::uint64_t>(v));
  }
}

nlohmann::json model_to_json(const model::ModelConfig& cfg) {
  return {{"input_channels", cfg.input_channels}, {"output_channels", cfg.output_channels},
          {"width", cfg.width},                   {"layers", cfg.layers},
          {"heads", cfg.heads},                   {"feedforward", cfg.feedforward}};
}

model::ModelConfig model_from_json(const nlohmann::json& j) {
  model::ModelConfig cfg;
  cfg.input_channels = j.at("input_channels").get<std::size_t>();
  cfg.output_channels = j.at("output_channels").get<std::size_t>();
  cfg.width = j.at("width").get<std::size_t>();
  cfg.layers = j.at("layers").get<std::size_t>();
  cfg.heads = j.at("heads").get<std::size_t>();
  cfg.feedforward = j.at("feedforward").get<std::size_t>();
  return cfg;
}

void read_weights(Reader& in, const char* prefix, model::GeneratorWeights& weights) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const std::string expected = std::string(prefix) + weights.name(i);
    const std::string name = in.get_string(in.get<std::uint32_t>());
    if (name != expected) {
      throw FormatError(FormatErrorCode::channel_mismatch,
                        "checkpoint tensor '" + name + "' found where '" + expected + "' was expected");
    }
    Tensor& t = weights[i];
    const auto rank = in.get<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    for (auto& e : shape) e = in.get<std::uint32_t>();
    if (shape != t.shape()) {
      throw FormatError(FormatErrorCode::channel_mismatch, "checkpoint tensor '" + name + "' has shape " +
                                                               ad::shape_string(shape) + ", expected " +
                                                               t.shape_string());
    }
    for (double& v : t.data()) v = in.get_double();
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  nlohmann::json meta;
  meta["step"] = checkpoint.step;
  meta["music_to_dance"] = model_to_json(checkpoint.generators.music_to_dance.config());
  meta["dance_to_music"] = model_to_json(checkpoint.generators.dance_to_music.config());
  meta["config"] = nlohmann::json::parse(checkpoint.config_json);
  const std::string meta_text = meta.dump();

  std::string out(kMagic, 4);
  put_le(out, kCheckpointVersion);
  put_le(out, std::uint32_t(meta_text.size()));
  out += meta_text;
  put_le(out, std::uint32_t(checkpoint.generators.music_to_dance.size() + checkpoint.generators.dance_to_music.size()));
  put_weights(out, "md.", checkpoint.generators.music_to_dance);
  put_weights(out, "dm.", checkpoint.generators.dance_to_music);

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw FormatError(FormatErrorCode::io, path.string() + ": cannot open for writing");
  file.write(out.data(), std::streamsize(out.size()));
  if (!file) throw FormatError(FormatErrorCode::io, path.string() + ": write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw FormatError(FormatErrorCode::io, path.string() + ": cannot open for reading");
  const std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  try {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
      throw FormatError(FormatErrorCode::bad_magic, "not a checkpoint (bad magic)");
    Reader in(bytes);
    in.get_string(4);
    const auto version = in.get<std::uint16_t>();
    if (version != kCheckpointVersion) {
      throw FormatError(FormatErrorCode::bad_version, "unsupported checkpoint version " + std::to_string(version));
    }
    const std::string meta_text = in.get_string(in.get<std::uint32_t>());
    nlohmann::json meta;
    Checkpoint cp;
    try {
      meta = nlohmann::json::parse(meta_text);
      cp.step = meta.at("step").get<std::size_t>();
      cp.generators.music_to_dance = model::GeneratorWeights(model_from_json(meta.at("music_to_dance")));
      cp.generators.dance_to_music = model::GeneratorWeights(model_from_json(meta.at("dance_to_music")));
      cp.config_json = meta.at("config").dump();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(FormatErrorCode::bad_version, std::string("checkpoint metadata is malformed: ") + e.what());
    } catch (const ConfigError& e) {
      throw FormatError(FormatErrorCode::bad_version, std::string("checkpoint metadata is malformed: ") + e.what());
    }
    const auto count = in.get<std::uint32_t>();
    if (count != cp.generators.music_to_dance.size() + cp.generators.dance_to_music.size()) {
      throw FormatError(FormatErrorCode::channel_mismatch,
                        "checkpoint holds " + std::to_string(count) + " tensors, its metadata implies " +
                            std::to_string(cp.generators.music_to_dance.size() + cp.generators.dance_to_music.size()));
    }
    read_weights(in, "md.", cp.generators.music_to_dance);
    read_weights(in, "dm.", cp.generators.dance_to_music);
    if (!in.done()) throw FormatError(FormatErrorCode::trailing_bytes, "unexpected bytes after the last tensor");
    return cp;
  } catch (const FormatError& e) {
    throw FormatError(e.code(), path.string() + ": " + e.detail());
  }
}

}  // namespace duet::train
