#include "duet/model.hpp"

#include <cmath>
#include <string>

#include "duet/errors.hpp"
#include "duet/rotations.hpp"

namespace duet::model {

namespace {

std::string layer_prefix(const char* stack, std::size_t layer) {
  return std::string(stack) + "." + std::to_string(layer) + ".";
}

/// Row-wise constant repeated for every sequence of a time-major batch.
Tensor repeat_rows(const Tensor& per_time, std::size_t batch) {
  Tensor out = Tensor::matrix(per_time.rows() * batch, per_time.cols());
  for (std::size_t t = 0; t < per_time.rows(); ++t)
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < per_time.cols(); ++c) out(t * batch + b, c) = per_time(t, c);
  return out;
}

/// B x (T*B) averaging matrix over time.
Tensor time_pooling(std::size_t length, std::size_t batch) {
  Tensor pool = Tensor::matrix(batch, length * batch);
  for (std::size_t t = 0; t < length; ++t)
    for (std::size_t b = 0; b < batch; ++b) pool(b, t * batch + b) = 1.0 / double(length);
  return pool;
}

void require_rows(const char* what, Var v, std::size_t batch) {
  if (batch == 0 || v.rows() == 0 || v.rows() % batch != 0) {
    throw ShapeError(std::string(what) + ": " + std::to_string(v.rows()) + " rows do not form " +
                     std::to_string(batch) + " sequences of at least one frame");
  }
}

void require_cols(const char* what, Var v, std::size_t cols) {
  if (v.cols() != cols) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(cols) + " channels, got " +
                     std::to_string(v.cols()));
  }
}

}  // namespace

std::string to_string(Direction direction) {
  return direction == Direction::music_to_dance ? "music-to-dance" : "dance-to-music";
}

Direction parse_direction(std::string_view text) {
  if (text == "music-to-dance") return Direction::music_to_dance;
  if (text == "dance-to-music") return Direction::dance_to_music;
  throw ConfigError("unknown direction '" + std::string(text) + "' (expected music-to-dance or dance-to-music)");
}

ModelConfig ModelConfig::for_direction(Direction direction, std::size_t width, std::size_t layers,
                                       std::size_t heads, std::size_t feedforward) {
  ModelConfig cfg;
  const bool md = direction == Direction::music_to_dance;
  cfg.input_channels = md ? data::kMusicChannels : data::kDanceChannels;
  cfg.output_channels = md ? data::kDanceChannels : data::kMusicOutputChannels;
  cfg.width = width;
  cfg.layers = layers;
  cfg.heads = heads;
  cfg.feedforward = feedforward;
  return cfg;
}

void ModelConfig::validate() const {
  if (input_channels == 0 || output_channels == 0 || width == 0 || layers == 0 || heads == 0 || feedforward == 0)
    throw ConfigError("model extents must be positive");
  if (width % heads != 0) {
    throw ConfigError("model width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
}

// ---------------------------------------------------------------------------
// Weights

void GeneratorWeights::add(std::string name, Tensor value) {
  index_.emplace(name, tensors_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
}

GeneratorWeights::GeneratorWeights(const ModelConfig& config) : config_(config) {
  config.validate();
  const std::size_t d = config.width, f = config.feedforward;
  auto norm = [&](const std::string& name) {
    add(name + ".g", Tensor::matrix(1, d, 1.0));
    add(name + ".b", Tensor::matrix(1, d));
  };
  auto attention = [&](const std::string& name) {
    for (const char* w : {".wq", ".wk", ".wv", ".wo"}) add(name + w, Tensor::matrix(d, d));
  };
  auto ff = [&](const std::string& name) {
    add(name + ".w1", Tensor::matrix(d, f));
    add(name + ".b1", Tensor::matrix(1, f));
    add(name + ".w2", Tensor::matrix(f, d));
    add(name + ".b2", Tensor::matrix(1, d));
  };

  add("in.w", Tensor::matrix(config.input_channels, d));
  add("in.b", Tensor::matrix(1, d));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = layer_prefix("enc", l);
    norm(p + "ln1");
    attention(p + "attn");
    norm(p + "ln2");
    ff(p + "ff");
  }
  norm("enc.ln");
  add("dec.in.w", Tensor::matrix(config.output_channels, d));
  add("dec.in.b", Tensor::matrix(1, d));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = layer_prefix("dec", l);
    norm(p + "ln1");
    attention(p + "self");
    norm(p + "ln2");
    attention(p + "cross");
    norm(p + "ln3");
    ff(p + "ff");
  }
  norm("dec.ln");
  add("out.w", Tensor::matrix(d, config.output_channels));
  add("out.b", Tensor::matrix(1, config.output_channels));
}

GeneratorWeights GeneratorWeights::initialize(const ModelConfig& config, Rng& rng) {
  GeneratorWeights w(config);
  // Residual-branch outputs are scaled down with depth.
  const double residual_scale = 1.0 / std::sqrt(2.0 * double(config.layers));
  for (std::size_t i = 0; i < w.size(); ++i) {
    const std::string& name = w.names_[i];
    // Weight matrices are the tensors whose last name component starts with 'w'.
    if (name[name.rfind('.') + 1] != 'w') continue;
    Tensor& t = w.tensors_[i];
    double sd = 1.0 / std::sqrt(double(t.rows()));
    if (name.ends_with(".wo") || name.ends_with(".w2")) sd *= residual_scale;
    for (double& v : t.data()) v = rng.normal(0.0, sd);
  }
  return w;
}

std::size_t GeneratorWeights::index(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("generator has no tensor named '" + std::string(name) + "'");
  return it->second;
}

std::size_t GeneratorWeights::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors_) n += t.size();
  return n;
}

Tensor to_tensor(const FrameMatrix& frames) {
  return Tensor({std::size_t(frames.rows()), std::size_t(frames.cols())},
                std::vector<double>(frames.data(), frames.data() + frames.size()));
}

FrameMatrix to_frames(const Tensor& tensor) {
  FrameMatrix out(Eigen::Index(tensor.rows()), Eigen::Index(tensor.cols()));
  std::copy(tensor.data().begin(), tensor.data().end(), out.data());
  return out;
}

Tensor positional_encoding(std::size_t length, std::size_t width, std::size_t offset) {
  Tensor pe = Tensor::matrix(length, width);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t c = 0; c < width; ++c) {
      const double rate = std::pow(10000.0, -double(c - c % 2) / double(width));
      const double angle = double(t + offset) * rate;
      pe(t, c) = c % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Batches

FrameMatrix interleave(std::span<const FrameMatrix> sequences) {
  if (sequences.empty()) throw ShapeError("interleave: no sequences");
  const Eigen::Index length = sequences[0].rows(), cols = sequences[0].cols();
  const auto batch = Eigen::Index(sequences.size());
  FrameMatrix out(length * batch, cols);
  for (Eigen::Index b = 0; b < batch; ++b) {
    if (sequences[b].rows() != length || sequences[b].cols() != cols)
      throw ShapeError("interleave: sequences differ in shape");
    for (Eigen::Index t = 0; t < length; ++t) out.row(t * batch + b) = sequences[b].row(t);
  }
  return out;
}

std::vector<FrameMatrix> deinterleave(const FrameMatrix& stacked, std::size_t batch) {
  if (batch == 0 || stacked.rows() % Eigen::Index(batch) != 0)
    throw ShapeError("deinterleave: rows do not split into " + std::to_string(batch) + " sequences");
  const Eigen::Index length = stacked.rows() / Eigen::Index(batch);
  std::vector<FrameMatrix> out(batch, FrameMatrix(length, stacked.cols()));
  for (Eigen::Index t = 0; t < length; ++t)
    for (std::size_t b = 0; b < batch; ++b) out[b].row(t) = stacked.row(t * Eigen::Index(batch) + Eigen::Index(b));
  return out;
}

Batch make_batch(std::span<const data::MusicSequence> music, std::span<const data::DanceSequence> dance) {
  if (music.empty() || music.size() != dance.size())
    throw ShapeError("make_batch: need equally many music and dance sequences");
  std::vector<FrameMatrix> m, mt, d;
  for (std::size_t i = 0; i < music.size(); ++i) {
    if (music[i].length() == 0 || music[i].length() != dance[i].length() ||
        music[i].length() != music[0].length()) {
      throw ShapeError("make_batch: sequence " + std::to_string(i) + " has a different length");
    }
    m.push_back(music[i].full_frames());
    mt.push_back(music[i].chroma_beat());
    d.push_back(dance[i].frames());
  }
  Batch batch;
  batch.size = music.size();
  batch.length = music[0].length();
  batch.music = interleave(m);
  batch.music_target = interleave(mt);
  batch.dance = interleave(d);
  batch.music_start = batch.music_target.topRows(Eigen::Index(batch.size));
  batch.dance_start = batch.dance.topRows(Eigen::Index(batch.size));
  return batch;
}

// ---------------------------------------------------------------------------
// Bound generator

BoundGenerator::BoundGenerator(Tape& tape, const GeneratorWeights& weights, bool trainable)
    : tape_(&tape), config_(weights.config()), weights_(&weights) {
  params_.reserve(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i)
    params_.push_back(trainable ? tape.parameter(weights[i]) : tape.constant(weights[i]));
}

Var BoundGenerator::param(const std::string& name) const { return params_[weights_->index(name)]; }

Var BoundGenerator::norm(Var x, const std::string& prefix) const {
  return ad::layer_norm(x) * param(prefix + ".g") + param(prefix + ".b");
}

Var BoundGenerator::feedforward(Var x, const std::string& prefix) const {
  const Var h = ad::gelu(ad::matmul(x, param(prefix + ".w1")) + param(prefix + ".b1"));
  return ad::matmul(h, param(prefix + ".w2")) + param(prefix + ".b2");
}

Var BoundGenerator::output_head(Var h) const {
  return ad::matmul(norm(h, "dec.ln"), param("out.w")) + param("out.b");
}

Encoded BoundGenerator::encode(Var input, std::size_t batch, AttentionTrace* trace) const {
  require_rows("encode", input, batch);
  require_cols("encode", input, config_.input_channels);
  const std::size_t length = input.rows() / batch;
  Tape& tape = *tape_;
  Var x = ad::matmul(input, param("in.w")) + param("in.b");
  x = x + tape.constant(repeat_rows(positional_encoding(length, config_.width), batch));
  const ad::AttentionLayout layout{config_.heads, batch, false, 0};
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = layer_prefix("enc", l);
    const Var a = norm(x, p + "ln1");
    const Var q = ad::matmul(a, param(p + "attn.wq"));
    const Var k = ad::matmul(a, param(p + "attn.wk"));
    const Var v = ad::matmul(a, param(p + "attn.wv"));
    if (trace != nullptr) {
      for (Tensor& w : ad::attention_weights(q.value(), k.value(), layout)) trace->push_back(std::move(w));
    }
    x = x + ad::matmul(ad::attention(q, k, v, layout), param(p + "attn.wo"));
    x = x + feedforward(norm(x, p + "ln2"), p + "ff");
  }
  Encoded out;
  out.context = norm(x, "enc.ln");
  out.embedding = ad::matmul(tape.constant(time_pooling(length, batch)), out.context);
  out.batch = batch;
  return out;
}

Var BoundGenerator::decode_teacher_forced(const Encoded& memory, Var start, Var targets,
                                          AttentionTrace* trace) const {
  const std::size_t batch = memory.batch;
  require_rows("decode", targets, batch);
  require_cols("decode", targets, config_.output_channels);
  require_cols("decode start token", start, config_.output_channels);
  if (start.rows() != batch) throw ShapeError("decode: need one start token per sequence");
  const std::size_t length = targets.rows() / batch;
  Tape& tape = *tape_;

  Var inputs = start;
  if (length > 1) {
    const std::vector<Var> parts{start, ad::slice_rows(targets, 0, (length - 1) * batch)};
    inputs = ad::concat_rows(parts);
  }
  Var h = ad::matmul(inputs, param("dec.in.w")) + param("dec.in.b");
  h = h + tape.constant(repeat_rows(positional_encoding(length, config_.width), batch));
  const ad::AttentionLayout self_layout{config_.heads, batch, true, 0};
  const ad::AttentionLayout cross_layout{config_.heads, batch, false, 0};
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = layer_prefix("dec", l);
    const Var a = norm(h, p + "ln1");
    const Var q = ad::matmul(a, param(p + "self.wq"));
    const Var k = ad::matmul(a, param(p + "self.wk"));
    const Var v = ad::matmul(a, param(p + "self.wv"));
    if (trace != nullptr) {
      for (Tensor& w : ad::attention_weights(q.value(), k.value(), self_layout)) trace->push_back(std::move(w));
    }
    h = h + ad::matmul(ad::attention(q, k, v, self_layout), param(p + "self.wo"));

    const Var c = norm(h, p + "ln2");
    const Var cq = ad::matmul(c, param(p + "cross.wq"));
    const Var ck = ad::matmul(memory.context, param(p + "cross.wk"));
    const Var cv = ad::matmul(memory.context, param(p + "cross.wv"));
    if (trace != nullptr) {
      for (Tensor& w : ad::attention_weights(cq.value(), ck.value(), cross_layout)) trace->push_back(std::move(w));
    }
    h = h + ad::matmul(ad::attention(cq, ck, cv, cross_layout), param(p + "cross.wo"));
    h = h + feedforward(norm(h, p + "ln3"), p + "ff");
  }
  return output_head(h);
}

Var BoundGenerator::decode_autoregressive(const Encoded& memory, Var start, std::size_t length) const {
  const std::size_t batch = memory.batch;
  if (length == 0) throw ShapeError("decode: length must be at least 1");
  require_cols("decode start token", start, config_.output_channels);
  if (start.rows() != batch) throw ShapeError("decode: need one start token per sequence");
  Tape& tape = *tape_;

  struct LayerCache {
    Var keys, values, cross_keys, cross_values;
    bool empty = true;
  };
  std::vector<LayerCache> cache(config_.layers);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = layer_prefix("dec", l);
    cache[l].cross_keys = ad::matmul(memory.context, param(p + "cross.wk"));
    cache[l].cross_values = ad::matmul(memory.context, param(p + "cross.wv"));
  }
  const Tensor pe = positional_encoding(length, config_.width);
  const ad::AttentionLayout cross_layout{config_.heads, batch, false, 0};

  std::vector<Var> outputs;
  outputs.reserve(length);
  Var previous = start;
  for (std::size_t t = 0; t < length; ++t) {
    Tensor pe_t = Tensor::matrix(1, config_.width);
    for (std::size_t c = 0; c < config_.width; ++c) pe_t(0, c) = pe(t, c);
    Var h = ad::matmul(previous, param("dec.in.w")) + param("dec.in.b");
    h = h + tape.constant(repeat_rows(pe_t, batch));
    const ad::AttentionLayout self_layout{config_.heads, batch, true, t};
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string p = layer_prefix("dec", l);
      LayerCache& lc = cache[l];
      const Var a = norm(h, p + "ln1");
      const Var k = ad::matmul(a, param(p + "self.wk"));
      const Var v = ad::matmul(a, param(p + "self.wv"));
      if (lc.empty) {
        lc.keys = k;
        lc.values = v;
        lc.empty = false;
      } else {
        lc.keys = ad::concat_rows(std::vector<Var>{lc.keys, k});
        lc.values = ad::concat_rows(std::vector<Var>{lc.values, v});
      }
      const Var q = ad::matmul(a, param(p + "self.wq"));
      h = h + ad::matmul(ad::attention(q, lc.keys, lc.values, self_layout), param(p + "self.wo"));
      const Var cq = ad::matmul(norm(h, p + "ln2"), param(p + "cross.wq"));
      h = h + ad::matmul(ad::attention(cq, lc.cross_keys, lc.cross_values, cross_layout), param(p + "cross.wo"));
      h = h + feedforward(norm(h, p + "ln3"), p + "ff");
    }
    previous = output_head(h);
    outputs.push_back(previous);
  }
  return outputs.size() == 1 ? outputs[0] : ad::concat_rows(outputs);
}

Var BoundGenerator::teacher_forced(Var input, Var start, Var targets, std::size_t batch) const {
  return decode_teacher_forced(encode(input, batch), start, targets);
}

Var BoundGenerator::autoregressive(Var input, Var start, std::size_t batch) const {
  require_rows("autoregressive", input, batch);
  return decode_autoregressive(encode(input, batch), start, input.rows() / batch);
}

// ---------------------------------------------------------------------------
// Inference

FrameMatrix random_dance_start(Rng& rng) {
  rot::Pose pose;
  for (auto& r : pose.rotations) {
    const rot::Vec3 aa(rng.normal(0.0, 0.1), rng.normal(0.0, 0.1), rng.normal(0.0, 0.1));
    r = rot::axis_angle_to_matrix(aa);
  }
  return data::DanceSequence::from_poses({pose}).frames();
}

FrameMatrix music_start(const data::ChordSeed& chord) {
  const auto token = data::music_start_token(chord);
  FrameMatrix out(1, Eigen::Index(token.size()));
  for (std::size_t c = 0; c < token.size(); ++c) out(0, Eigen::Index(c)) = token[c];
  return out;
}

data::ChordSeed random_chord(Rng& rng) {
  data::ChordSeed chord;
  chord.root = int(rng.below(12));
  chord.quality = rng.below(2) == 0 ? data::ChordQuality::major : data::ChordQuality::minor;
  return chord;
}

FrameMatrix embed(const GeneratorWeights& weights, const FrameMatrix& input) {
  Tape tape;
  const BoundGenerator g(tape, weights, false);
  return to_frames(g.encode(tape.constant(to_tensor(input)), 1).embedding.value());
}

FrameMatrix generate(const GeneratorWeights& weights, const FrameMatrix& input, const FrameMatrix& start,
                     std::size_t window) {
  if (window == 0) throw ConfigError("generation window must be at least 1 frame");
  if (input.rows() == 0) throw ShapeError("generate: empty input");
  const ModelConfig& cfg = weights.config();
  if (std::size_t(input.cols()) != cfg.input_channels) {
    throw ShapeError("generate: expected " + std::to_string(cfg.input_channels) + " input channels, got " +
                     std::to_string(input.cols()));
  }
  FrameMatrix out(input.rows(), Eigen::Index(cfg.output_channels));
  FrameMatrix token = start;
  for (Eigen::Index begin = 0; begin < input.rows(); begin += Eigen::Index(window)) {
    const Eigen::Index n = std::min<Eigen::Index>(Eigen::Index(window), input.rows() - begin);
    Tape tape;
    const BoundGenerator g(tape, weights, false);
    const Encoded memory = g.encode(tape.constant(to_tensor(input.middleRows(begin, n))), 1);
    const FrameMatrix chunk =
        to_frames(g.decode_autoregressive(memory, tape.constant(to_tensor(token)), std::size_t(n)).value());
    out.middleRows(begin, n) = chunk;
    token = chunk.bottomRows(1);
  }
  return out;
}

}  // namespace duet::model
