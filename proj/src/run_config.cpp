#include "duet/run_config.hpp"

#include <cstdlib>
#include <functional>

#include "duet/errors.hpp"
#include "duet/manifest.hpp"
#include "duet/synth.hpp"
#include "json.hpp"

namespace duet {

namespace {

using nlohmann::json;

struct Field {
  std::string key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <typename T>
T convert(const std::string& key, const json& j) {
  bool ok = false;
  if constexpr (std::is_same_v<T, bool>) {
    ok = j.is_boolean();
  } else if constexpr (std::is_integral_v<T>) {
    ok = j.is_number_unsigned() || (j.is_number_integer() && j.get<long long>() >= 0);
  } else if constexpr (std::is_floating_point_v<T>) {
    ok = j.is_number();
  } else {
    ok = j.is_string();
  }
  if (!ok) throw ConfigError("config field '" + key + "': unexpected value " + j.dump());
  return j.get<T>();
}

template <typename T, typename Access>
Field field(const char* key, Access access) {
  return {key, [access](const RunConfig& c) { return json(access(const_cast<RunConfig&>(c))); },
          [access, key = std::string(key)](RunConfig& c, const json& j) { access(c) = convert<T>(key, j); }};
}

template <typename Access>
Field path_field(const char* key, Access access) {
  return {key, [access](const RunConfig& c) { return json(access(const_cast<RunConfig&>(c)).string()); },
          [access, key = std::string(key)](RunConfig& c, const json& j) {
            access(c) = std::filesystem::path(convert<std::string>(key, j));
          }};
}

#define DUET_ACCESS(expr) [](RunConfig& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(field<std::string>("preset", DUET_ACCESS(preset)));
    f.push_back(field<std::uint64_t>("seed", DUET_ACCESS(seed)));
    f.push_back(field<std::size_t>("steps", DUET_ACCESS(train.steps)));
    f.push_back(field<std::size_t>("length", DUET_ACCESS(train.length)));
    f.push_back(field<std::size_t>("batch", DUET_ACCESS(train.batch)));
    f.push_back(field<std::size_t>("layers", DUET_ACCESS(train.layers)));
    f.push_back(field<std::size_t>("heads", DUET_ACCESS(train.heads)));
    f.push_back(field<std::size_t>("width_music_to_dance", DUET_ACCESS(train.width_music_to_dance)));
    f.push_back(field<std::size_t>("width_dance_to_music", DUET_ACCESS(train.width_dance_to_music)));
    f.push_back(field<std::size_t>("feedforward_multiplier", DUET_ACCESS(train.feedforward_multiplier)));
    f.push_back(field<double>("learning_rate", DUET_ACCESS(train.schedule.initial)));
    f.push_back({"lr_milestones",
                 [](const RunConfig& c) {
                   json a = json::array();
                   for (const auto& [step, rate] : c.train.schedule.milestones) a.push_back({step, rate});
                   return a;
                 },
                 [](RunConfig& c, const json& j) {
                   const auto bad = [&] {
                     return ConfigError("config field 'lr_milestones': expected [[step, rate], ...], got " + j.dump());
                   };
                   if (!j.is_array()) throw bad();
                   std::vector<std::pair<std::size_t, double>> out;
                   for (const auto& e : j) {
                     if (!e.is_array() || e.size() != 2 || !e[0].is_number_unsigned() || !e[1].is_number()) throw bad();
                     out.emplace_back(e[0].get<std::size_t>(), e[1].get<double>());
                   }
                   c.train.schedule.milestones = std::move(out);
                 }});
    f.push_back(field<double>("weight_gw", DUET_ACCESS(train.weights.gw)));
    f.push_back(field<double>("weight_dance_reconstruction", DUET_ACCESS(train.weights.dance_reconstruction)));
    f.push_back(field<double>("weight_music_reconstruction", DUET_ACCESS(train.weights.music_reconstruction)));
    f.push_back(field<double>("weight_dance_cycle", DUET_ACCESS(train.weights.dance_cycle)));
    f.push_back(field<double>("weight_music_cycle", DUET_ACCESS(train.weights.music_cycle)));
    f.push_back({"reduction",
                 [](const RunConfig& c) { return json(c.train.reduction == loss::BatchReduction::mean ? "mean" : "sum"); },
                 [](RunConfig& c, const json& j) {
                   const std::string v = convert<std::string>("reduction", j);
                   if (v != "sum" && v != "mean") throw ConfigError("config field 'reduction': expected sum or mean");
                   c.train.reduction = v == "mean" ? loss::BatchReduction::mean : loss::BatchReduction::sum;
                 }});
    f.push_back(field<bool>("gw", DUET_ACCESS(train.gw)));
    f.push_back(field<bool>("cycle", DUET_ACCESS(train.cycle)));
    f.push_back(field<bool>("gw_to_dance_encoder", DUET_ACCESS(train.gw_to_dance_encoder)));
    f.push_back(field<double>("gw_epsilon", DUET_ACCESS(train.gw_config.epsilon)));
    f.push_back(field<int>("gw_sinkhorn_iters", DUET_ACCESS(train.gw_config.sinkhorn_iters)));
    f.push_back(field<int>("gw_projection_iters", DUET_ACCESS(train.gw_config.projection_iters)));
    f.push_back(path_field("data_dir", DUET_ACCESS(data_dir)));
    f.push_back(path_field("manifest", DUET_ACCESS(manifest)));
    f.push_back(path_field("skeleton", DUET_ACCESS(skeleton)));
    f.push_back(field<std::size_t>("synth_train_pairs", DUET_ACCESS(synth_train_pairs)));
    f.push_back(field<std::size_t>("synth_test_pairs", DUET_ACCESS(synth_test_pairs)));
    f.push_back(field<std::size_t>("synth_frames", DUET_ACCESS(synth_frames)));
    f.push_back(path_field("out", DUET_ACCESS(out)));
    f.push_back(field<std::size_t>("checkpoint_every", DUET_ACCESS(checkpoint_every)));
    f.push_back(field<std::size_t>("log_every", DUET_ACCESS(log_every)));
    f.push_back(field<std::size_t>("eval_window", DUET_ACCESS(eval_window)));
    f.push_back(field<std::size_t>("eval_generations", DUET_ACCESS(eval_generations)));
    f.push_back(field<std::size_t>("eval_trials", DUET_ACCESS(eval_trials)));
    f.push_back(field<std::size_t>("eval_max_sequences", DUET_ACCESS(eval_max_sequences)));
    return f;
  }();
  return table;
}

#undef DUET_ACCESS

const Field& find_field(const std::string& key) {
  for (const Field& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config field '" + key + "'");
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + " is not valid JSON: " + e.what());
  }
}

}  // namespace

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::default_value: return "default";
    case Provenance::file: return "file";
    case Provenance::env: return "env";
    case Provenance::flag: return "flag";
  }
  return "default";
}

Provenance parse_provenance(const std::string& text) {
  if (text == "default") return Provenance::default_value;
  if (text == "file") return Provenance::file;
  if (text == "env") return Provenance::env;
  if (text == "flag") return Provenance::flag;
  throw ConfigError("unknown provenance '" + text + "'");
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const Field& f : fields()) out.push_back(f.key);
    return out;
  }();
  return k;
}

RunConfig RunConfig::defaults(const std::string& preset) {
  RunConfig c;
  c.preset = preset;
  c.train = train::preset(preset);
  for (const std::string& k : keys()) c.provenance[k] = Provenance::default_value;
  if (const char* env = std::getenv("DUET_DATA_DIR"); env && *env) {
    c.data_dir = env;
    c.provenance["data_dir"] = Provenance::env;
  } else {
    c.data_dir = DUET_DEFAULT_DATA_DIR;
  }
  return c;
}

void RunConfig::set(const std::string& key, const std::string& json_value, Provenance source) {
  const Field& f = find_field(key);
  f.set(*this, parse_json(json_value, "value of '" + key + "'"));
  provenance[key] = source;
}

RunConfig RunConfig::resolve(const std::string& file_text, const std::map<std::string, std::string>& flags) {
  json file = file_text.empty() ? json::object() : parse_json(file_text, "config file");
  if (file.is_object() && file.contains("values") && file["values"].is_object()) file = file["values"];
  if (!file.is_object()) throw ConfigError("config file must hold a JSON object");

  std::string preset = "paper";
  if (file.contains("preset")) preset = convert<std::string>("preset", file["preset"]);
  if (auto it = flags.find("preset"); it != flags.end())
    preset = convert<std::string>("preset", parse_json(it->second, "value of 'preset'"));

  RunConfig c = defaults(preset);
  for (const auto& [key, value] : file.items()) c.set(key, value.dump(), Provenance::file);
  for (const auto& [key, value] : flags) c.set(key, value, Provenance::flag);
  return c;
}

std::string RunConfig::to_json() const {
  json values = json::object(), prov = json::object();
  for (const Field& f : fields()) {
    values[f.key] = f.get(*this);
    const auto it = provenance.find(f.key);
    prov[f.key] = to_string(it == provenance.end() ? Provenance::default_value : it->second);
  }
  return json{{"values", values}, {"provenance", prov}}.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  const json doc = parse_json(text, "run config");
  if (!doc.is_object() || !doc.contains("values") || !doc["values"].is_object())
    throw ConfigError("run config needs a \"values\" object");
  const json& values = doc["values"];
  RunConfig c = defaults(values.contains("preset") ? convert<std::string>("preset", values["preset"]) : "paper");
  for (const auto& [key, value] : values.items()) find_field(key).set(c, value);
  if (doc.contains("provenance")) {
    for (const auto& [key, value] : doc["provenance"].items()) {
      find_field(key);
      c.provenance[key] = parse_provenance(convert<std::string>(key, value));
    }
  }
  return c;
}

void RunConfig::validate() const {
  train.validate();
  train.gw_config.validate();
  if (eval_generations < 2) throw ConfigError("eval_generations must be at least 2");
  if (eval_trials == 0) throw ConfigError("eval_trials must be positive");
  if (manifest.empty()) {
    if (synth_train_pairs == 0) throw ConfigError("synth_train_pairs must be positive");
    if (synth_frames != 0 && synth_frames < train.length)
      throw ConfigError("synth_frames (" + std::to_string(synth_frames) + ") is shorter than the training window (" +
                        std::to_string(train.length) + ")");
  }
}

std::filesystem::path RunConfig::resolve_path(const std::filesystem::path& p) const {
  if (p.empty() || p.is_absolute() || std::filesystem::exists(p)) return p;
  return data_dir / p;
}

data::PairedDataset RunConfig::dataset() const {
  if (!manifest.empty()) return data::load_dataset(resolve_path(manifest));
  data::SynthDatasetOptions opts;
  opts.train_pairs = synth_train_pairs;
  opts.test_pairs = synth_test_pairs;
  opts.frames = synth_frames == 0 ? 4 * train.length : synth_frames;
  return data::make_synthetic_dataset(seed, opts);
}

rot::Skeleton RunConfig::load_skeleton() const {
  return skeleton.empty() ? rot::Skeleton::canonical() : rot::Skeleton::load(resolve_path(skeleton));
}

eval::EvalOptions RunConfig::eval_options() const {
  eval::EvalOptions o;
  o.window = eval_window == 0 ? train.length : eval_window;
  o.generations = eval_generations;
  o.trials = eval_trials;
  o.max_sequences = eval_max_sequences;
  return o;
}

}  // namespace duet
