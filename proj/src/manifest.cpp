#include "duet/manifest.hpp"

#include <cstdio>
#include <fstream>

#include "duet/errors.hpp"
#include "duet/mdseq.hpp"
#include "json.hpp"

namespace duet::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<ManifestEntry> load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object() || !doc.contains("pairs") || !doc["pairs"].is_array()) {
    throw ConfigError("manifest " + path.string() + " needs a \"pairs\" array");
  }
  const fs::path base = path.parent_path();
  std::vector<ManifestEntry> out;
  std::size_t index = 0;
  for (const auto& item : doc["pairs"]) {
    const std::string where = "manifest pair " + std::to_string(index++);
    for (const char* key : {"music", "dance", "genre", "split"}) {
      if (!item.contains(key) || !item[key].is_string()) {
        throw ConfigError(where + ": missing string field \"" + key + "\"");
      }
    }
    ManifestEntry e;
    e.music = base / item["music"].get<std::string>();
    e.dance = base / item["dance"].get<std::string>();
    e.genre = item["genre"].get<std::string>();
    try {
      e.split = parse_split(item["split"].get<std::string>());
    } catch (const ConfigError& err) {
      throw ConfigError(where + ": " + err.what());
    }
    out.push_back(std::move(e));
  }
  if (out.empty()) throw ConfigError("manifest " + path.string() + " lists no pairs");
  return out;
}

void save_manifest(const std::vector<ManifestEntry>& entries, const fs::path& path) {
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  json pairs = json::array();
  for (const auto& e : entries) {
    auto rel = [&](const fs::path& p) {
      return fs::absolute(p).lexically_normal().lexically_relative(fs::absolute(base).lexically_normal());
    };
    pairs.push_back({{"music", rel(e.music).generic_string()},
                     {"dance", rel(e.dance).generic_string()},
                     {"genre", e.genre},
                     {"split", to_string(e.split)}});
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write manifest " + path.string());
  out << json{{"pairs", pairs}}.dump(2) << "\n";
}

PairedDataset load_dataset(const fs::path& manifest_path) {
  PairedDataset ds;
  for (const auto& e : load_manifest(manifest_path)) {
    PairedSample s;
    s.music = load_music(e.music);
    s.dance = load_dance(e.dance);
    s.genre = e.genre;
    s.split = e.split;
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

fs::path write_dataset(const PairedDataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    char stem[32];
    std::snprintf(stem, sizeof stem, "%04zu", i);
    ManifestEntry e{dir / (std::string(stem) + "_music.mdseq"), dir / (std::string(stem) + "_dance.mdseq"), s.genre,
                    s.split};
    save_sequence(s.music, e.music);
    save_sequence(s.dance, e.dance);
    entries.push_back(std::move(e));
  }
  const fs::path manifest = dir / "manifest.json";
  save_manifest(entries, manifest);
  return manifest;
}

}  // namespace duet::data
