#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "duet/sequence.hpp"

namespace duet::data {

/// One dataset pair. Paths are relative to the manifest's directory unless absolute.
struct ManifestEntry {
  std::filesystem::path music;
  std::filesystem::path dance;
  std::string genre;
  Split split = Split::train;
};

/// JSON of the form {"pairs": [{"music", "dance", "genre", "split"}, ...]}.
/// Entries are returned with paths resolved against the manifest's directory.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);
/// Writes paths relative to the manifest's directory when possible.
void save_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);

/// Loads every pair and validates the dataset.
PairedDataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes each pair as <dir>/<index>_music.mdseq and <dir>/<index>_dance.mdseq
/// plus <dir>/manifest.json.
std::filesystem::path write_dataset(const PairedDataset& dataset, const std::filesystem::path& dir);

}  // namespace duet::data
