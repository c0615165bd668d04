#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>

#include "duet/errors.hpp"
#include "duet/sequence.hpp"

namespace duet::data {

// .mdseq layout, all fields little-endian:
//   offset  0  char[4]  magic "MDSQ"
//   offset  4  uint16   format version (1)
//   offset  6  uint16   modality (1 music, 2 dance, 3 matrix)
//   offset  8  uint32   T (rows)
//   offset 12  uint32   channels (columns)
//   offset 16  float64  fps (0 for matrices)
//   offset 24  float64[T * channels], row-major
inline constexpr std::uint16_t kMdseqVersion = 1;
inline constexpr std::size_t kMdseqHeaderBytes = 24;

enum class Modality : std::uint16_t { music = 1, dance = 2, matrix = 3 };

enum class FormatErrorCode {
  io = 1,
  bad_magic,
  bad_version,
  modality_mismatch,
  channel_mismatch,
  truncated,
  trailing_bytes,
};

std::string to_string(FormatErrorCode code);
std::string to_string(Modality modality);
Modality parse_modality(const std::string& text);

class FormatError : public Error {
 public:
  FormatError(FormatErrorCode code, const std::string& message);
  [[nodiscard]] FormatErrorCode code() const { return code_; }
  /// The message without the "[code] " prefix.
  [[nodiscard]] const std::string& detail() const { return detail_; }

 private:
  FormatErrorCode code_;
  std::string detail_;
};

struct MdseqHeader {
  Modality modality = Modality::matrix;
  std::uint32_t rows = 0;
  std::uint32_t channels = 0;
  double fps = 0.0;
};

using Sequence = std::variant<MusicSequence, DanceSequence>;

void save_sequence(const MusicSequence& seq, const std::filesystem::path& path);
void save_sequence(const DanceSequence& seq, const std::filesystem::path& path);
MusicSequence load_music(const std::filesystem::path& path);
DanceSequence load_dance(const std::filesystem::path& path);
Sequence load_sequence(const std::filesystem::path& path, Modality modality);

/// Plain float64 matrices (embedding batches, plans) in the same container.
void save_matrix(const FrameMatrix& matrix, const std::filesystem::path& path);
FrameMatrix load_matrix(const std::filesystem::path& path);

/// Header only; validates magic and version.
MdseqHeader read_header(const std::filesystem::path& path);

/// Serialized bytes, for hashing and in-memory tests.
std::string encode(Modality modality, const FrameMatrix& frames, double fps);
/// Decodes bytes, checking the modality and channel count.
FrameMatrix decode(const std::string& bytes, Modality expected, double* fps = nullptr);

/// 64-bit FNV-1a over a byte string.
std::uint64_t checksum(const std::string& bytes);

}  // namespace duet::data
