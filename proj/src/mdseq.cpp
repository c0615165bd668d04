#include "duet/mdseq.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "duet/rng.hpp"

namespace duet::data {
namespace {

constexpr char kMagic[4] = {'M', 'D', 'S', 'Q'};

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(char((value >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const std::string& in, std::size_t offset) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= U(std::uint8_t(in[offset + i])) << (8 * i);
  return value;
}

bool channels_allowed(Modality modality, std::uint32_t channels) {
  switch (modality) {
    case Modality::music:
      return channels == kMusicChannels || channels == kMusicOutputChannels;
    case Modality::dance:
      return channels == kDanceChannels;
    case Modality::matrix:
      return channels >= 1;
  }
  return false;
}

std::string expected_channels(Modality modality) {
  switch (modality) {
    case Modality::music:
      return "53 or 13";
    case Modality::dance:
      return "147";
    case Modality::matrix:
      return "at least 1";
  }
  return "?";
}

MdseqHeader parse_header(const std::string& bytes) {
  if (bytes.size() < kMdseqHeaderBytes) {
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) != 0) {
      throw FormatError(FormatErrorCode::bad_magic, "not an .mdseq file (bad magic)");
    }
    throw FormatError(FormatErrorCode::truncated, "file shorter than the 24-byte header");
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(FormatErrorCode::bad_magic, "not an .mdseq file (bad magic)");
  }
  const auto version = get_le<std::uint16_t>(bytes, 4);
  if (version != kMdseqVersion) {
    throw FormatError(FormatErrorCode::bad_version, "unsupported .mdseq version " + std::to_string(version));
  }
  const auto modality = get_le<std::uint16_t>(bytes, 6);
  if (modality < 1 || modality > 3) {
    throw FormatError(FormatErrorCode::modality_mismatch, "unknown modality code " + std::to_string(modality));
  }
  MdseqHeader h;
  h.modality = Modality(modality);
  h.rows = get_le<std::uint32_t>(bytes, 8);
  h.channels = get_le<std::uint32_t>(bytes, 12);
  h.fps = std::bit_cast<double>(get_le<std::uint64_t>(bytes, 16));
  return h;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorCode::io, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw FormatError(FormatErrorCode::io, "read failed for " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorCode::io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw FormatError(FormatErrorCode::io, "write failed for " + path.string());
}

template <typename Fn>
auto with_path(const std::filesystem::path& path, Fn&& fn) {
  try {
    return fn();
  } catch (const FormatError& e) {
    if (e.code() == FormatErrorCode::io) throw;
    throw FormatError(e.code(), path.string() + ": " + e.detail());
  }
}

}  // namespace

FormatError::FormatError(FormatErrorCode code, const std::string& message)
    : Error("[" + to_string(code) + "] " + message), code_(code), detail_(message) {}

std::string to_string(FormatErrorCode code) {
  switch (code) {
    case FormatErrorCode::io:
      return "io";
    case FormatErrorCode::bad_magic:
      return "bad-magic";
    case FormatErrorCode::bad_version:
      return "bad-version";
    case FormatErrorCode::modality_mismatch:
      return "modality-mismatch";
    case FormatErrorCode::channel_mismatch:
      return "channel-mismatch";
    case FormatErrorCode::truncated:
      return "truncated";
    case FormatErrorCode::trailing_bytes:
      return "trailing-bytes";
  }
  return "unknown";
}

std::string to_string(Modality modality) {
  switch (modality) {
    case Modality::music:
      return "music";
    case Modality::dance:
      return "dance";
    case Modality::matrix:
      return "matrix";
  }
  return "unknown";
}

Modality parse_modality(const std::string& text) {
  if (text == "music") return Modality::music;
  if (text == "dance") return Modality::dance;
  if (text == "matrix") return Modality::matrix;
  throw ConfigError("unknown modality '" + text + "'");
}

std::string encode(Modality modality, const FrameMatrix& frames, double fps) {
  const auto rows = std::uint32_t(frames.rows());
  const auto cols = std::uint32_t(frames.cols());
  if (!channels_allowed(modality, cols)) {
    throw FormatError(FormatErrorCode::channel_mismatch, to_string(modality) + " expects " +
                                                             expected_channels(modality) + " channels, got " +
                                                             std::to_string(cols));
  }
  std::string out;
  out.reserve(kMdseqHeaderBytes + std::size_t(rows) * cols * 8);
  out.append(kMagic, 4);
  put_le<std::uint16_t>(out, kMdseqVersion);
  put_le<std::uint16_t>(out, std::uint16_t(modality));
  put_le<std::uint32_t>(out, rows);
  put_le<std::uint32_t>(out, cols);
  put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(fps));
  for (Eigen::Index r = 0; r < frames.rows(); ++r) {
    for (Eigen::Index c = 0; c < frames.cols(); ++c) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(frames(r, c)));
  }
  return out;
}

FrameMatrix decode(const std::string& bytes, Modality expected, double* fps) {
  const MdseqHeader h = parse_header(bytes);
  if (!channels_allowed(expected, h.channels)) {
    throw FormatError(FormatErrorCode::channel_mismatch, to_string(expected) + " expects " +
                                                             expected_channels(expected) + " channels, file has " +
                                                             std::to_string(h.channels));
  }
  if (h.modality != expected) {
    throw FormatError(FormatErrorCode::modality_mismatch,
                      "expected " + to_string(expected) + " data, file holds " + to_string(h.modality));
  }
  const std::size_t payload = std::size_t(h.rows) * h.channels * 8;
  const std::size_t available = bytes.size() - kMdseqHeaderBytes;
  if (available < payload) {
    throw FormatError(FormatErrorCode::truncated, "payload has " + std::to_string(available) + " bytes, header promises " +
                                                      std::to_string(payload));
  }
  if (available > payload) {
    throw FormatError(FormatErrorCode::trailing_bytes,
                      std::to_string(available - payload) + " unexpected bytes after the payload");
  }
  FrameMatrix out(Eigen::Index(h.rows), Eigen::Index(h.channels));
  std::size_t offset = kMdseqHeaderBytes;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.cols(); ++c, offset += 8) {
      out(r, c) = std::bit_cast<double>(get_le<std::uint64_t>(bytes, offset));
    }
  }
  if (fps) *fps = h.fps;
  return out;
}

void save_sequence(const MusicSequence& seq, const std::filesystem::path& path) {
  write_file(path, encode(Modality::music, seq.frames(), seq.fps()));
}

void save_sequence(const DanceSequence& seq, const std::filesystem::path& path) {
  write_file(path, encode(Modality::dance, seq.frames(), seq.fps()));
}

MusicSequence load_music(const std::filesystem::path& path) {
  return with_path(path, [&] {
    double fps = 0;
    FrameMatrix frames = decode(read_file(path), Modality::music, &fps);
    return MusicSequence(std::move(frames), fps);
  });
}

DanceSequence load_dance(const std::filesystem::path& path) {
  return with_path(path, [&] {
    double fps = 0;
    FrameMatrix frames = decode(read_file(path), Modality::dance, &fps);
    return DanceSequence(std::move(frames), fps);
  });
}

Sequence load_sequence(const std::filesystem::path& path, Modality modality) {
  switch (modality) {
    case Modality::music:
      return load_music(path);
    case Modality::dance:
      return load_dance(path);
    case Modality::matrix:
      break;
  }
  throw ConfigError("load_sequence needs the music or dance modality");
}

void save_matrix(const FrameMatrix& matrix, const std::filesystem::path& path) {
  write_file(path, encode(Modality::matrix, matrix, 0.0));
}

FrameMatrix load_matrix(const std::filesystem::path& path) {
  return with_path(path, [&] { return decode(read_file(path), Modality::matrix); });
}

MdseqHeader read_header(const std::filesystem::path& path) {
  return with_path(path, [&] { return parse_header(read_file(path)); });
}

std::uint64_t checksum(const std::string& bytes) { return fnv1a64(bytes); }

}  // namespace duet::data
