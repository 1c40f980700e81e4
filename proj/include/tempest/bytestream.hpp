#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tempest {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

enum class FormatKind : std::uint8_t { kUnknown, kMp3, kOpusOgg, kJpeg };

std::string_view to_string(FormatKind kind);
// Accepts "mp3", "opus", "ogg", "jpeg", "jpg" (case sensitive). Throws ConfigError.
FormatKind parse_format(std::string_view name);

// Raw bytes of one compressed media file.
struct ByteStream {
  Bytes bytes;
  std::string source_path;
  FormatKind format = FormatKind::kUnknown;

  ByteView view() const { return bytes; }
  std::size_t size() const { return bytes.size(); }
};

// Reads the whole file. format is left kUnknown.
// Throws IoError when the file cannot be read and EmptyStream for 0 bytes.
ByteStream load_stream(const std::filesystem::path& path);

// Writes bytes verbatim. Throws IoError.
void save_bytes(const std::filesystem::path& path, ByteView bytes);

// Magic-number sniffing. Pure; kUnknown is a value, not an error.
FormatKind detect_format(ByteView bytes);
inline FormatKind detect_format(const ByteStream& s) { return detect_format(s.view()); }

// Removes container metadata ahead of block extraction.
//   MP3: leading ID3v2 tag(s) (syncsafe size + 10, +10 with footer) and a
//        trailing 128-byte ID3v1 "TAG" record.
//   JPEG, Ogg/Opus: unchanged.
// The result is always a contiguous subrange of the input.
// Throws MetadataError on a malformed ID3v2 size.
ByteStream strip_metadata(const ByteStream& s);

// Location of the subrange kept by strip_metadata, for callers that need
// to map block offsets back to the original file.
struct StripRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};
StripRange metadata_bounds(ByteView bytes, FormatKind format);

// Loads, detects and (optionally) strips in one call. Throws
// UnsupportedFormat when detection fails and no override is given.
ByteStream open_stream(const std::filesystem::path& path, bool strip = true,
                       FormatKind override_format = FormatKind::kUnknown);

}  // namespace tempest
