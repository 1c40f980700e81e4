#include "tempest/bytestream.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

#include "tempest/errors.hpp"
#include "tempest/mp3.hpp"

namespace tempest {

namespace {

bool starts_with(ByteView bytes, std::string_view magic) {
  if (bytes.size() < magic.size()) return false;
  return std::equal(magic.begin(), magic.end(), bytes.begin(),
                    [](char c, std::uint8_t b) { return static_cast<std::uint8_t>(c) == b; });
}

constexpr std::size_t kId3HeaderSize = 10;
constexpr std::size_t kId3v1Size = 128;

// Length of the ID3v2 tag at the front of bytes, 0 when there is none.
std::size_t id3v2_length(ByteView bytes) {
  if (!starts_with(bytes, "ID3")) return 0;
  if (bytes.size() < kId3HeaderSize) throw MetadataError("ID3v2 header truncated");
  std::size_t size = 0;
  for (int i = 0; i < 4; ++i) {
    const std::uint8_t b = bytes[6 + i];
    if (b & 0x80) throw MetadataError("ID3v2 size is not syncsafe");
    size = (size << 7) | b;
  }
  const bool footer = (bytes[5] & 0x10) != 0;
  const std::size_t total = size + kId3HeaderSize + (footer ? kId3HeaderSize : 0);
  if (total > bytes.size()) throw MetadataError("ID3v2 size exceeds stream length");
  return total;
}

}  // namespace

std::string_view to_string(FormatKind kind) {
  switch (kind) {
    case FormatKind::kMp3: return "mp3";
    case FormatKind::kOpusOgg: return "opus";
    case FormatKind::kJpeg: return "jpeg";
    case FormatKind::kUnknown: break;
  }
  return "unknown";
}

FormatKind parse_format(std::string_view name) {
  if (name == "mp3") return FormatKind::kMp3;
  if (name == "opus" || name == "ogg") return FormatKind::kOpusOgg;
  if (name == "jpeg" || name == "jpg") return FormatKind::kJpeg;
  throw ConfigError("unknown format '" + std::string(name) + "'");
}

ByteStream load_stream(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  ByteStream s;
  s.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  if (s.bytes.empty()) throw EmptyStream(path.string() + " is empty");
  s.source_path = path.string();
  return s;
}

void save_bytes(const std::filesystem::path& path, ByteView bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

FormatKind detect_format(ByteView bytes) {
  // JPEG first: 0xFFD8 also has the eleven leading bits of an MPEG sync.
  if (bytes.size() >= 2 && bytes[0] == 0xFF && bytes[1] == 0xD8) return FormatKind::kJpeg;
  if (starts_with(bytes, "OggS")) {
    if (bytes.size() < 27) return FormatKind::kUnknown;
    const std::size_t segments = bytes[26];
    const std::size_t body = 27 + segments;
    if (body <= bytes.size() && starts_with(bytes.subspan(body), "OpusHead")) {
      return FormatKind::kOpusOgg;
    }
    return FormatKind::kUnknown;
  }
  if (starts_with(bytes, "ID3")) return FormatKind::kMp3;
  if (mp3::parse_header(bytes)) return FormatKind::kMp3;
  return FormatKind::kUnknown;
}

StripRange metadata_bounds(ByteView bytes, FormatKind format) {
  StripRange range{0, bytes.size()};
  if (format != FormatKind::kMp3) return range;
  // Some taggers write more than one ID3v2 block back to back.
  while (range.begin < range.end) {
    const std::size_t len = id3v2_length(bytes.subspan(range.begin, range.end - range.begin));
    if (len == 0) break;
    range.begin += len;
  }
  if (range.end - range.begin >= kId3v1Size &&
      starts_with(bytes.subspan(range.end - kId3v1Size), "TAG")) {
    range.end -= kId3v1Size;
  }
  return range;
}

ByteStream strip_metadata(const ByteStream& s) {
  const StripRange range = metadata_bounds(s.view(), s.format);
  if (range.begin == 0 && range.end == s.bytes.size()) return s;
  ByteStream out;
  out.source_path = s.source_path;
  out.format = s.format;
  out.bytes.assign(s.bytes.begin() + static_cast<std::ptrdiff_t>(range.begin),
                   s.bytes.begin() + static_cast<std::ptrdiff_t>(range.end));
  return out;
}

ByteStream open_stream(const std::filesystem::path& path, bool strip, FormatKind override_format) {
  ByteStream s = load_stream(path);
  s.format = override_format != FormatKind::kUnknown ? override_format : detect_format(s);
  if (s.format == FormatKind::kUnknown) {
    throw UnsupportedFormat(path.string() + ": unrecognized format");
  }
  return strip ? strip_metadata(s) : s;
}

}  // namespace tempest
