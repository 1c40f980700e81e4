#include "tempest/ogg_opus.hpp"

#include <algorithm>
#include <boost/crc.hpp>
#include <string_view>

#include "tempest/errors.hpp"

namespace tempest::opus {

namespace {

constexpr std::size_t kPageHeaderSize = 27;
constexpr std::uint8_t kContinued = 0x01;

std::uint32_t read_le32(ByteView b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

void write_le(Bytes& out, std::uint64_t value, int width) {
  for (int i = 0; i < width; ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

bool has_prefix(ByteView b, std::string_view magic) {
  return b.size() >= magic.size() &&
         std::equal(magic.begin(), magic.end(), b.begin(),
                    [](char c, std::uint8_t x) { return static_cast<std::uint8_t>(c) == x; });
}

// A packet being assembled from one or more page segments.
struct PartialPacket {
  Bytes bytes;
  std::vector<Extent> extents;
  bool active = false;

  void append(ByteView stream, std::size_t offset, std::size_t length) {
    if (length == 0) return;
    if (!extents.empty() && extents.back().end() == offset) {
      extents.back().length += length;
    } else {
      extents.push_back({offset, length});
    }
    bytes.insert(bytes.end(), stream.begin() + static_cast<std::ptrdiff_t>(offset),
                 stream.begin() + static_cast<std::ptrdiff_t>(offset + length));
  }
  void clear() {
    bytes.clear();
    extents.clear();
    active = false;
  }
};

class Demuxer {
 public:
  explicit Demuxer(ByteView bytes) : bytes_(bytes) {
    seq_.source_format = FormatKind::kOpusOgg;
    seq_.stream_length = bytes.size();
  }

  BlockSequence run() {
    std::size_t pos = 0;
    while (pos < bytes_.size()) pos = read_page(pos);
    if (packet_.active) drop(packet_);
    std::sort(seq_.structural.begin(), seq_.structural.end(),
              [](const StructuralRun& a, const StructuralRun& b) { return a.offset < b.offset; });
    return std::move(seq_);
  }

 private:
  std::size_t read_page(std::size_t pos) {
    const std::size_t n = bytes_.size();
    if (n - pos < kPageHeaderSize) throw OggParseError("truncated Ogg page header");
    const ByteView page = bytes_.subspan(pos);
    if (!has_prefix(page, "OggS")) throw OggParseError("bad Ogg capture pattern at offset " + std::to_string(pos));
    if (page[4] != 0) throw OggParseError("unsupported Ogg stream structure version");
    const std::size_t segments = page[26];
    const std::size_t header_len = kPageHeaderSize + segments;
    if (header_len > page.size()) throw OggParseError("truncated Ogg segment table");
    std::size_t body_len = 0;
    for (std::size_t i = 0; i < segments; ++i) body_len += page[kPageHeaderSize + i];
    if (header_len + body_len > page.size()) throw OggParseError("truncated Ogg page body");

    Bytes copy(page.begin(), page.begin() + static_cast<std::ptrdiff_t>(header_len + body_len));
    for (std::size_t i = 22; i < 26; ++i) copy[i] = 0;
    if (page_crc(copy) != read_le32(page, 22)) {
      throw OggParseError("Ogg page checksum mismatch at offset " + std::to_string(pos));
    }

    const std::uint8_t header_type = page[5];
    const std::uint32_t serial = read_le32(page, 14);
    const std::uint32_t sequence = read_le32(page, 18);
    const std::size_t body = pos + header_len;
    structural(pos, header_len);

    if (!serial_ && has_prefix(bytes_.subspan(body, body_len), "OpusHead")) serial_ = serial;
    if (!serial_ || *serial_ != serial) {
      structural(body, body_len);
      return body + body_len;
    }

    if (last_sequence_ && sequence != *last_sequence_ + 1 && packet_.active) drop(packet_);
    last_sequence_ = sequence;

    const bool continued = (header_type & kContinued) != 0;
    if (!continued && packet_.active) drop(packet_);
    // Continuation data whose start was lost is discarded up to the first
    // packet boundary on this page.
    bool orphan = continued && !packet_.active;

    std::size_t cursor = body;
    for (std::size_t i = 0; i < segments; ++i) {
      const std::size_t lace = page[kPageHeaderSize + i];
      if (orphan) {
        structural(cursor, lace);
        if (lace < 255) {
          orphan = false;
          ++seq_.warnings;
        }
      } else {
        packet_.active = true;
        packet_.append(bytes_, cursor, lace);
        if (lace < 255) finish_packet();
      }
      cursor += lace;
    }
    if (orphan) ++seq_.warnings;
    return cursor;
  }

  void finish_packet() {
    const std::size_t index = packets_seen_++;
    if (index < 2 || packet_.bytes.empty()) {
      // OpusHead, OpusTags.
      for (const auto& e : packet_.extents) structural(e.offset, e.length);
      packet_.clear();
      return;
    }
    const auto duration = packet_duration_s(packet_.bytes);
    if (!duration) {
      drop(packet_);
      return;
    }
    CompressedBlock block;
    block.offset = packet_.extents.front().offset;
    block.length = packet_.bytes.size();
    block.bytes = std::move(packet_.bytes);
    block.duration_s = *duration;
    block.kind = BlockKind::kOpusPacket;
    block.extents = std::move(packet_.extents);
    seq_.total_duration_s += block.duration_s;
    seq_.blocks.push_back(std::move(block));
    packet_.clear();
  }

  void drop(PartialPacket& p) {
    for (const auto& e : p.extents) structural(e.offset, e.length);
    ++seq_.warnings;
    p.clear();
  }

  void structural(std::size_t offset, std::size_t length) {
    if (length == 0) return;
    auto& runs = seq_.structural;
    const auto first = bytes_.begin() + static_cast<std::ptrdiff_t>(offset);
    if (!runs.empty() && runs.back().offset + runs.back().bytes.size() == offset) {
      runs.back().bytes.insert(runs.back().bytes.end(), first, first + static_cast<std::ptrdiff_t>(length));
    } else {
      runs.push_back({offset, Bytes(first, first + static_cast<std::ptrdiff_t>(length))});
    }
  }

  ByteView bytes_;
  BlockSequence seq_;
  PartialPacket packet_;
  std::optional<std::uint32_t> serial_;
  std::optional<std::uint32_t> last_sequence_;
  std::size_t packets_seen_ = 0;
};

}  // namespace

std::uint32_t page_crc(ByteView page_with_zeroed_crc) {
  boost::crc_optimal<32, 0x04C11DB7, 0, 0, false, false> crc;
  crc.process_bytes(page_with_zeroed_crc.data(), page_with_zeroed_crc.size());
  return crc.checksum();
}

double frame_duration_s(std::uint8_t toc) {
  const int config = toc >> 3;
  if (config < 12) {
    constexpr double kSilk[] = {0.010, 0.020, 0.040, 0.060};
    return kSilk[config % 4];
  }
  if (config < 16) {
    constexpr double kHybrid[] = {0.010, 0.020};
    return kHybrid[config % 2];
  }
  constexpr double kCelt[] = {0.0025, 0.005, 0.010, 0.020};
  return kCelt[config % 4];
}

std::optional<double> packet_duration_s(ByteView packet) {
  if (packet.empty()) return std::nullopt;
  const std::uint8_t toc = packet[0];
  int frames = 1;
  switch (toc & 0x03) {
    case 0: frames = 1; break;
    case 1:
    case 2: frames = 2; break;
    default:
      if (packet.size() < 2) return std::nullopt;
      frames = packet[1] & 0x3F;
      if (frames == 0) return std::nullopt;
  }
  const double total = frames * frame_duration_s(toc);
  // A packet may carry at most 120 ms of audio.
  if (total > 0.120 + 1e-9) return std::nullopt;
  return total;
}

BlockSequence extract_packets(ByteView bytes) { return Demuxer(bytes).run(); }

Bytes build_page(const PageSpec& spec) {
  Bytes out = {'O', 'g', 'g', 'S', 0, spec.header_type};
  write_le(out, spec.granule, 8);
  write_le(out, spec.serial, 4);
  write_le(out, spec.sequence, 4);
  write_le(out, 0, 4);
  out.push_back(static_cast<std::uint8_t>(spec.lacing.size()));
  out.insert(out.end(), spec.lacing.begin(), spec.lacing.end());
  out.insert(out.end(), spec.body.begin(), spec.body.end());
  const std::uint32_t crc = page_crc(out);
  for (int i = 0; i < 4; ++i) out[22 + i] = static_cast<std::uint8_t>(crc >> (8 * i));
  return out;
}

std::vector<std::uint8_t> lacing_for(std::size_t packet_size) {
  std::vector<std::uint8_t> lacing(packet_size / 255, 255);
  lacing.push_back(static_cast<std::uint8_t>(packet_size % 255));
  return lacing;
}

}  // namespace tempest::opus
