#include "tempest/mp3.hpp"

#include <random>
#include <string>

#include "tempest/errors.hpp"

namespace tempest::mp3 {

namespace {

// Layer III bitrate tables in kbps, index 1..14 (0 = free format, 15 = bad).
constexpr std::array<int, 16> kBitrateV1 = {0, 32, 40, 48, 56, 64, 80, 96, 112, 128, 160, 192, 224, 256, 320, 0};
constexpr std::array<int, 16> kBitrateV2 = {0, 8, 16, 24, 32, 40, 48, 56, 64, 80, 96, 112, 128, 144, 160, 0};

constexpr std::array<int, 3> kRateV1 = {44100, 48000, 32000};
constexpr std::array<int, 3> kRateV2 = {22050, 24000, 16000};
constexpr std::array<int, 3> kRateV25 = {11025, 12000, 8000};

bool compatible(const FrameHeader& a, const FrameHeader& b) {
  return a.version == b.version && a.layer == b.layer && a.samplerate_hz == b.samplerate_hz;
}

bool header_follows(ByteView bytes, std::size_t pos, const FrameHeader& current) {
  if (pos + 4 > bytes.size()) return false;
  const auto next = parse_header(bytes.subspan(pos));
  return next && compatible(*next, current);
}

}  // namespace

std::size_t FrameHeader::frame_length() const {
  const auto slot_bytes = static_cast<std::size_t>(samples_per_frame / 8);
  return slot_bytes * static_cast<std::size_t>(bitrate_bps) / static_cast<std::size_t>(samplerate_hz) +
         static_cast<std::size_t>(padding);
}

std::optional<FrameHeader> parse_header(ByteView bytes) {
  if (bytes.size() < 4) return std::nullopt;
  if (bytes[0] != 0xFF || (bytes[1] & 0xE0) != 0xE0) return std::nullopt;

  FrameHeader h;
  switch ((bytes[1] >> 3) & 0x03) {
    case 0: h.version = MpegVersion::kMpeg25; break;
    case 2: h.version = MpegVersion::kMpeg2; break;
    case 3: h.version = MpegVersion::kMpeg1; break;
    default: return std::nullopt;
  }
  if (((bytes[1] >> 1) & 0x03) != 1) return std::nullopt;  // Layer III only
  h.layer = 3;

  const int bitrate_index = bytes[2] >> 4;
  const int rate_index = (bytes[2] >> 2) & 0x03;
  if (rate_index == 3) return std::nullopt;
  if ((bytes[3] & 0x03) == 2) return std::nullopt;  // reserved emphasis

  const bool v1 = h.version == MpegVersion::kMpeg1;
  const int kbps = (v1 ? kBitrateV1 : kBitrateV2)[bitrate_index];
  if (kbps == 0) return std::nullopt;
  h.bitrate_bps = kbps * 1000;
  switch (h.version) {
    case MpegVersion::kMpeg1: h.samplerate_hz = kRateV1[rate_index]; break;
    case MpegVersion::kMpeg2: h.samplerate_hz = kRateV2[rate_index]; break;
    case MpegVersion::kMpeg25: h.samplerate_hz = kRateV25[rate_index]; break;
  }
  h.padding = (bytes[2] >> 1) & 0x01;
  h.samples_per_frame = v1 ? 1152 : 576;
  h.channel_mode = bytes[3] >> 6;
  return h;
}

BlockSequence scan_frames(ByteView bytes) {
  BlockSequence seq;
  seq.source_format = FormatKind::kMp3;
  seq.stream_length = bytes.size();

  const std::size_t n = bytes.size();
  std::size_t pos = 0;
  std::size_t chain_end = std::string::npos;
  while (pos + 4 <= n) {
    if (bytes[pos] != 0xFF || (bytes[pos + 1] & 0xE0) != 0xE0) {
      ++pos;
      continue;
    }
    const auto header = parse_header(bytes.subspan(pos));
    if (!header) {
      ++pos;
      continue;
    }
    const std::size_t len = header->frame_length();
    const std::size_t end = pos + len;
    const bool chained = pos == chain_end;
    if (end > n) {
      if (chained) {
        ++seq.warnings;
        break;
      }
      ++pos;
      continue;
    }
    if (!(end == n || chained || header_follows(bytes, end, *header))) {
      ++pos;
      continue;
    }

    CompressedBlock block;
    block.offset = pos;
    block.length = len;
    block.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                       bytes.begin() + static_cast<std::ptrdiff_t>(end));
    block.duration_s = header->duration_s();
    block.kind = BlockKind::kMp3Frame;
    block.extents = {{pos, len}};
    seq.total_duration_s += block.duration_s;
    seq.blocks.push_back(std::move(block));
    chain_end = end;
    pos = end;
  }
  fill_structural(seq, bytes);

  if (seq.blocks.empty()) throw NoFramesError("no MPEG Layer III frames found");
  return seq;
}

std::array<std::uint8_t, 4> encode_header(int bitrate_bps, int samplerate_hz, int padding) {
  int bitrate_index = -1;
  for (int i = 1; i < 15; ++i) {
    if (kBitrateV1[i] * 1000 == bitrate_bps) bitrate_index = i;
  }
  int rate_index = -1;
  for (int i = 0; i < 3; ++i) {
    if (kRateV1[i] == samplerate_hz) rate_index = i;
  }
  if (bitrate_index < 0) throw ConfigError("bitrate " + std::to_string(bitrate_bps) + " is not an MPEG-1 Layer III rate");
  if (rate_index < 0) throw ConfigError("sample rate " + std::to_string(samplerate_hz) + " is not an MPEG-1 rate");
  if (padding != 0 && padding != 1) throw ConfigError("padding must be 0 or 1");
  // 0xFFFB: sync, MPEG-1, Layer III, no CRC. Channel mode 3 (mono).
  return {0xFF, 0xFB,
          static_cast<std::uint8_t>((bitrate_index << 4) | (rate_index << 2) | (padding << 1)),
          0xC0};
}

ByteStream synth_stream(int frame_count, int bitrate_bps, int samplerate_hz, std::uint64_t payload_seed) {
  if (frame_count < 1) throw ConfigError("frame_count must be >= 1");
  const auto header_bytes = encode_header(bitrate_bps, samplerate_hz, 0);
  const auto header = parse_header(header_bytes);
  const std::size_t len = header->frame_length();

  std::mt19937_64 rng(payload_seed);
  std::uniform_int_distribution<int> byte_dist(0, 255);
  ByteStream s;
  s.format = FormatKind::kMp3;
  s.source_path = "<synth>";
  s.bytes.reserve(len * static_cast<std::size_t>(frame_count));
  for (int f = 0; f < frame_count; ++f) {
    s.bytes.insert(s.bytes.end(), header_bytes.begin(), header_bytes.end());
    for (std::size_t i = 4; i < len; ++i) s.bytes.push_back(static_cast<std::uint8_t>(byte_dist(rng)));
  }
  return s;
}

}  // namespace tempest::mp3
