#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tempest/blocks.hpp"

namespace tempest::opus {

// Ogg framing CRC (polynomial 0x04C11DB7, no reflection, zero init) over
// a page whose checksum field has been zeroed.
std::uint32_t page_crc(ByteView page_with_zeroed_crc);

// Total duration of an Opus packet from its TOC byte (and the frame-count
// byte for code 3 packets). Returns nullopt for a malformed packet.
std::optional<double> packet_duration_s(ByteView packet);

// Frame duration encoded by the TOC configuration number (toc >> 3).
double frame_duration_s(std::uint8_t toc);

// Demuxes an Ogg/Opus file. Codec header packets (OpusHead, OpusTags) and
// pages of other logical streams become structural bytes; each remaining
// packet is one block. Packets left incomplete by a missing page are
// dropped and counted in warnings.
// Throws OggParseError on bad capture pattern, version or truncated page,
// and on checksum mismatch.
BlockSequence extract_packets(ByteView bytes);
inline BlockSequence extract_packets(const ByteStream& s) { return extract_packets(s.view()); }

// Test and fixture helper: serializes one Ogg page with a valid checksum.
struct PageSpec {
  std::uint8_t header_type = 0;
  std::uint64_t granule = 0;
  std::uint32_t serial = 1;
  std::uint32_t sequence = 0;
  std::vector<std::uint8_t> lacing;
  Bytes body;
};
Bytes build_page(const PageSpec& spec);

// Lacing values for one packet of the given size (final value < 255).
std::vector<std::uint8_t> lacing_for(std::size_t packet_size);

}  // namespace tempest::opus
