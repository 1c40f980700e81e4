#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "tempest/blocks.hpp"

namespace tempest::mp3 {

enum class MpegVersion : std::uint8_t { kMpeg1, kMpeg2, kMpeg25 };

struct FrameHeader {
  MpegVersion version = MpegVersion::kMpeg1;
  int layer = 3;
  int bitrate_bps = 0;
  int samplerate_hz = 0;
  int padding = 0;
  int samples_per_frame = 0;
  int channel_mode = 0;

  // floor(samples_per_frame / 8 * bitrate / samplerate) + padding.
  std::size_t frame_length() const;
  double duration_s() const { return static_cast<double>(samples_per_frame) / samplerate_hz; }
};

// Decodes a 4-byte Layer III header. Returns nullopt when the sync word is
// absent or any field is free-format, reserved or not Layer III.
std::optional<FrameHeader> parse_header(ByteView bytes);

// Splits a metadata-stripped MP3 stream into frames. A candidate sync word
// is accepted only when the frame it announces fits in the stream and is
// followed by another compatible header, by the end of the stream, or it
// continues a chain of already accepted frames. A header whose frame runs
// past the end of the stream is dropped and counted in warnings.
// Throws NoFramesError when nothing is found.
BlockSequence scan_frames(ByteView bytes);
inline BlockSequence scan_frames(const ByteStream& s) { return scan_frames(s.view()); }

// Builds frame_count MPEG-1 Layer III frames with seeded pseudorandom
// payload. Throws ConfigError for values outside the MPEG-1 tables.
ByteStream synth_stream(int frame_count, int bitrate_bps, int samplerate_hz,
                        std::uint64_t payload_seed);

// Header bytes for an MPEG-1 Layer III frame (mono, no CRC).
std::array<std::uint8_t, 4> encode_header(int bitrate_bps, int samplerate_hz, int padding);

}  // namespace tempest::mp3
