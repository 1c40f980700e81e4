#pragma once

#include <cstdint>
#include <filesystem>

#include "tempest/bytestream.hpp"

namespace tempest::synth {

// Structurally valid streams with seeded content. They parse with the
// block parsers but do not decode to meaningful media.

// MPEG-1 Layer III frames whose payload bytes come from [low, high].
ByteStream mp3_pattern_stream(int frame_count, int bitrate_bps, int samplerate_hz, std::uint8_t low,
                              std::uint8_t high, std::uint64_t seed);

// Ogg/Opus stream: OpusHead, OpusTags, then packet_count 20 ms CELT
// packets of 20..300 bytes, four packets per page.
ByteStream opus_stream(int packet_count, std::uint64_t seed);

// Baseline JPEG skeleton with restart_count restart markers and stuffed
// 0xFF bytes in the entropy-coded data.
ByteStream jpeg_stream(int restart_count, std::uint64_t seed);

// Two-class MP3 dataset in dir: count files (class 0 payload bytes 0..127,
// class 1 bytes 128..255) and manifest.jsonl with five folds and a
// train/eval split. Returns the manifest path.
std::filesystem::path write_mp3_dataset(const std::filesystem::path& dir, int count, int frames_per_file,
                                        std::uint64_t seed);

}  // namespace tempest::synth
