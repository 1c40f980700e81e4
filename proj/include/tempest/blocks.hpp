#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tempest/bytestream.hpp"

namespace tempest {

enum class BlockKind : std::uint8_t { kMp3Frame, kOpusPacket, kJpegSegment };

std::string_view to_string(BlockKind kind);

// A contiguous byte range of the parsed stream.
struct Extent {
  std::size_t offset = 0;
  std::size_t length = 0;

  std::size_t end() const { return offset + length; }
  bool operator==(const Extent&) const = default;
};

// One self-contained coded unit. Most blocks occupy a single extent of the
// stream; an Ogg packet that crosses a page boundary occupies several.
struct CompressedBlock {
  std::size_t offset = 0;
  std::size_t length = 0;
  Bytes bytes;
  double duration_s = 0.0;
  BlockKind kind = BlockKind::kMp3Frame;
  std::vector<Extent> extents;
};

// Bytes of the parsed stream that belong to no block: Ogg page headers,
// codec header packets, JPEG markers and headers, junk between frames.
struct StructuralRun {
  std::size_t offset = 0;
  Bytes bytes;
};

struct BlockSequence {
  std::vector<CompressedBlock> blocks;
  double total_duration_s = 0.0;
  FormatKind source_format = FormatKind::kUnknown;
  std::size_t stream_length = 0;
  std::vector<StructuralRun> structural;
  // Blocks dropped for truncation or malformed content.
  std::size_t warnings = 0;

  bool empty() const { return blocks.empty(); }
  std::size_t size() const { return blocks.size(); }
  double average_block_length() const;
};

// Rebuilds the parsed stream from block payloads and structural runs,
// ordered by stream offset.
Bytes reassemble(const BlockSequence& seq);

// Checks the partition invariants: each block's extents lie inside the
// stream, sum to its length and match its bytes' size; blocks have strictly
// increasing offsets; no extent or structural run overlaps another.
// Returns an empty string when valid, else a description of the first
// violation.
std::string validate_partition(const BlockSequence& seq);

// Replaces seq.structural with the complement of the block extents within
// bytes. Used by parsers whose blocks are single contiguous extents.
void fill_structural(BlockSequence& seq, ByteView bytes);

}  // namespace tempest
