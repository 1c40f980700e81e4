#include "tempest/blocks.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace tempest {

std::string_view to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::kMp3Frame: return "mp3_frame";
    case BlockKind::kOpusPacket: return "opus_packet";
    case BlockKind::kJpegSegment: return "jpeg_segment";
  }
  return "?";
}

double BlockSequence::average_block_length() const {
  if (blocks.empty()) return 0.0;
  const std::size_t total = std::accumulate(blocks.begin(), blocks.end(), std::size_t{0},
                                            [](std::size_t acc, const CompressedBlock& b) { return acc + b.length; });
  return static_cast<double>(total) / static_cast<double>(blocks.size());
}

namespace {

struct Piece {
  std::size_t offset;
  const std::uint8_t* data;
  std::size_t length;
};

std::vector<Piece> collect_pieces(const BlockSequence& seq) {
  std::vector<Piece> pieces;
  for (const auto& block : seq.blocks) {
    std::size_t cursor = 0;
    for (const auto& ext : block.extents) {
      pieces.push_back({ext.offset, block.bytes.data() + cursor, ext.length});
      cursor += ext.length;
    }
  }
  for (const auto& run : seq.structural) {
    pieces.push_back({run.offset, run.bytes.data(), run.bytes.size()});
  }
  std::sort(pieces.begin(), pieces.end(), [](const Piece& a, const Piece& b) { return a.offset < b.offset; });
  return pieces;
}

}  // namespace

Bytes reassemble(const BlockSequence& seq) {
  Bytes out;
  out.reserve(seq.stream_length);
  for (const auto& p : collect_pieces(seq)) out.insert(out.end(), p.data, p.data + p.length);
  return out;
}

std::string validate_partition(const BlockSequence& seq) {
  std::vector<Extent> all;
  for (std::size_t i = 0; i < seq.blocks.size(); ++i) {
    const auto& b = seq.blocks[i];
    const std::string where = "block " + std::to_string(i);
    if (b.bytes.size() != b.length) return where + ": bytes.size() != length";
    if (b.extents.empty()) return where + ": no extents";
    if (b.extents.front().offset != b.offset) return where + ": offset != first extent";
    std::size_t sum = 0;
    for (const auto& e : b.extents) {
      if (e.end() > seq.stream_length) return where + ": extent past end of stream";
      sum += e.length;
      all.push_back(e);
    }
    if (sum != b.length) return where + ": extents do not sum to length";
    if (i > 0 && b.offset <= seq.blocks[i - 1].offset) return where + ": offsets not increasing";
    if (b.kind == BlockKind::kJpegSegment ? b.duration_s != 0.0 : !(b.duration_s > 0.0)) {
      return where + ": invalid duration";
    }
  }
  for (const auto& run : seq.structural) {
    if (run.offset + run.bytes.size() > seq.stream_length) return "structural run past end of stream";
    all.push_back({run.offset, run.bytes.size()});
  }
  std::sort(all.begin(), all.end(), [](const Extent& a, const Extent& b) { return a.offset < b.offset; });
  for (std::size_t i = 1; i < all.size(); ++i) {
    if (all[i].offset < all[i - 1].end()) return "overlapping extents at offset " + std::to_string(all[i].offset);
  }
  return {};
}

void fill_structural(BlockSequence& seq, ByteView bytes) {
  seq.structural.clear();
  std::size_t covered = 0;
  auto gap = [&](std::size_t begin, std::size_t end) {
    if (end <= begin) return;
    seq.structural.push_back({begin, Bytes(bytes.begin() + static_cast<std::ptrdiff_t>(begin),
                                           bytes.begin() + static_cast<std::ptrdiff_t>(end))});
  };
  for (const auto& block : seq.blocks) {
    for (const auto& e : block.extents) {
      gap(covered, e.offset);
      covered = e.end();
    }
  }
  gap(covered, bytes.size());
}

}  // namespace tempest
