#include "tempest/jpeg.hpp"

#include <string>

#include "tempest/errors.hpp"

namespace tempest::jpeg {

namespace {

constexpr std::uint8_t kSoi = 0xD8;
constexpr std::uint8_t kEoi = 0xD9;
constexpr std::uint8_t kSos = 0xDA;

bool is_restart(std::uint8_t m) { return m >= 0xD0 && m <= 0xD7; }

// Markers that may legitimately follow the entropy-coded data of a scan.
bool may_end_scan(std::uint8_t m) {
  switch (m) {
    case kEoi:
    case kSos:
    case 0xC4:  // DHT
    case 0xCC:  // DAC
    case 0xDB:  // DQT
    case 0xDC:  // DNL
    case 0xDD:  // DRI
    case 0xFE:  // COM
      return true;
    default:
      return m >= 0xE0 && m <= 0xEF;  // APPn
  }
}

class SegmentScanner {
 public:
  SegmentScanner(ByteView bytes, const ScanOptions& options) : bytes_(bytes), options_(options) {
    seq_.source_format = FormatKind::kJpeg;
    seq_.stream_length = bytes.size();
  }

  BlockSequence run() {
    const std::size_t n = bytes_.size();
    if (n < 2 || bytes_[0] != 0xFF || bytes_[1] != kSoi) throw JpegParseError("missing SOI marker");
    bool saw_scan = false;
    std::size_t pos = 2;
    while (pos < n) {
      if (bytes_[pos] != 0xFF) throw JpegParseError("expected marker at offset " + std::to_string(pos));
      while (pos < n && bytes_[pos] == 0xFF) ++pos;
      if (pos >= n) break;
      const std::uint8_t marker = bytes_[pos++];
      if (marker == kEoi) break;
      if (marker == kSoi) throw JpegParseError("unexpected SOI inside image");
      if (is_restart(marker) || marker == 0x01) continue;  // standalone markers
      if (pos + 2 > n) throw JpegParseError("truncated marker segment");
      const std::size_t length = (static_cast<std::size_t>(bytes_[pos]) << 8) | bytes_[pos + 1];
      if (length < 2 || pos + length > n) throw JpegParseError("bad marker segment length");
      pos += length;
      if (marker == kSos) {
        saw_scan = true;
        pos = scan_entropy(pos);
      }
    }
    if (!saw_scan) throw JpegParseError("no SOS marker");
    fill_structural(seq_, bytes_);
    return std::move(seq_);
  }

 private:
  // Walks entropy-coded data starting at pos and returns the offset of the
  // marker that ends the scan (or the end of the stream).
  std::size_t scan_entropy(std::size_t pos) {
    const std::size_t n = bytes_.size();
    std::vector<Extent> spans;
    std::size_t span_start = pos;
    std::size_t i = pos;
    bool restarts = false;
    std::size_t resume = n;
    while (i < n) {
      if (bytes_[i] != 0xFF) {
        ++i;
        continue;
      }
      if (i + 1 < n && bytes_[i + 1] == 0x00) {
        i += 2;
        continue;
      }
      std::size_t j = i;
      while (j < n && bytes_[j] == 0xFF) ++j;
      if (j >= n) break;  // fill bytes up to the end: truncated file
      const std::uint8_t marker = bytes_[j];
      if (is_restart(marker)) {
        restarts = true;
        spans.push_back({span_start, i - span_start});
        span_start = j + 1;
        i = j + 1;
        continue;
      }
      if (!may_end_scan(marker)) {
        throw ScanCorruptError("marker 0xFF" + hex(marker) + " inside entropy-coded data at offset " +
                               std::to_string(i));
      }
      resume = i;
      break;
    }
    spans.push_back({span_start, std::min(i, n) - span_start});

    if (restarts) {
      for (const auto& span : spans) emit(span);
    } else {
      chunk(spans.front());
    }
    return resume;
  }

  void chunk(Extent span) {
    const std::size_t target = options_.target_chunk_bytes == 0 ? 1 : options_.target_chunk_bytes;
    std::size_t start = span.offset;
    while (start < span.end()) {
      std::size_t end = std::min(start + target, span.end());
      // Keep a stuffed 0xFF00 pair inside one chunk.
      if (end < span.end() && bytes_[end - 1] == 0xFF) ++end;
      emit({start, end - start});
      start = end;
    }
  }

  void emit(Extent span) {
    if (span.length == 0) return;
    CompressedBlock block;
    block.offset = span.offset;
    block.length = span.length;
    block.bytes.assign(bytes_.begin() + static_cast<std::ptrdiff_t>(span.offset),
                       bytes_.begin() + static_cast<std::ptrdiff_t>(span.end()));
    block.kind = BlockKind::kJpegSegment;
    block.extents = {span};
    seq_.blocks.push_back(std::move(block));
  }

  static std::string hex(std::uint8_t v) {
    constexpr char kDigits[] = "0123456789ABCDEF";
    return {kDigits[v >> 4], kDigits[v & 0x0F]};
  }

  ByteView bytes_;
  ScanOptions options_;
  BlockSequence seq_;
};

}  // namespace

BlockSequence scan_segments(ByteView bytes, const ScanOptions& options) {
  return SegmentScanner(bytes, options).run();
}

}  // namespace tempest::jpeg
