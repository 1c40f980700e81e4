#pragma once

#include <cstddef>

#include "tempest/blocks.hpp"

namespace tempest::jpeg {

struct ScanOptions {
  // Chunk size used when a scan has no restart markers.
  std::size_t target_chunk_bytes = 144;
};

// Segments the entropy-coded data of every scan. Restart markers delimit
// blocks when present (marker bytes are structural); otherwise each scan is
// cut into target_chunk_bytes chunks, never splitting a stuffed 0xFF00 pair.
// Throws JpegParseError when no SOS is found or a marker segment is
// truncated, ScanCorruptError when a marker that cannot follow a scan
// appears inside entropy-coded data.
BlockSequence scan_segments(ByteView bytes, const ScanOptions& options = {});
inline BlockSequence scan_segments(const ByteStream& s, const ScanOptions& options = {}) {
  return scan_segments(s.view(), options);
}

}  // namespace tempest::jpeg
