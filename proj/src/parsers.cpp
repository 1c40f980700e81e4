#include "tempest/parsers.hpp"

#include "tempest/errors.hpp"

namespace tempest {

BlockSequence parse_blocks(const ByteStream& s, const jpeg::ScanOptions& jpeg_options) {
  switch (s.format) {
    case FormatKind::kMp3: return mp3::scan_frames(s);
    case FormatKind::kOpusOgg: return opus::extract_packets(s);
    case FormatKind::kJpeg: return jpeg::scan_segments(s, jpeg_options);
    case FormatKind::kUnknown: break;
  }
  throw UnsupportedFormat("cannot parse a stream of unknown format");
}

}  // namespace tempest
