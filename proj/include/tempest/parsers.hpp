#pragma once

#include "tempest/blocks.hpp"
#include "tempest/jpeg.hpp"
#include "tempest/mp3.hpp"
#include "tempest/ogg_opus.hpp"

namespace tempest {

// Dispatches on s.format. Throws UnsupportedFormat for kUnknown.
BlockSequence parse_blocks(const ByteStream& s, const jpeg::ScanOptions& jpeg_options = {});

}  // namespace tempest
