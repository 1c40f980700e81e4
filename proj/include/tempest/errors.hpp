#pragma once

#include <stdexcept>
#include <string>

namespace tempest {

// Base for every failure raised by the library. Subclasses only carry a
// distinct type so callers can catch the category they care about.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define TEMPEST_DEFINE_ERROR(Name)    \
  class Name : public Error {         \
   public:                            \
    using Error::Error;               \
  }

// bytestream-io
TEMPEST_DEFINE_ERROR(IoError);
TEMPEST_DEFINE_ERROR(EmptyStream);
TEMPEST_DEFINE_ERROR(MetadataError);

// parsers
TEMPEST_DEFINE_ERROR(NoFramesError);
TEMPEST_DEFINE_ERROR(OggParseError);
TEMPEST_DEFINE_ERROR(JpegParseError);
TEMPEST_DEFINE_ERROR(ScanCorruptError);
TEMPEST_DEFINE_ERROR(UnsupportedFormat);

// shared
TEMPEST_DEFINE_ERROR(ConfigError);
TEMPEST_DEFINE_ERROR(EmptyInput);
TEMPEST_DEFINE_ERROR(NotApplicable);
TEMPEST_DEFINE_ERROR(ShapeError);

// model
TEMPEST_DEFINE_ERROR(VocabError);
TEMPEST_DEFINE_ERROR(LabelError);
TEMPEST_DEFINE_ERROR(LengthError);
TEMPEST_DEFINE_ERROR(NumericsError);
TEMPEST_DEFINE_ERROR(CheckpointError);

// augment / harness
TEMPEST_DEFINE_ERROR(ToolNotFound);
TEMPEST_DEFINE_ERROR(TranscodeError);
TEMPEST_DEFINE_ERROR(DatasetError);

#undef TEMPEST_DEFINE_ERROR

}  // namespace tempest
