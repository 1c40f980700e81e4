#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tempest/bytestream.hpp"
#include "tempest/tokenizer.hpp"

namespace tempest::augment {

// ---- block CutMix ----

enum class SpanMode : std::uint8_t { kContiguous, kScattered };

struct CutMixOptions {
  double max_fraction = 0.5;
  SpanMode mode = SpanMode::kContiguous;
};

struct CutMixResult {
  TokenMatrix mixed;
  std::vector<std::size_t> replaced_rows;  // ascending
  double fraction = 0.0;                   // replaced_rows.size() / rows
};

// Replaces a random set of rows of a with the rows of b at the same
// positions and blends the labels as (1 - f) * label_a + f * label_b.
// The row count k is uniform on 0..floor(max_fraction * rows); contiguous
// mode then picks a uniform start, scattered mode k distinct rows.
// Throws ShapeError when row counts, row lengths or class counts differ,
// LabelError when a label is missing, ConfigError for max_fraction outside (0, 1].
CutMixResult block_cutmix(const TokenMatrix& a, const TokenMatrix& b, std::uint64_t seed,
                          const CutMixOptions& options = {});
CutMixResult block_cutmix(const TokenMatrix& a, const TokenMatrix& b, std::mt19937_64& rng,
                          const CutMixOptions& options = {});

// Deterministic variant on the explicit rows [begin, end).
CutMixResult cutmix_span(const TokenMatrix& a, const TokenMatrix& b, std::size_t begin, std::size_t end);

// ---- bit rates ----

struct BitrateSet {
  std::vector<int> rates_bps;

  // Throws ConfigError when empty or a rate is outside what the codec accepts.
  void validate(FormatKind codec) const;
};

// Parses "20000,26k,32k". Throws ConfigError.
BitrateSet parse_bitrates(const std::string& list);

// Uniform choice, deterministic given the seed.
int sample_bitrate(const BitrateSet& set, std::uint64_t seed);
int sample_bitrate(const BitrateSet& set, std::mt19937_64& rng);

// ---- transcoding ----

struct TranscodeJob {
  std::filesystem::path input_path;
  FormatKind codec = FormatKind::kMp3;
  int bitrate_bps = 32000;
  int samplerate_hz = 32000;
  std::filesystem::path output_path;
};

// Command templates run with /bin/sh -c after substituting {in}, {out}
// (shell-quoted paths), {bitrate} (bits per second) and {samplerate}.
struct Transcoder {
  std::string command;
  // Optional waveform-domain hook run on the input first; only {in} and
  // {out} are substituted. Its output feeds the encoder.
  std::string pre_hook;
};

// Default ffmpeg invocation for a codec, mono output, bit-exact flags.
std::string default_encoder_template(FormatKind codec, const std::string& ffmpeg = "ffmpeg");

// Template from TEMPEST_ENCODER_CMD, else the default template with the
// ffmpeg binary named by TEMPEST_FFMPEG (or found on PATH).
Transcoder transcoder_from_env(FormatKind codec);

// Runs the encoder, then loads and format-checks its output.
// Throws ToolNotFound when the program cannot be found (or the shell
// reports 127), TranscodeError on any other failure, including output that
// is not the requested codec or parses into no blocks.
ByteStream run_transcode(const TranscodeJob& job, const Transcoder& transcoder);

// Runs independent jobs on up to max_parallel threads; results are in job order.
std::vector<ByteStream> run_transcodes(const std::vector<TranscodeJob>& jobs, const Transcoder& transcoder,
                                       unsigned max_parallel = 4);

// Content-addressed store of transcoded files. The key hashes the input
// bytes with the command template, codec, bit rate and sample rate, so an
// unchanged job is never re-encoded.
class TranscodeCache {
 public:
  explicit TranscodeCache(std::filesystem::path dir);

  // Fills job.output_path with the cache location and transcodes on a miss.
  ByteStream get(TranscodeJob job, const Transcoder& transcoder);
  std::string key(const TranscodeJob& job, const Transcoder& transcoder) const;
  const std::filesystem::path& dir() const { return dir_; }
  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }

 private:
  std::filesystem::path dir_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

// Lowercase hex SHA-256.
std::string sha256_hex(ByteView bytes);

// Fraction of differing byte values between two MP3 streams, comparing
// frame payloads (header excluded) pairwise by frame index over the
// shorter of each pair. Throws NoFramesError when either has no frames.
double byte_disagreement(const ByteStream& a, const ByteStream& b);

}  // namespace tempest::augment
