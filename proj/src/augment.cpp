#include "tempest/augment.hpp"

#include <openssl/evp.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <thread>

#include "tempest/errors.hpp"
#include "tempest/mp3.hpp"
#include "tempest/parsers.hpp"

namespace tempest::augment {

namespace fs = std::filesystem;

namespace {

void check_pair(const TokenMatrix& a, const TokenMatrix& b) {
  if (a.num_rows() != b.num_rows()) throw ShapeError("CutMix inputs have different row counts");
  if (a.num_rows() == 0) throw ShapeError("CutMix inputs are empty");
  for (int r = 0; r < a.num_rows(); ++r) {
    if (a.rows[r].size() != b.rows[r].size()) throw ShapeError("CutMix inputs have different row lengths");
  }
  if (!a.label || !b.label) throw LabelError("CutMix inputs must be labelled");
  if (a.label->size() != b.label->size()) throw ShapeError("CutMix inputs have different class counts");
}

CutMixResult mix_rows(const TokenMatrix& a, const TokenMatrix& b, std::vector<std::size_t> rows) {
  CutMixResult out;
  out.mixed = a;
  for (std::size_t r : rows) out.mixed.rows[r] = b.rows[r];
  out.fraction = static_cast<double>(rows.size()) / static_cast<double>(a.rows.size());
  const double f = out.fraction;
  std::vector<double> label(a.label->size());
  for (std::size_t c = 0; c < label.size(); ++c) label[c] = (1.0 - f) * (*a.label)[c] + f * (*b.label)[c];
  out.mixed.label = std::move(label);
  out.replaced_rows = std::move(rows);
  return out;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  for (std::size_t at = s.find(from); at != std::string::npos; at = s.find(from, at + to.size())) {
    s.replace(at, from.size(), to);
  }
}

std::string first_word(const std::string& command) {
  std::istringstream in(command);
  std::string word;
  in >> word;
  if (word.size() >= 2 && (word.front() == '\'' || word.front() == '"') && word.back() == word.front()) {
    word = word.substr(1, word.size() - 2);
  }
  return word;
}

bool program_exists(const std::string& program) {
  if (program.empty()) return false;
  if (program.find('/') != std::string::npos) return ::access(program.c_str(), X_OK) == 0;
  const char* path = std::getenv("PATH");
  if (path == nullptr) return false;
  std::istringstream dirs(path);
  std::string dir;
  while (std::getline(dirs, dir, ':')) {
    const fs::path candidate = fs::path(dir.empty() ? "." : dir) / program;
    if (::access(candidate.c_str(), X_OK) == 0) return true;
  }
  return false;
}

std::string last_line(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::string last;
  while (std::getline(in, line)) {
    if (!line.empty()) last = line;
  }
  return last;
}

// Runs command through /bin/sh; stderr goes to a sidecar file whose last
// line becomes part of the diagnostic.
void run_shell(const std::string& command, const fs::path& stderr_path) {
  const std::string program = first_word(command);
  if (!program_exists(program)) throw ToolNotFound("encoder '" + program + "' not found");
  const std::string wrapped = "( " + command + " ) </dev/null 2>" + shell_quote(stderr_path.string());
  const int status = std::system(wrapped.c_str());
  const std::string detail = last_line(stderr_path);
  std::error_code ec;
  fs::remove(stderr_path, ec);
  if (status == -1) throw TranscodeError("cannot start /bin/sh");
  if (!WIFEXITED(status)) throw TranscodeError("encoder terminated by a signal");
  const int code = WEXITSTATUS(status);
  if (code == 127) throw ToolNotFound("encoder not runnable: " + detail);
  if (code != 0) {
    throw TranscodeError("encoder exited with status " + std::to_string(code) + (detail.empty() ? "" : ": " + detail));
  }
}

std::string extension_for(FormatKind codec) {
  switch (codec) {
    case FormatKind::kMp3: return ".mp3";
    case FormatKind::kOpusOgg: return ".opus";
    case FormatKind::kJpeg: return ".jpg";
    case FormatKind::kUnknown: break;
  }
  return ".bin";
}

}  // namespace

// ---- CutMix ----

CutMixResult cutmix_span(const TokenMatrix& a, const TokenMatrix& b, std::size_t begin, std::size_t end) {
  check_pair(a, b);
  if (begin > end || end > a.rows.size()) throw ShapeError("CutMix span outside the matrix");
  std::vector<std::size_t> rows(end - begin);
  std::iota(rows.begin(), rows.end(), begin);
  return mix_rows(a, b, std::move(rows));
}

CutMixResult block_cutmix(const TokenMatrix& a, const TokenMatrix& b, std::mt19937_64& rng,
                          const CutMixOptions& options) {
  if (!(options.max_fraction > 0.0 && options.max_fraction <= 1.0)) {
    throw ConfigError("CutMix max_fraction must be in (0, 1]");
  }
  check_pair(a, b);
  const std::size_t rows = a.rows.size();
  const auto max_rows = static_cast<std::size_t>(std::floor(options.max_fraction * static_cast<double>(rows)));
  const std::size_t k = std::uniform_int_distribution<std::size_t>(0, max_rows)(rng);
  if (options.mode == SpanMode::kContiguous) {
    const std::size_t begin = std::uniform_int_distribution<std::size_t>(0, rows - k)(rng);
    std::vector<std::size_t> span(k);
    std::iota(span.begin(), span.end(), begin);
    return mix_rows(a, b, std::move(span));
  }
  std::vector<std::size_t> all(rows);
  std::iota(all.begin(), all.end(), 0);
  std::vector<std::size_t> picked;
  std::sample(all.begin(), all.end(), std::back_inserter(picked), k, rng);
  return mix_rows(a, b, std::move(picked));
}

CutMixResult block_cutmix(const TokenMatrix& a, const TokenMatrix& b, std::uint64_t seed,
                          const CutMixOptions& options) {
  std::mt19937_64 rng(seed);
  return block_cutmix(a, b, rng, options);
}

// ---- bit rates ----

void BitrateSet::validate(FormatKind codec) const {
  if (rates_bps.empty()) throw ConfigError("bit rate set is empty");
  int low = 0;
  int high = 0;
  switch (codec) {
    case FormatKind::kMp3: low = 8000; high = 320000; break;
    case FormatKind::kOpusOgg: low = 6000; high = 510000; break;
    default: throw ConfigError("bit rates apply only to audio codecs");
  }
  for (int r : rates_bps) {
    if (r < low || r > high) {
      throw ConfigError("bit rate " + std::to_string(r) + " is outside " + std::string(to_string(codec)) + " limits");
    }
  }
}

BitrateSet parse_bitrates(const std::string& list) {
  BitrateSet set;
  std::istringstream in(list);
  std::string item;
  while (std::getline(in, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char c) { return std::isspace(c); }), item.end());
    if (item.empty()) continue;
    int scale = 1;
    if (item.back() == 'k' || item.back() == 'K') {
      scale = 1000;
      item.pop_back();
    }
    std::size_t used = 0;
    long value = 0;
    try {
      value = std::stol(item, &used);
    } catch (const std::exception&) {
      throw ConfigError("bad bit rate '" + item + "'");
    }
    if (used != item.size() || value <= 0 || value > 10'000'000 / scale) {
      throw ConfigError("bad bit rate '" + item + "'");
    }
    set.rates_bps.push_back(static_cast<int>(value * scale));
  }
  if (set.rates_bps.empty()) throw ConfigError("bit rate list is empty");
  return set;
}

int sample_bitrate(const BitrateSet& set, std::mt19937_64& rng) {
  if (set.rates_bps.empty()) throw ConfigError("bit rate set is empty");
  return set.rates_bps[std::uniform_int_distribution<std::size_t>(0, set.rates_bps.size() - 1)(rng)];
}

int sample_bitrate(const BitrateSet& set, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_bitrate(set, rng);
}

// ---- transcoding ----

std::string default_encoder_template(FormatKind codec, const std::string& ffmpeg) {
  const std::string head = shell_quote(ffmpeg) + " -hide_banner -loglevel error -y -i {in} -ac 1 -ar {samplerate}";
  const std::string tail = " -fflags +bitexact -flags:a +bitexact {out}";
  switch (codec) {
    case FormatKind::kMp3: return head + " -c:a libmp3lame -abr 1 -b:a {bitrate} -id3v2_version 0" + tail;
    case FormatKind::kOpusOgg: return head + " -c:a libopus -b:a {bitrate}" + tail;
    default: throw ConfigError("no encoder for format " + std::string(to_string(codec)));
  }
}

Transcoder transcoder_from_env(FormatKind codec) {
  const char* env = std::getenv("TEMPEST_ENCODER_CMD");
  if (env != nullptr && *env != '\0') return {env, ""};
  const char* ffmpeg = std::getenv("TEMPEST_FFMPEG");
  if (ffmpeg != nullptr && *ffmpeg != '\0') return {default_encoder_template(codec, ffmpeg), ""};
  return {default_encoder_template(codec), ""};
}

ByteStream run_transcode(const TranscodeJob& job, const Transcoder& transcoder) {
  if (job.codec != FormatKind::kMp3 && job.codec != FormatKind::kOpusOgg) {
    throw ConfigError("transcoding targets MP3 or Opus only");
  }
  if (job.output_path.empty()) throw ConfigError("transcode job has no output path");
  if (!fs::exists(job.input_path)) throw IoError("cannot open " + job.input_path.string());
  const fs::path err = job.output_path.string() + ".stderr";

  fs::path source = job.input_path;
  fs::path hooked;
  if (!transcoder.pre_hook.empty()) {
    hooked = job.output_path.string() + ".pre" + job.input_path.extension().string();
    std::string hook = transcoder.pre_hook;
    replace_all(hook, "{in}", shell_quote(job.input_path.string()));
    replace_all(hook, "{out}", shell_quote(hooked.string()));
    run_shell(hook, err);
    source = hooked;
  }

  std::string command = transcoder.command;
  replace_all(command, "{in}", shell_quote(source.string()));
  replace_all(command, "{out}", shell_quote(job.output_path.string()));
  replace_all(command, "{bitrate}", std::to_string(job.bitrate_bps));
  replace_all(command, "{samplerate}", std::to_string(job.samplerate_hz));
  try {
    run_shell(command, err);
  } catch (...) {
    std::error_code ec;
    if (!hooked.empty()) fs::remove(hooked, ec);
    throw;
  }
  std::error_code ec;
  if (!hooked.empty()) fs::remove(hooked, ec);

  ByteStream out;
  try {
    out = load_stream(job.output_path);
  } catch (const Error& e) {
    throw TranscodeError(std::string("encoder produced no usable output: ") + e.what());
  }
  out.format = detect_format(out);
  if (out.format != job.codec) {
    throw TranscodeError("encoder output is " + std::string(to_string(out.format)) + ", expected " +
                         std::string(to_string(job.codec)));
  }
  out = strip_metadata(out);
  try {
    if (parse_blocks(out).empty()) throw TranscodeError("encoder output has no blocks");
  } catch (const TranscodeError&) {
    throw;
  } catch (const Error& e) {
    throw TranscodeError(std::string("encoder output does not parse: ") + e.what());
  }
  return out;
}

std::vector<ByteStream> run_transcodes(const std::vector<TranscodeJob>& jobs, const Transcoder& transcoder,
                                       unsigned max_parallel) {
  std::vector<ByteStream> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = run_transcode(jobs[i], transcoder);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(max_parallel, static_cast<unsigned>(jobs.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

// ---- cache ----

std::string sha256_hex(ByteView bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 failed");
  }
  constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0x0F];
  }
  return out;
}

TranscodeCache::TranscodeCache(fs::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create cache directory " + dir_.string());
}

std::string TranscodeCache::key(const TranscodeJob& job, const Transcoder& transcoder) const {
  Bytes material = load_stream(job.input_path).bytes;
  const std::string params = std::string(1, '\0') + transcoder.command + '\0' + transcoder.pre_hook + '\0' +
                             std::string(to_string(job.codec)) + '\0' + std::to_string(job.bitrate_bps) + '\0' +
                             std::to_string(job.samplerate_hz);
  material.insert(material.end(), params.begin(), params.end());
  return sha256_hex(material);
}

ByteStream TranscodeCache::get(TranscodeJob job, const Transcoder& transcoder) {
  const std::string name = key(job, transcoder);
  const fs::path final_path = dir_ / (name + extension_for(job.codec));
  if (fs::exists(final_path)) {
    ByteStream s = load_stream(final_path);
    s.format = detect_format(s);
    if (s.format == job.codec) {
      ++hits_;
      return strip_metadata(s);
    }
  }
  ++misses_;
  job.output_path = dir_ / (name + ".tmp" + std::to_string(::getpid()) + extension_for(job.codec));
  ByteStream out;
  try {
    out = run_transcode(job, transcoder);
  } catch (...) {
    std::error_code ec;
    fs::remove(job.output_path, ec);
    throw;
  }
  fs::rename(job.output_path, final_path);
  out.source_path = final_path.string();
  return out;
}

// ---- analysis ----

double byte_disagreement(const ByteStream& a, const ByteStream& b) {
  const auto fa = mp3::scan_frames(a);
  const auto fb = mp3::scan_frames(b);
  constexpr std::size_t kHeader = 4;
  std::size_t compared = 0;
  std::size_t differing = 0;
  const std::size_t frames = std::min(fa.size(), fb.size());
  for (std::size_t i = 0; i < frames; ++i) {
    const Bytes& x = fa.blocks[i].bytes;
    const Bytes& y = fb.blocks[i].bytes;
    const std::size_t n = std::min(x.size(), y.size());
    for (std::size_t j = kHeader; j < n; ++j) {
      ++compared;
      if (x[j] != y[j]) ++differing;
    }
  }
  if (compared == 0) throw NoFramesError("no payload bytes to compare");
  return static_cast<double>(differing) / static_cast<double>(compared);
}

}  // namespace tempest::augment
