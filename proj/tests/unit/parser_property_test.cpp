#include <doctest.h>

#include <random>

#include "support.hpp"
#include "tempest/errors.hpp"
#include "tempest/parsers.hpp"

using namespace tempest;

namespace {

ByteStream mutate(ByteStream s, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> op(0, 3);
  std::uniform_int_distribution<std::size_t> at(0, s.bytes.size() - 1);
  std::uniform_int_distribution<int> byte(0, 255);
  const int edits = 1 + static_cast<int>(rng() % 8);
  for (int e = 0; e < edits && !s.bytes.empty(); ++e) {
    at = std::uniform_int_distribution<std::size_t>(0, s.bytes.size() - 1);
    switch (op(rng)) {
      case 0: s.bytes[at(rng)] = static_cast<std::uint8_t>(byte(rng)); break;
      case 1: s.bytes.erase(s.bytes.begin() + static_cast<std::ptrdiff_t>(at(rng))); break;
      case 2: s.bytes.insert(s.bytes.begin() + static_cast<std::ptrdiff_t>(at(rng)), static_cast<std::uint8_t>(byte(rng))); break;
      default: s.bytes.resize(at(rng) + 1); break;
    }
  }
  return s;
}

}  // namespace

TEST_CASE("parse_blocks dispatches on format") {
  ByteStream unknown{Bytes(10, 0), "", FormatKind::kUnknown};
  CHECK_THROWS_AS(parse_blocks(unknown), UnsupportedFormat);
  const ByteStream mp3 = mp3::synth_stream(2, 128000, 44100, 1);
  CHECK(parse_blocks(mp3).source_format == FormatKind::kMp3);
}

TEST_CASE("mutated streams either fail with a typed error or partition cleanly") {
  std::mt19937_64 rng(20241018);
  std::vector<ByteStream> seeds;
  for (const char* dir : {"mp3", "opus", "jpeg"}) {
    const auto paths = tempest::testing::fixtures(dir);
    for (std::size_t i = 0; i < paths.size(); i += 3) seeds.push_back(open_stream(paths[i]));
  }
  std::size_t parsed = 0;
  std::size_t rejected = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const ByteStream s = mutate(seeds[static_cast<std::size_t>(trial) % seeds.size()], rng);
    CAPTURE(trial);
    try {
      const BlockSequence seq = parse_blocks(s);
      ++parsed;
      REQUIRE(validate_partition(seq) == "");
      REQUIRE(reassemble(seq) == s.bytes);
      REQUIRE(seq.stream_length == s.bytes.size());
    } catch (const tempest::Error&) {
      ++rejected;
    }
  }
  CHECK(parsed > 0);
  CHECK(parsed + rejected == 400);
}
