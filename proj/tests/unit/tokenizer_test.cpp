#include <doctest.h>

#include "support.hpp"
#include "tempest/errors.hpp"
#include "tempest/parsers.hpp"
#include "tempest/tokenizer.hpp"

using namespace tempest;
using tempest::testing::bytes_of;

TEST_CASE("tokenize_block pads and truncates") {
  const auto t = tokenize_block(bytes_of({0x00, 0x7F, 0xFF}), 5);
  CHECK(t.tokens == std::vector<Token>{0, 127, 255, 256, 256});
  CHECK(t.valid_len == 3);
  CHECK(t.detokenize() == bytes_of({0x00, 0x7F, 0xFF}));

  TokenizeStats stats;
  const auto cut = tokenize_block(Bytes(10, 7), 4, &stats);
  CHECK(cut.tokens == std::vector<Token>{7, 7, 7, 7});
  CHECK(stats.truncated_blocks == 1);
  tokenize_block(Bytes(4, 7), 4, &stats);
  CHECK(stats.truncated_blocks == 1);
  CHECK_THROWS_AS(tokenize_block(Bytes(1, 0), 0), ConfigError);
}

TEST_CASE("tokenize_stream round-trips MP3 frames") {
  for (const auto& path : tempest::testing::fixtures("mp3")) {
    CAPTURE(path);
    const auto seq = parse_blocks(open_stream(path));
    TokenizeStats stats;
    const auto m = tokenize_stream(seq, 144, 1 << 20, &stats);
    REQUIRE(m.num_rows() == static_cast<int>(seq.size()));
    std::size_t longer = 0;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq.blocks[i].length > 144) {
        ++longer;
      } else {
        CHECK(m.rows[i].detokenize() == seq.blocks[i].bytes);
      }
    }
    CHECK(stats.truncated_blocks == longer);
  }
  const auto seq = parse_blocks(mp3::synth_stream(10, 32000, 32000, 3));
  const auto m = tokenize_stream(seq, 144, 4);
  CHECK(m.num_rows() == 4);
  CHECK(m.rows[3].detokenize() == seq.blocks[3].bytes);
  CHECK_THROWS_AS(tokenize_stream(BlockSequence{}, 144, 4), EmptyInput);
}

TEST_CASE("tokens per second and token-to-byte ratio") {
  // 32 kHz MPEG-1: 1152 samples per frame, 36 ms, 27.78 frames/s.
  const auto seq = parse_blocks(mp3::synth_stream(100, 32000, 32000, 1));
  CHECK(compute_tps(seq, 1) == doctest::Approx(32000.0 / 1152.0));
  CHECK(compute_tps(seq, 4) == doctest::Approx(4 * 32000.0 / 1152.0));
  CHECK(compute_tbr(1, seq.average_block_length()) == doctest::Approx(1.0 / 144.0));

  const auto clip = parse_blocks(open_stream(tempest::testing::fixture_dir() / "clip_5s_32k.mp3"));
  const double tps = compute_tps(clip, 1);
  CHECK(tps == doctest::Approx(27.78).epsilon(0.001));
  CHECK_THROWS_AS(compute_tps(BlockSequence{}, 1), NotApplicable);
  CHECK_THROWS_AS(compute_tbr(1, 0.0), ConfigError);
}

TEST_CASE("check_distribution") {
  check_distribution({0.25, 0.75});
  check_distribution({1.0});
  CHECK_THROWS_AS(check_distribution({0.5, 0.4}), LabelError);
  CHECK_THROWS_AS(check_distribution({1.5, -0.5}), LabelError);
  CHECK_THROWS_AS(check_distribution({}), LabelError);
}

TEST_CASE("token matrix file round trip") {
  TokenMatrix m;
  m.rows.push_back(tokenize_block(bytes_of({1, 2, 3}), 4));
  m.rows.push_back(tokenize_block(bytes_of({255, 0, 9, 9, 9}), 4));
  m.label = std::vector<double>{0.25, 0.75};
  tempest::testing::TempDir dir;
  write_token_matrix(dir / "m.tmtk", m);
  const auto back = read_token_matrix(dir / "m.tmtk");
  REQUIRE(back.num_rows() == 2);
  CHECK(back.rows[0].tokens == m.rows[0].tokens);
  CHECK(back.rows[0].valid_len == 3);
  CHECK(back.rows[1].tokens == m.rows[1].tokens);
  CHECK(back.rows[1].valid_len == 4);
  CHECK(*back.label == std::vector<double>{0.25, 0.75});

  Bytes raw = encode_token_matrix(m);
  CHECK(raw.size() == 16 + 2 * 4 * 2 + 2 * 4);
  raw[16] = 0x02;
  raw[17] = 0x01;  // token 258
  CHECK_THROWS_AS(decode_token_matrix(raw), VocabError);
  raw.pop_back();
  CHECK_THROWS_AS(decode_token_matrix(raw), IoError);
  CHECK_THROWS_AS(decode_token_matrix(bytes_of({'X', 'M', 'T', 'K'})), IoError);
}
