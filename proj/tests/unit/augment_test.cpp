#include <doctest.h>

#include <filesystem>
#include <map>

#include "support.hpp"
#include "tempest/augment.hpp"
#include "tempest/errors.hpp"
#include "tempest/mp3.hpp"
#include "tempest/parsers.hpp"

using namespace tempest;
using namespace tempest::augment;

namespace {

TokenMatrix labelled(int rows, std::uint8_t fill, std::vector<double> label) {
  TokenMatrix m;
  for (int r = 0; r < rows; ++r) m.rows.push_back(tokenize_block(Bytes(3, fill), 6));
  m.label = std::move(label);
  return m;
}

}  // namespace

TEST_CASE("CutMix on an explicit span") {
  const TokenMatrix a = labelled(10, 1, {1.0, 0.0});
  const TokenMatrix b = labelled(10, 2, {0.0, 1.0});

  const auto mid = cutmix_span(a, b, 2, 5);
  CHECK(mid.fraction == doctest::Approx(0.3));
  CHECK((*mid.mixed.label)[0] == doctest::Approx(0.7));
  CHECK((*mid.mixed.label)[1] == doctest::Approx(0.3));
  for (int r = 0; r < 10; ++r) CHECK(mid.mixed.rows[r].tokens == (r >= 2 && r < 5 ? b : a).rows[r].tokens);

  const auto none = cutmix_span(a, b, 4, 4);
  CHECK(none.fraction == 0.0);
  CHECK(*none.mixed.label == *a.label);
  for (int r = 0; r < 10; ++r) CHECK(none.mixed.rows[r].tokens == a.rows[r].tokens);

  const auto all = cutmix_span(a, b, 0, 10);
  CHECK(all.fraction == 1.0);
  CHECK(*all.mixed.label == *b.label);
  for (int r = 0; r < 10; ++r) CHECK(all.mixed.rows[r].tokens == b.rows[r].tokens);

  CHECK_THROWS_AS(cutmix_span(a, b, 5, 11), ShapeError);
  CHECK_THROWS_AS(cutmix_span(a, labelled(9, 2, {0.0, 1.0}), 0, 1), ShapeError);
  CHECK_THROWS_AS(cutmix_span(a, labelled(10, 2, {0.0, 0.5, 0.5}), 0, 1), ShapeError);
  TokenMatrix unlabelled = a;
  unlabelled.label.reset();
  CHECK_THROWS_AS(cutmix_span(a, unlabelled, 0, 1), LabelError);
}

TEST_CASE("random CutMix draws respect the contract") {
  const TokenMatrix a = labelled(12, 1, {0.2, 0.8, 0.0});
  const TokenMatrix b = labelled(12, 2, {0.0, 0.0, 1.0});
  for (SpanMode mode : {SpanMode::kContiguous, SpanMode::kScattered}) {
    std::size_t max_seen = 0;
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
      const auto r = block_cutmix(a, b, seed, {0.5, mode});
      const std::size_t k = r.replaced_rows.size();
      max_seen = std::max(max_seen, k);
      CHECK(k <= 6);
      CHECK(r.fraction == static_cast<double>(k) / 12.0);
      CHECK((*r.mixed.label)[2] == doctest::Approx(r.fraction).epsilon(1e-12));
      double sum = 0.0;
      for (double p : *r.mixed.label) sum += p;
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
      if (mode == SpanMode::kContiguous && k > 0) CHECK(r.replaced_rows.back() - r.replaced_rows.front() == k - 1);
      for (int row = 0; row < 12; ++row) {
        const bool replaced = std::find(r.replaced_rows.begin(), r.replaced_rows.end(), row) != r.replaced_rows.end();
        CHECK(r.mixed.rows[row].tokens == (replaced ? b : a).rows[row].tokens);
      }
      CHECK(r.mixed.num_rows() == 12);
    }
    CHECK(max_seen == 6);
  }
  CHECK(block_cutmix(a, b, 5).replaced_rows == block_cutmix(a, b, 5).replaced_rows);
  CHECK_THROWS_AS(block_cutmix(a, b, 1, {0.0}), ConfigError);
  CHECK_THROWS_AS(block_cutmix(a, b, 1, {1.5}), ConfigError);
}

TEST_CASE("bit rate sets") {
  const BitrateSet set = parse_bitrates("20k, 26000,32K");
  CHECK(set.rates_bps == std::vector<int>{20000, 26000, 32000});
  set.validate(FormatKind::kMp3);
  set.validate(FormatKind::kOpusOgg);
  CHECK_THROWS_AS(BitrateSet{{1000}}.validate(FormatKind::kMp3), ConfigError);
  CHECK_THROWS_AS(BitrateSet{}.validate(FormatKind::kMp3), ConfigError);
  CHECK_THROWS_AS(set.validate(FormatKind::kJpeg), ConfigError);
  CHECK_THROWS_AS(parse_bitrates("20x"), ConfigError);
  CHECK_THROWS_AS(parse_bitrates(""), ConfigError);

  CHECK(sample_bitrate(BitrateSet{{26000}}, 99) == 26000);
  CHECK(sample_bitrate(set, 42) == sample_bitrate(set, 42));

  std::map<int, int> counts;
  for (std::uint64_t seed = 0; seed < 30000; ++seed) ++counts[sample_bitrate(set, seed)];
  for (int rate : set.rates_bps) {
    CAPTURE(rate);
    CHECK(std::abs(counts[rate] / 30000.0 - 1.0 / 3.0) <= 0.02);
  }
}

TEST_CASE("SHA-256 reference digests") {
  CHECK(sha256_hex(Bytes{}) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex(testing::ascii("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("transcoder subprocess contract") {
  testing::TempDir dir;
  const auto input = dir / "in.mp3";
  save_bytes(input, mp3::synth_stream(5, 128000, 44100, 3).bytes);
  TranscodeJob job{input, FormatKind::kMp3, 32000, 44100, dir / "out.mp3"};

  SUBCASE("copying encoder") {
    const ByteStream out = run_transcode(job, {"cp {in} {out}", ""});
    CHECK(out.bytes == load_stream(input).bytes);
  }
  SUBCASE("placeholders are substituted") {
    run_transcode(job, {"sh -c 'echo {bitrate} {samplerate} >&2; cp \"$0\" \"$1\"' {in} {out}", ""});
  }
  SUBCASE("pre-transcode hook") {
    const ByteStream out = run_transcode(job, {"cp {in} {out}", "cp {in} {out}"});
    CHECK(out.size() == 5 * 417);
    CHECK(!std::filesystem::exists(dir / "out.mp3.pre.mp3"));
  }
  SUBCASE("missing encoder") {
    CHECK_THROWS_AS(run_transcode(job, {"/nonexistent/encoder {in} {out}", ""}), ToolNotFound);
    CHECK_THROWS_AS(run_transcode(job, {"no-such-encoder-xyz {in} {out}", ""}), ToolNotFound);
    CHECK_THROWS_AS(run_transcode(job, {"sh -c 'exit 127'", ""}), ToolNotFound);
  }
  SUBCASE("failing encoder") {
    CHECK_THROWS_AS(run_transcode(job, {"sh -c 'echo broken >&2; exit 3'", ""}), TranscodeError);
    try {
      run_transcode(job, {"sh -c 'echo broken >&2; exit 3'", ""});
    } catch (const TranscodeError& e) {
      CHECK(std::string(e.what()).find("broken") != std::string::npos);
    }
  }
  SUBCASE("wrong output format") {
    save_bytes(dir / "fake.jpg", testing::bytes_of({0xFF, 0xD8, 0xFF, 0xD9}));
    const std::string cmd = "cp " + (dir / "fake.jpg").string() + " {out}";
    CHECK_THROWS_AS(run_transcode(job, {cmd, ""}), TranscodeError);
    CHECK_THROWS_AS(run_transcode(job, {"true", ""}), TranscodeError);
  }
  SUBCASE("content-addressed cache") {
    TranscodeCache cache(dir / "cache");
    const Transcoder copy{"cp {in} {out}", ""};
    const ByteStream first = cache.get(job, copy);
    const ByteStream second = cache.get(job, copy);
    CHECK(first.bytes == second.bytes);
    CHECK(cache.misses() == 1);
    CHECK(cache.hits() == 1);
    TranscodeJob other = job;
    other.bitrate_bps = 20000;
    CHECK(cache.key(other, copy) != cache.key(job, copy));
    cache.get(other, copy);
    CHECK(cache.misses() == 2);
  }
  SUBCASE("parallel jobs keep order") {
    std::vector<TranscodeJob> jobs;
    for (int i = 0; i < 4; ++i) {
      TranscodeJob j = job;
      j.output_path = dir / ("p" + std::to_string(i) + ".mp3");
      jobs.push_back(j);
    }
    const auto outs = run_transcodes(jobs, {"cp {in} {out}", ""}, 3);
    REQUIRE(outs.size() == 4);
    for (const auto& o : outs) CHECK(o.size() == 5 * 417);
  }
}

TEST_CASE("ffmpeg transcodes are deterministic and rate-dependent") {
  const std::string ffmpeg = testing::ffmpeg_path();
  if (ffmpeg.empty()) {
    MESSAGE("no ffmpeg configured; transcoding checks not run");
    return;
  }
  testing::TempDir dir;
  const Transcoder mp3{default_encoder_template(FormatKind::kMp3, ffmpeg), ""};
  const auto input = testing::fixture_dir() / "clip_5s_32k.mp3";
  TranscodeJob job{input, FormatKind::kMp3, 20000, 22050, dir / "a.mp3"};
  const ByteStream a = run_transcode(job, mp3);
  job.output_path = dir / "b.mp3";
  const ByteStream b = run_transcode(job, mp3);
  CHECK(a.bytes == b.bytes);
  job.bitrate_bps = 32000;
  job.output_path = dir / "c.mp3";
  const ByteStream c = run_transcode(job, mp3);
  CHECK(parse_blocks(c).size() >= 1);
  const double disagreement = byte_disagreement(a, c);
  MESSAGE("20 vs 32 kbps payload disagreement: " << disagreement);
  CHECK(disagreement >= 0.5);

  const Transcoder opus{default_encoder_template(FormatKind::kOpusOgg, ffmpeg), ""};
  TranscodeJob oj{input, FormatKind::kOpusOgg, 29000, 48000, dir / "d.opus"};
  const ByteStream d = run_transcode(oj, opus);
  CHECK(d.format == FormatKind::kOpusOgg);
  CHECK(parse_blocks(d).size() > 100);
}
