#include <doctest.h>

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "support.hpp"
#include "tempest/cli.hpp"
#include "tempest/harness.hpp"
#include "tempest/parsers.hpp"
#include "tempest/tokenizer.hpp"

using namespace tempest;
using nlohmann::json;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome call(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

bool has_line(const std::string& text, const std::string& line) {
  for (const auto& l : lines_of(text)) {
    if (l == line) return true;
  }
  return false;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const char* kTinyConfig = R"({"model": {"width": 8, "ff_dim": 16, "embed_layers": 1, "classify_layers": 1,
  "heads": 2, "l_max": 144}, "steps": 40, "batch_size": 4, "learning_rate": 0.003, "eval_interval": 20})";

}  // namespace

TEST_CASE("cli inspect matches the parser") {
  const auto file = (testing::fixture_dir() / "clip_5s_32k.mp3").string();
  const BlockSequence seq = parse_blocks(open_stream(file));

  const Outcome r = call({"inspect", file});
  REQUIRE(r.code == cli::kExitOk);
  CHECK(has_line(r.out, "format: mp3"));
  CHECK(has_line(r.out, "blocks: " + std::to_string(seq.size())));
  CHECK(has_line(r.out, "stream bytes: " + std::to_string(seq.stream_length)));
  // header + column titles + one row per block
  CHECK(lines_of(r.out).size() == 11 + seq.size());

  const Outcome j = call({"inspect", file, "--json", "--l-prime", "2"});
  REQUIRE(j.code == cli::kExitOk);
  const auto records = lines_of(j.out);
  REQUIRE(records.size() == 1 + seq.size());
  const json summary = json::parse(records[0]);
  CHECK(summary["record"] == "summary");
  CHECK(summary["blocks"].get<std::size_t>() == seq.size());
  CHECK(summary["tps"].get<double>() == doctest::Approx(compute_tps(seq, 2)).epsilon(1e-12));
  CHECK(summary["tbr"].get<double>() == doctest::Approx(2.0 / seq.average_block_length()).epsilon(1e-12));
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const json b = json::parse(records[i + 1]);
    CHECK(b["offset"].get<std::size_t>() == seq.blocks[i].offset);
    CHECK(b["length"].get<std::size_t>() == seq.blocks[i].length);
  }
}

TEST_CASE("cli inspect prints n/a TPS for images") {
  const auto jpegs = testing::fixtures("jpeg");
  REQUIRE(!jpegs.empty());
  const Outcome r = call({"inspect", jpegs.front().string()});
  REQUIRE(r.code == cli::kExitOk);
  CHECK(has_line(r.out, "format: jpeg"));
  CHECK(has_line(r.out, "TPS (L'=1): n/a"));
}

TEST_CASE("cli bench reports the one-second default") {
  const Outcome r = call({"bench"});
  REQUIRE(r.code == cli::kExitOk);
  CHECK(has_line(r.out, "tokens: 32"));
  CHECK(has_line(r.out, "attention entries: 1024"));
  CHECK(has_line(r.out, "byte baseline tokens: 2017"));

  const Outcome j = call({"bench", "--json", "--l-prime", "2"});
  REQUIRE(j.code == cli::kExitOk);
  const json report = json::parse(j.out);
  CHECK(report["tokens"] == 63);
  CHECK(report["attention_entries"] == 63 * 63);
}

TEST_CASE("cli exit codes") {
  SUBCASE("no subcommand") { CHECK(call({}).code == cli::kExitUsage); }
  SUBCASE("unknown subcommand") { CHECK(call({"frobnicate"}).code == cli::kExitUsage); }
  SUBCASE("unknown flag") { CHECK(call({"bench", "--frob"}).code == cli::kExitUsage); }
  SUBCASE("bad value") { CHECK(call({"bench", "--seconds", "-1"}).code == cli::kExitUsage); }
  SUBCASE("missing file") { CHECK(call({"inspect", "/nonexistent/x.mp3"}).code == cli::kExitUsage); }
  SUBCASE("help") {
    const Outcome r = call({"--help"});
    CHECK(r.code == cli::kExitOk);
    CHECK(r.out.find("infer-multirate") != std::string::npos);
  }
  SUBCASE("runtime error is one line") {
    testing::TempDir dir;
    std::ofstream(dir / "junk.bin") << "not a media file";
    const Outcome r = call({"inspect", (dir / "junk.bin").string()});
    CHECK(r.code == cli::kExitRuntime);
    CHECK(r.err.rfind("error: ", 0) == 0);
    CHECK(lines_of(r.err).size() == 1);
  }
  SUBCASE("usage error is one line") {
    const Outcome r = call({"bench", "--frob"});
    CHECK(lines_of(r.err).size() == 1);
  }
}

TEST_CASE("cli synth streams parse") {
  testing::TempDir dir;
  REQUIRE(call({"synth", "--kind", "mp3", "--out", (dir / "a.mp3").string(), "--count", "7"}).code == 0);
  CHECK(parse_blocks(open_stream(dir / "a.mp3")).size() == 7);
  REQUIRE(call({"synth", "--kind", "opus", "--out", (dir / "a.opus").string(), "--count", "9"}).code == 0);
  CHECK(parse_blocks(open_stream(dir / "a.opus")).size() == 9);
  REQUIRE(call({"synth", "--kind", "jpeg", "--out", (dir / "a.jpg").string(), "--count", "3"}).code == 0);
  CHECK(parse_blocks(open_stream(dir / "a.jpg")).size() == 4);

  REQUIRE(call({"synth", "--kind", "mp3", "--out", (dir / "b.mp3").string(), "--seed", "5"}).code == 0);
  REQUIRE(call({"synth", "--kind", "mp3", "--out", (dir / "c.mp3").string(), "--seed", "5"}).code == 0);
  CHECK(read_text(dir / "b.mp3") == read_text(dir / "c.mp3"));
}

TEST_CASE("cli tokenize writes matrices") {
  testing::TempDir dir;
  const auto file = (testing::fixture_dir() / "clip_5s_32k.mp3").string();
  const Outcome r = call({"tokenize", file, "--out", (dir / "t.tmtk").string(), "--max-blocks", "10", "--label", "3",
                          "--num-classes", "5"});
  REQUIRE(r.code == cli::kExitOk);
  const TokenMatrix m = read_token_matrix(dir / "t.tmtk");
  CHECK(m.num_rows() == 10);
  REQUIRE(m.label.has_value());
  CHECK((*m.label)[3] == 1.0);

  CHECK(call({"tokenize", file, "--out", (dir / "u.tmtk").string(), "--label", "3"}).code == cli::kExitRuntime);
}

TEST_CASE("cli synth, train and eval end to end") {
  testing::TempDir dir;
  const auto manifest = (dir / "ds" / "manifest.jsonl").string();
  REQUIRE(call({"synth", "--kind", "dataset", "--out", (dir / "ds").string(), "--count", "16", "--frames-per-file",
                "6", "--seed", "3"})
              .code == 0);
  std::ofstream(dir / "cfg.json") << kTinyConfig;
  const auto cfg = (dir / "cfg.json").string();

  const Outcome t1 = call({"train", "--manifest", manifest, "--config", cfg, "--out", (dir / "a.ckpt").string(),
                           "--metrics", (dir / "m.jsonl").string(), "--eval-split", "eval", "--seed", "4"});
  REQUIRE(t1.code == cli::kExitOk);
  const auto metric_lines = lines_of(read_text(dir / "m.jsonl"));
  REQUIRE(metric_lines.size() == 2);
  const json last = json::parse(metric_lines.back());
  CHECK(last["step"] == 40);
  CHECK(last.contains("eval_metric"));

  const Outcome t2 = call({"train", "--manifest", manifest, "--config", cfg, "--out", (dir / "b.ckpt").string(),
                           "--eval-split", "eval", "--seed", "4"});
  REQUIRE(t2.code == cli::kExitOk);
  CHECK(read_text(dir / "a.ckpt") == read_text(dir / "b.ckpt"));

  const Outcome e = call({"--json", "eval", "--checkpoint", (dir / "a.ckpt").string(), "--manifest", manifest});
  REQUIRE(e.code == cli::kExitOk);
  const json report = json::parse(e.out);
  CHECK(report["metric"] == "accuracy");
  CHECK(report["count"] == 4);
  CHECK(report["value"].get<double>() == doctest::Approx(last["eval_metric"].get<double>()));

  const Outcome inf = call({"infer-multirate", (dir / "ds" / "item0_class0.mp3").string(),
                            (dir / "ds" / "item2_class0.mp3").string(), "--checkpoint", (dir / "a.ckpt").string(),
                            "--json"});
  REQUIRE(inf.code == cli::kExitOk);
  const json p = json::parse(inf.out);
  CHECK(p["streams"] == 2);
  CHECK(p["probs"].size() == 2);

  // Training labels must fit the configured class count.
  std::ofstream(dir / "cfg3.json") << R"({"model": {"width": 8, "ff_dim": 16, "embed_layers": 1,
    "classify_layers": 1, "heads": 2, "num_classes": 3}, "steps": 2})";
  CHECK(call({"train", "--manifest", manifest, "--config", (dir / "cfg3.json").string(), "--out",
              (dir / "c.ckpt").string()})
            .code == cli::kExitRuntime);

  // A checkpoint for another class count does not fit this manifest.
  std::string text = read_text(manifest);
  text.replace(0, text.find('\n'), R"({"num_classes":3,"task":"single_label"})");
  std::ofstream(dir / "ds" / "three.jsonl") << text;
  REQUIRE(call({"train", "--manifest", (dir / "ds" / "three.jsonl").string(), "--config",
                (dir / "cfg3.json").string(), "--out", (dir / "c.ckpt").string()})
              .code == cli::kExitOk);
  CHECK(call({"eval", "--checkpoint", (dir / "c.ckpt").string(), "--manifest", manifest}).code == cli::kExitRuntime);

  std::ofstream(dir / "bad.json") << R"({"stepz": 3})";
  CHECK(call({"train", "--manifest", manifest, "--config", (dir / "bad.json").string(), "--out",
              (dir / "d.ckpt").string()})
            .code == cli::kExitRuntime);
}

TEST_CASE("cli train skips unreadable files with a warning") {
  testing::TempDir dir;
  REQUIRE(call({"synth", "--kind", "dataset", "--out", (dir / "ds").string(), "--count", "8", "--frames-per-file",
                "4"})
              .code == 0);
  std::ofstream(dir / "ds" / "manifest.jsonl", std::ios::app)
      << R"({"path": "missing.mp3", "label": 0, "split": "train"})" << '\n';
  std::ofstream(dir / "cfg.json") << kTinyConfig;
  const Outcome r = call({"train", "--manifest", (dir / "ds" / "manifest.jsonl").string(), "--config",
                          (dir / "cfg.json").string(), "--out", (dir / "a.ckpt").string()});
  CHECK(r.code == cli::kExitOk);
  CHECK(r.err.find("warning: skipped") != std::string::npos);
  CHECK(r.err.find("missing.mp3") != std::string::npos);
}
