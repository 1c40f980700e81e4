#include "tempest/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tempest/errors.hpp"
#include "tempest/harness.hpp"
#include "tempest/mp3.hpp"
#include "tempest/parsers.hpp"
#include "tempest/synth.hpp"

namespace tempest::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

FormatKind format_option(const std::string& name) {
  return name.empty() ? FormatKind::kUnknown : parse_format(name);
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// Train config from --config; the model's class count and task default to
// the manifest's when the file leaves them out.
harness::TrainConfig train_config(const std::string& path, const harness::Manifest* manifest) {
  json j = path.empty() ? json::object() : read_json_file(path);
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (manifest != nullptr) {
    json& m = j["model"];
    if (m.is_null()) m = json::object();
    if (!m.contains("num_classes")) m["num_classes"] = manifest->num_classes;
    if (!m.contains("task")) m["task"] = manifest->task == model::Task::kMultiLabel ? "multi_label" : "single_label";
  }
  return harness::train_config_from_json(j);
}

std::string fixed(double v, int digits = 6) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

// ---- inspect ----

struct InspectArgs {
  std::string file;
  std::string format;
  bool no_strip = false;
  int l_prime = 1;
  int target_chunk = 144;
};

void inspect(const InspectArgs& a, bool as_json, std::ostream& out) {
  const ByteStream s = open_stream(a.file, !a.no_strip, format_option(a.format));
  const BlockSequence seq = parse_blocks(s, jpeg::ScanOptions{static_cast<std::size_t>(a.target_chunk)});
  std::size_t structural = 0;
  for (const auto& r : seq.structural) structural += r.bytes.size();
  std::optional<double> tps;
  if (seq.total_duration_s > 0.0) tps = compute_tps(seq, a.l_prime);
  const double avg = seq.average_block_length();
  std::optional<double> tbr;
  if (avg > 0.0) tbr = compute_tbr(a.l_prime, avg);

  if (as_json) {
    json summary = {{"record", "summary"},       {"file", a.file},
                    {"format", std::string(to_string(seq.source_format))}, {"stream_bytes", seq.stream_length},
                    {"blocks", seq.size()},      {"duration_s", seq.total_duration_s},
                    {"average_block_length", avg}, {"structural_bytes", structural},
                    {"warnings", seq.warnings},  {"l_prime", a.l_prime}};
    summary["tps"] = tps ? json(*tps) : json(nullptr);
    summary["tbr"] = tbr ? json(*tbr) : json(nullptr);
    out << summary.dump() << '\n';
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const auto& b = seq.blocks[i];
      out << json{{"record", "block"}, {"index", i}, {"offset", b.offset}, {"length", b.length},
                  {"duration_s", b.duration_s}, {"extents", b.extents.size()}}
                 .dump()
          << '\n';
    }
    return;
  }
  out << "file: " << a.file << '\n'
      << "format: " << to_string(seq.source_format) << '\n'
      << "stream bytes: " << seq.stream_length << '\n'
      << "blocks: " << seq.size() << '\n'
      << "duration s: " << fixed(seq.total_duration_s) << '\n'
      << "average block length: " << fixed(avg) << '\n'
      << "structural bytes: " << structural << '\n'
      << "warnings: " << seq.warnings << '\n'
      << "TPS (L'=" << a.l_prime << "): " << (tps ? fixed(*tps) : "n/a") << '\n'
      << "TBR (L'=" << a.l_prime << "): " << (tbr ? fixed(*tbr) : "n/a") << '\n'
      << "index\toffset\tlength\tduration_ms\n";
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto& b = seq.blocks[i];
    out << i << '\t' << b.offset << '\t' << b.length << '\t' << fixed(b.duration_s * 1000.0) << '\n';
  }
}

// ---- tokenize ----

struct TokenizeArgs {
  std::vector<std::string> files;
  std::string out;
  std::string format;
  int l_max = 144;
  int max_blocks = 64;
  int label = -1;
  int num_classes = 0;
};

void tokenize(const TokenizeArgs& a, bool as_json, std::ostream& out) {
  if (a.label >= 0 && a.num_classes <= a.label) throw ConfigError("--label needs --num-classes greater than it");
  const bool many = a.files.size() > 1;
  if (many) fs::create_directories(a.out);
  for (const auto& file : a.files) {
    const ByteStream s = open_stream(file, true, format_option(a.format));
    TokenizeStats stats;
    TokenMatrix m = tokenize_stream(parse_blocks(s), a.l_max, a.max_blocks, &stats);
    if (a.label >= 0) m.label = harness::label_vector({a.label}, a.num_classes);
    const fs::path target = many ? fs::path(a.out) / (fs::path(file).stem().string() + ".tmtk") : fs::path(a.out);
    write_token_matrix(target, m);
    if (as_json) {
      out << json{{"file", file}, {"out", target.string()}, {"rows", m.num_rows()}, {"l_max", a.l_max},
                  {"truncated_blocks", stats.truncated_blocks}}
                 .dump()
          << '\n';
    } else {
      out << file << " -> " << target.string() << ": " << m.num_rows() << " x " << a.l_max << " tokens, "
          << stats.truncated_blocks << " truncated blocks\n";
    }
  }
}

// ---- synth ----

struct SynthArgs {
  std::string kind = "mp3";
  std::string out;
  std::uint64_t seed = 0;
  int count = 10;
  int bitrate = 128000;
  int samplerate = 44100;
  int frames_per_file = 20;
};

void synthesize(const SynthArgs& a, bool as_json, std::ostream& out) {
  fs::path written = a.out;
  if (a.kind == "mp3") {
    save_bytes(a.out, mp3::synth_stream(a.count, a.bitrate, a.samplerate, a.seed).bytes);
  } else if (a.kind == "opus") {
    save_bytes(a.out, synth::opus_stream(a.count, a.seed).bytes);
  } else if (a.kind == "jpeg") {
    save_bytes(a.out, synth::jpeg_stream(a.count, a.seed).bytes);
  } else {
    written = synth::write_mp3_dataset(a.out, a.count, a.frames_per_file, a.seed);
  }
  if (as_json) {
    out << json{{"kind", a.kind}, {"out", written.string()}, {"seed", a.seed}}.dump() << '\n';
  } else {
    out << "wrote " << written.string() << '\n';
  }
}

// ---- train / eval / infer ----

struct DataArgs {
  std::string manifest;
  std::string split;
  int fold = 0;
  std::string bitrates;
  std::string format;
  std::string cache_dir;
};

harness::LoadOptions load_options(const DataArgs& d, int l_max, int max_blocks) {
  harness::LoadOptions o;
  o.l_max = l_max;
  o.max_blocks = max_blocks;
  o.format = format_option(d.format);
  if (!d.bitrates.empty()) {
    o.bitrates = augment::parse_bitrates(d.bitrates);
    o.transcode_codec = o.format == FormatKind::kOpusOgg ? FormatKind::kOpusOgg : FormatKind::kMp3;
    if (o.transcode_codec == FormatKind::kOpusOgg) o.samplerate_hz = 48000;
    o.transcoder = augment::transcoder_from_env(o.transcode_codec);
    o.cache_dir = d.cache_dir;
  }
  return o;
}

harness::Dataset load(const harness::Manifest& m, const std::vector<harness::ManifestEntry>& entries,
                      const harness::LoadOptions& o, std::ostream& err) {
  harness::LoadResult r = harness::load_entries(m, entries, o);
  for (const auto& w : r.warnings) err << "warning: skipped " << one_line(w) << '\n';
  return std::move(r.data);
}

struct TrainArgs {
  DataArgs data;
  std::string config;
  std::string out;
  std::string metrics;
  std::string eval_split;
  std::optional<std::uint64_t> seed;
};

void train(const TrainArgs& a, bool as_json, std::ostream& out, std::ostream& err) {
  const harness::Manifest manifest = harness::load_manifest(a.data.manifest);
  harness::TrainConfig config = train_config(a.config, &manifest);
  if (a.seed) config.seed = *a.seed;
  if (!a.data.bitrates.empty()) config.bitrates = augment::parse_bitrates(a.data.bitrates);

  std::vector<harness::ManifestEntry> train_entries;
  std::vector<harness::ManifestEntry> eval_entries;
  if (a.data.fold > 0) {
    harness::FoldSplit s = harness::fold_split(manifest, a.data.fold);
    train_entries = std::move(s.train);
    eval_entries = std::move(s.eval);
  } else {
    train_entries = manifest.split(a.data.split.empty() ? "train" : a.data.split);
    if (!a.eval_split.empty()) eval_entries = manifest.split(a.eval_split);
  }
  const auto opts = load_options(a.data, config.model.l_max, config.max_blocks);
  const harness::Dataset train_data = load(manifest, train_entries, opts, err);
  harness::Dataset eval_data;
  if (!eval_entries.empty()) eval_data = load(manifest, eval_entries, opts, err);

  harness::TrainOptions topts;
  topts.checkpoint_path = a.out;
  topts.metrics_path = a.metrics;
  if (!eval_data.empty()) topts.validation = &eval_data;
  const harness::TrainResult result = harness::train(train_data, config, topts);
  for (const auto& rec : result.log) {
    if (as_json) {
      out << harness::to_json(rec).dump() << '\n';
    } else {
      out << "step " << rec.step << "  L_r " << fixed(rec.reconstruction) << "  L_c " << fixed(rec.classification)
          << "  train_acc " << fixed(rec.train_accuracy, 4);
      if (rec.eval_metric) out << "  eval " << fixed(*rec.eval_metric, 4);
      out << '\n';
    }
  }
  if (!as_json) out << "checkpoint: " << a.out << " (" << model::param_count(config.model) << " parameters)\n";
}

struct EvalArgs {
  DataArgs data;
  std::string checkpoint;
  bool ensemble = false;
  bool logit_mean = false;
  int max_blocks = 64;
};

void evaluate(const EvalArgs& a, bool as_json, std::ostream& out, std::ostream& err) {
  const model::Checkpoint ck = model::load_checkpoint(a.checkpoint);
  const harness::Manifest manifest = harness::load_manifest(a.data.manifest);
  if (manifest.num_classes != ck.config.num_classes) {
    throw ConfigError("manifest has " + std::to_string(manifest.num_classes) + " classes, checkpoint " +
                      std::to_string(ck.config.num_classes));
  }
  const auto entries = a.data.fold > 0 ? harness::fold_split(manifest, a.data.fold).eval
                                        : manifest.split(a.data.split.empty() ? "eval" : a.data.split);
  if (entries.empty()) throw DatasetError("no entries in the selected split");
  const harness::Dataset data = load(manifest, entries, load_options(a.data, ck.config.l_max, a.max_blocks), err);
  harness::EvalOptions eo;
  eo.variants = a.ensemble ? harness::VariantUse::kEnsemble : harness::VariantUse::kFirst;
  eo.aggregation = a.logit_mean ? harness::Aggregation::kLogitMean : harness::Aggregation::kProbabilityMean;
  const harness::EvalReport r = harness::evaluate(data, ck.params, ck.config, eo);
  if (as_json) {
    out << harness::to_json(r).dump() << '\n';
    return;
  }
  out << r.metric << ": " << fixed(r.value) << " over " << r.count << " examples\n";
  for (const auto& [fold, v] : r.per_fold) out << "fold " << fold << ": " << fixed(v) << '\n';
  if (r.fold_mean) out << "fold mean: " << fixed(*r.fold_mean) << '\n';
}

struct InferArgs {
  std::vector<std::string> files;
  std::string checkpoint;
  std::string bitrates;
  std::string format;
  std::string cache_dir;
  bool logit_mean = false;
  int max_blocks = 64;
};

void infer(const InferArgs& a, bool as_json, std::ostream& out) {
  const model::Checkpoint ck = model::load_checkpoint(a.checkpoint);
  std::vector<ByteStream> streams;
  if (!a.bitrates.empty()) {
    // Each input is re-encoded at every rate.
    const FormatKind codec = format_option(a.format) == FormatKind::kOpusOgg ? FormatKind::kOpusOgg : FormatKind::kMp3;
    const augment::BitrateSet rates = augment::parse_bitrates(a.bitrates);
    rates.validate(codec);
    augment::TranscodeCache cache(a.cache_dir.empty() ? fs::temp_directory_path() / "tempest-transcode-cache"
                                                      : fs::path(a.cache_dir));
    const augment::Transcoder transcoder = augment::transcoder_from_env(codec);
    for (const auto& f : a.files) {
      for (int rate : rates.rates_bps) {
        streams.push_back(cache.get({f, codec, rate, codec == FormatKind::kOpusOgg ? 48000 : 22050, {}}, transcoder));
      }
    }
  } else {
    for (const auto& f : a.files) streams.push_back(open_stream(f, true, format_option(a.format)));
  }
  const harness::Prediction p = harness::multirate_infer(
      streams, ck, a.logit_mean ? harness::Aggregation::kLogitMean : harness::Aggregation::kProbabilityMean,
      a.max_blocks);
  if (as_json) {
    out << json{{"streams", streams.size()}, {"probs", p.probs}, {"predicted", p.predicted}}.dump() << '\n';
    return;
  }
  out << "streams: " << streams.size() << '\n' << "predicted: " << p.predicted << '\n' << "probs:";
  for (double v : p.probs) out << ' ' << fixed(v);
  out << '\n';
}

// ---- bench ----

struct BenchArgs {
  std::string config;
  double seconds = 1.0;
  double blocks_per_second = 31.0;
  double avg_block_bytes = 0.0;
  int l_prime = 0;
};

void run_bench(const BenchArgs& a, bool as_json, std::ostream& out) {
  model::ModelConfig config = train_config(a.config, nullptr).model;
  if (a.l_prime > 0) config.l_prime = a.l_prime;
  const harness::BenchReport r = harness::bench(config, a.seconds, a.blocks_per_second, a.avg_block_bytes);
  if (as_json) {
    out << harness::to_json(r).dump() << '\n';
    return;
  }
  out << "blocks: " << r.blocks << '\n'
      << "tokens: " << r.tokens << '\n'
      << "attention entries: " << r.attention_entries << '\n'
      << "flops: " << fixed(r.flops, 8) << '\n'
      << "params: " << r.params << '\n'
      << "tps: " << fixed(r.tps) << '\n'
      << "tbr: " << fixed(r.tbr) << '\n'
      << "byte baseline tokens: " << r.byte_baseline_tokens << '\n'
      << "byte baseline attention entries: " << r.byte_baseline_attention_entries << '\n'
      << "byte baseline flops: " << fixed(r.byte_baseline_flops, 8) << '\n';
}

void add_data_options(CLI::App* cmd, DataArgs& d, bool manifest_required) {
  auto* m = cmd->add_option("--manifest", d.manifest, "Dataset manifest (JSON lines)")->check(CLI::ExistingFile);
  if (manifest_required) m->required();
  cmd->add_option("--split", d.split, "Manifest split to use");
  cmd->add_option("--fold", d.fold, "Hold out this fold (overrides --split)")->check(CLI::PositiveNumber);
  cmd->add_option("--bitrates", d.bitrates, "Transcode each file at these rates, e.g. 20k,26k,32k");
  cmd->add_option("--format", d.format, "Force the input format")->check(CLI::IsMember({"mp3", "opus", "jpeg"}));
  cmd->add_option("--cache-dir", d.cache_dir, "Transcode cache directory");
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Compressed-domain classification toolkit"};
  app.name("tempest");
  app.require_subcommand(1);
  bool as_json = false;
  app.add_flag("--json", as_json, "Machine-readable output, one JSON record per line");
  app.set_version_flag("--version", "tempest 0.1.0");

  InspectArgs inspect_args;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print the block table, TPS and TBR of a file");
  inspect_cmd->add_option("file", inspect_args.file, "Input file")->required()->check(CLI::ExistingFile);
  inspect_cmd->add_option("--format", inspect_args.format, "Force the input format")
      ->check(CLI::IsMember({"mp3", "opus", "jpeg"}));
  inspect_cmd->add_flag("--no-strip", inspect_args.no_strip, "Keep ID3 tags");
  inspect_cmd->add_option("--l-prime", inspect_args.l_prime, "Tokens per block for TPS/TBR")->check(CLI::PositiveNumber);
  inspect_cmd->add_option("--chunk", inspect_args.target_chunk, "JPEG chunk size without restart markers")
      ->check(CLI::PositiveNumber);

  TokenizeArgs tok_args;
  auto* tok_cmd = app.add_subcommand("tokenize", "Write token matrices");
  tok_cmd->add_option("files", tok_args.files, "Input files")->required()->check(CLI::ExistingFile);
  tok_cmd->add_option("--out", tok_args.out, "Output file (one input) or directory")->required();
  tok_cmd->add_option("--format", tok_args.format, "Force the input format")->check(CLI::IsMember({"mp3", "opus", "jpeg"}));
  tok_cmd->add_option("--l-max", tok_args.l_max, "Tokens per block")->check(CLI::PositiveNumber);
  tok_cmd->add_option("--max-blocks", tok_args.max_blocks, "Rows kept per file")->check(CLI::PositiveNumber);
  tok_cmd->add_option("--label", tok_args.label, "Class index stored with the matrix")->check(CLI::NonNegativeNumber);
  tok_cmd->add_option("--num-classes", tok_args.num_classes, "Class count for --label")->check(CLI::PositiveNumber);

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Emit synthetic test streams or a toy dataset");
  synth_cmd->add_option("--kind", synth_args.kind, "mp3, opus, jpeg or dataset")
      ->check(CLI::IsMember({"mp3", "opus", "jpeg", "dataset"}));
  synth_cmd->add_option("--out", synth_args.out, "Output file (dataset: directory)")->required();
  synth_cmd->add_option("--seed", synth_args.seed, "Random seed");
  synth_cmd->add_option("--count", synth_args.count, "Frames, packets, restart markers or files")
      ->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--bitrate", synth_args.bitrate, "MP3 bit rate (bps)");
  synth_cmd->add_option("--samplerate", synth_args.samplerate, "MP3 sample rate (Hz)");
  synth_cmd->add_option("--frames-per-file", synth_args.frames_per_file, "Dataset: frames per file")
      ->check(CLI::PositiveNumber);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train on a manifest and write a checkpoint");
  add_data_options(train_cmd, train_args.data, true);
  train_cmd->add_option("--config", train_args.config, "Training config (JSON)")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train_args.out, "Checkpoint path")->required();
  train_cmd->add_option("--metrics", train_args.metrics, "Metrics log (JSON lines)");
  train_cmd->add_option("--eval-split", train_args.eval_split, "Split scored at every interval");
  train_cmd->add_option("--seed", train_args.seed, "Random seed (overrides the config)");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a manifest split");
  add_data_options(eval_cmd, eval_args.data, true);
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint path")->required()->check(CLI::ExistingFile);
  eval_cmd->add_flag("--ensemble", eval_args.ensemble, "Aggregate predictions over every bit rate");
  eval_cmd->add_flag("--logit-mean", eval_args.logit_mean, "Average logits instead of probabilities");
  eval_cmd->add_option("--max-blocks", eval_args.max_blocks, "Rows kept per file")->check(CLI::PositiveNumber);

  InferArgs infer_args;
  auto* infer_cmd = app.add_subcommand("infer-multirate", "Aggregate predictions over several encodings");
  infer_cmd->add_option("files", infer_args.files, "Input streams")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--checkpoint", infer_args.checkpoint, "Checkpoint path")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--bitrates", infer_args.bitrates, "Re-encode each input at these rates");
  infer_cmd->add_option("--format", infer_args.format, "Force the input format or pick the transcode codec")
      ->check(CLI::IsMember({"mp3", "opus", "jpeg"}));
  infer_cmd->add_option("--cache-dir", infer_args.cache_dir, "Transcode cache directory");
  infer_cmd->add_flag("--logit-mean", infer_args.logit_mean, "Average logits instead of probabilities");
  infer_cmd->add_option("--max-blocks", infer_args.max_blocks, "Rows kept per stream")->check(CLI::PositiveNumber);

  BenchArgs bench_args;
  auto* bench_cmd = app.add_subcommand("bench", "Report tokens, attention size, FLOPs and parameters");
  bench_cmd->add_option("--config", bench_args.config, "Training config (JSON); its model is used")
      ->check(CLI::ExistingFile);
  bench_cmd->add_option("--seconds", bench_args.seconds, "Clip length")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--blocks-per-second", bench_args.blocks_per_second, "Blocks per second")
      ->check(CLI::PositiveNumber);
  bench_cmd->add_option("--avg-block-bytes", bench_args.avg_block_bytes, "Average block size (default L_max)")
      ->check(CLI::NonNegativeNumber);
  bench_cmd->add_option("--l-prime", bench_args.l_prime, "Tokens per block")->check(CLI::PositiveNumber);

  for (auto* cmd : app.get_subcommands({})) cmd->add_flag("--json", as_json, "Machine-readable output");

  std::vector<const char*> argv = {"tempest"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "usage error: " << one_line(e.what()) << " (see tempest --help)\n";
    return kExitUsage;
  }

  try {
    if (inspect_cmd->parsed()) inspect(inspect_args, as_json, out);
    if (tok_cmd->parsed()) tokenize(tok_args, as_json, out);
    if (synth_cmd->parsed()) synthesize(synth_args, as_json, out);
    if (train_cmd->parsed()) train(train_args, as_json, out, err);
    if (eval_cmd->parsed()) evaluate(eval_args, as_json, out, err);
    if (infer_cmd->parsed()) infer(infer_args, as_json, out);
    if (bench_cmd->parsed()) run_bench(bench_args, as_json, out);
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, out, err);
}

}  // namespace tempest::cli
