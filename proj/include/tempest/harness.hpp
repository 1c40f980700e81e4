#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tempest/augment.hpp"
#include "tempest/jpeg.hpp"
#include "tempest/model.hpp"

namespace tempest::harness {

// ---- manifests ----

struct ManifestEntry {
  std::string path;         // relative paths resolve against Manifest::base_dir
  std::vector<int> labels;  // one entry for single-label tasks
  std::string split;
  std::optional<int> fold;
};

// JSON lines. An optional first record {"num_classes": K, "task":
// "single_label"|"multi_label"} sets the header; otherwise the class count
// is one past the largest label. Entries: {"path", "label" or "labels",
// "split", "fold"?}.
struct Manifest {
  std::vector<ManifestEntry> entries;
  int num_classes = 0;
  model::Task task = model::Task::kSingleLabel;
  std::filesystem::path base_dir;

  // Throws DatasetError: label out of range, empty labels, several labels on
  // a single-label task, or a path repeated within one split.
  void validate() const;
  std::vector<ManifestEntry> split(const std::string& name) const;
  std::filesystem::path resolve(const ManifestEntry& e) const;
  std::vector<int> folds() const;  // distinct fold ids, ascending
};

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

// One-hot (single-label) or multi-hot target.
std::vector<double> label_vector(const std::vector<int>& labels, int num_classes);

struct FoldSplit {
  std::vector<ManifestEntry> train;
  std::vector<ManifestEntry> eval;
};
// Entries of fold k are held out; entries without a fold always train.
FoldSplit fold_split(const Manifest& manifest, int fold);

// ---- datasets ----

// One labelled item. variants[r] is the item at encoding r (a bit rate, or
// a synthetic dialect); every variant carries the same label.
struct Example {
  std::string id;
  std::vector<TokenMatrix> variants;
  int fold = 0;

  const std::vector<double>& label() const { return *variants.front().label; }
};
using Dataset = std::vector<Example>;

struct LoadOptions {
  int l_max = 144;
  int max_blocks = 64;
  FormatKind format = FormatKind::kUnknown;  // kUnknown: detect per file
  bool strip_metadata = true;
  jpeg::ScanOptions jpeg;
  // When set, each file is transcoded at every rate (through the cache) and
  // the results become the example's variants.
  std::optional<augment::BitrateSet> bitrates;
  FormatKind transcode_codec = FormatKind::kMp3;
  int samplerate_hz = 22050;
  augment::Transcoder transcoder;
  std::filesystem::path cache_dir;
};

struct LoadResult {
  Dataset data;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;  // one line per skipped file
};

// Tokenizes entries. Files that fail to load, parse or transcode are
// skipped and counted. Throws DatasetError when every file is skipped.
LoadResult load_entries(const Manifest& manifest, const std::vector<ManifestEntry>& entries,
                        const LoadOptions& options);

// Two-class byte-pattern data: class 0 draws bytes from 0..127, class 1
// from 128..255, each byte replaced by a uniform one with probability
// noise. Dialect d > 0 passes every byte through the bijection
// b -> (167 * b + 13 * d) mod 256, standing in for another encoding of the
// same content.
struct SyntheticOptions {
  int count = 64;
  int blocks = 4;
  int l_max = 6;
  double noise = 0.0;
  int dialects = 1;
  int folds = 5;
  std::uint64_t seed = 0;
};
Dataset synthetic_dataset(const SyntheticOptions& options);
std::uint8_t dialect_byte(std::uint8_t b, int dialect);

// ---- training ----

struct TrainConfig {
  model::ModelConfig model;
  int batch_size = 8;
  int steps = 500;
  double learning_rate = 1e-3;
  std::string schedule = "cosine";  // "cosine" or "constant"
  int warmup_steps = 0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  std::uint64_t seed = 0;
  bool cutmix = true;
  double cutmix_probability = 0.5;
  double cutmix_max_fraction = 0.5;
  int eval_interval = 50;
  int max_blocks = 64;
  std::optional<augment::BitrateSet> bitrates;

  // Throws ConfigError.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
// Keys absent from j keep their defaults; unknown keys throw ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

// Learning rate at a 0-based step.
double learning_rate_at(const TrainConfig& c, int step);

// Decoupled weight decay Adam. Decay applies to matrices with more than one
// row and column; biases, gains and vectors are not decayed.
class AdamW {
 public:
  AdamW(const model::ModelParams& params, const TrainConfig& config);
  void step(model::ModelParams& params, const std::vector<model::Matrix>& grads, double lr);
  int steps_taken() const { return t_; }

 private:
  std::vector<model::Matrix> m_;
  std::vector<model::Matrix> v_;
  std::vector<bool> decay_;
  double beta1_;
  double beta2_;
  double eps_;
  double weight_decay_;
  int t_ = 0;
};

struct MetricRecord {
  int step = 0;
  double reconstruction = 0.0;  // mean L_r over the interval
  double classification = 0.0;  // mean L_c over the interval
  double train_accuracy = 0.0;  // argmax agreement over the interval
  double learning_rate = 0.0;
  std::optional<double> eval_metric;
};
nlohmann::json to_json(const MetricRecord& r);

struct TrainOptions {
  const Dataset* validation = nullptr;  // scored at every interval when set
  std::filesystem::path checkpoint_path;
  std::filesystem::path metrics_path;  // JSON lines
  std::optional<model::ModelParams> initial;
};

struct TrainResult {
  model::ModelParams params;  // rounded to float, equal to the checkpoint
  std::vector<MetricRecord> log;
};

// Deterministic given config.seed. Throws DatasetError for empty data,
// ConfigError when labels do not match config.model.num_classes.
TrainResult train(const Dataset& data, const TrainConfig& config, const TrainOptions& options = {});

// ---- evaluation ----

struct Prediction {
  std::vector<double> probs;
  int predicted = 0;
};

enum class Aggregation : std::uint8_t { kProbabilityMean, kLogitMean };

// Softmax (single-label) or per-class sigmoid (multi-label).
std::vector<double> to_probabilities(std::span<const double> logits, model::Task task);

// Elementwise mean of equal-length vectors. Inputs are ordered before
// summing and the mean is taken as first + sum(v - first) / K, so the
// result is exactly invariant to input order and exact for repeated inputs.
std::vector<double> mean_of(std::vector<std::vector<double>> vectors);

Prediction predict(const TokenMatrix& m, const model::ModelParams& params, const model::ModelConfig& config);

// Per-stream class probabilities aggregated by mean (or logits averaged
// before the link function). Throws EmptyInput for an empty list.
Prediction multirate_infer(std::span<const TokenMatrix> streams, const model::ModelParams& params,
                           const model::ModelConfig& config, Aggregation aggregation = Aggregation::kProbabilityMean);
Prediction multirate_infer(const std::vector<ByteStream>& streams, const model::Checkpoint& checkpoint,
                           Aggregation aggregation = Aggregation::kProbabilityMean, int max_blocks = 64,
                           const jpeg::ScanOptions& jpeg_options = {});

struct EvalReport {
  std::string metric;  // "accuracy" or "mAP"
  double value = 0.0;
  std::size_t count = 0;
  std::map<int, double> per_fold;  // when examples carry fold ids
  std::optional<double> fold_mean;
};
nlohmann::json to_json(const EvalReport& r);

enum class VariantUse : std::uint8_t { kFirst, kEnsemble };

struct EvalOptions {
  VariantUse variants = VariantUse::kFirst;
  std::optional<int> variant;  // score one specific variant
  Aggregation aggregation = Aggregation::kProbabilityMean;
};

// Top-1 accuracy against the label's argmax, or mean average precision.
// Throws ConfigError when labels do not have config.num_classes entries,
// EmptyInput for an empty set.
EvalReport evaluate(const Dataset& data, const model::ModelParams& params, const model::ModelConfig& config,
                    const EvalOptions& options = {});

double accuracy(const std::vector<std::vector<double>>& scores, const std::vector<std::vector<double>>& labels);
double mean_average_precision(const std::vector<std::vector<double>>& scores,
                              const std::vector<std::vector<double>>& labels);

struct CrossValidation {
  std::map<int, double> per_fold;
  double mean = 0.0;
};
// Trains on every fold but one and scores the held-out fold, for each fold.
CrossValidation cross_validate(const Dataset& data, const TrainConfig& config);

// ---- bench ----

struct BenchReport {
  int blocks = 0;
  int tokens = 0;                       // blocks * L' + [CLS]
  std::int64_t attention_entries = 0;   // tokens^2 per head per layer
  double flops = 0.0;
  std::int64_t params = 0;
  double tps = 0.0;
  double tbr = 0.0;                     // L' / average block bytes
  int byte_baseline_tokens = 0;         // min(bytes, cap) + [CLS]
  std::int64_t byte_baseline_attention_entries = 0;
  double byte_baseline_flops = 0.0;
};
nlohmann::json to_json(const BenchReport& r);

// Throws ConfigError for non-positive inputs. avg_block_bytes <= 0 means l_max.
BenchReport bench(const model::ModelConfig& config, double clip_seconds, double blocks_per_second,
                  double avg_block_bytes = 0.0);

}  // namespace tempest::harness
