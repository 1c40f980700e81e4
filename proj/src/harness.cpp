#include "tempest/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "tempest/errors.hpp"
#include "tempest/parsers.hpp"

namespace tempest::harness {

namespace fs = std::filesystem;
using nlohmann::json;
using model::Matrix;
using model::Task;

namespace {

int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::string task_name(Task t) { return t == Task::kMultiLabel ? "multi_label" : "single_label"; }

Task parse_task(const std::string& s) {
  if (s == "single_label") return Task::kSingleLabel;
  if (s == "multi_label") return Task::kMultiLabel;
  throw DatasetError("task must be single_label or multi_label, got '" + s + "'");
}

void check_labels(const Dataset& data, const model::ModelConfig& config) {
  for (const auto& ex : data) {
    if (ex.variants.empty()) throw DatasetError("example " + ex.id + " has no variants");
    for (const auto& v : ex.variants) {
      if (!v.label) throw LabelError("example " + ex.id + " has no label");
      if (static_cast<int>(v.label->size()) != config.num_classes) {
        throw ConfigError("example " + ex.id + " has " + std::to_string(v.label->size()) +
                          " classes, model expects " + std::to_string(config.num_classes));
      }
      if (v.row_length() != config.l_max) {
        throw ConfigError("example " + ex.id + " rows have " + std::to_string(v.row_length()) +
                          " tokens, model expects " + std::to_string(config.l_max));
      }
    }
  }
}

TokenMatrix head_rows(const TokenMatrix& m, int rows) {
  TokenMatrix out;
  out.rows.assign(m.rows.begin(), m.rows.begin() + rows);
  out.label = m.label;
  out.duration_s = m.duration_s;
  return out;
}

double global_norm(const std::vector<Matrix>& grads) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

}  // namespace

// ---- manifests ----

void Manifest::validate() const {
  if (num_classes < 1) throw DatasetError("manifest needs at least one class");
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& e : entries) {
    if (e.labels.empty()) throw DatasetError("entry " + e.path + " has no label");
    if (task == Task::kSingleLabel && e.labels.size() != 1) {
      throw DatasetError("entry " + e.path + " has several labels in a single-label manifest");
    }
    for (int l : e.labels) {
      if (l < 0 || l >= num_classes) throw DatasetError("entry " + e.path + " label " + std::to_string(l) + " out of range");
    }
    if (!seen.insert({e.split, e.path}).second) throw DatasetError("path " + e.path + " repeated in split " + e.split);
  }
}

std::vector<ManifestEntry> Manifest::split(const std::string& name) const {
  std::vector<ManifestEntry> out;
  std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
               [&](const ManifestEntry& e) { return name.empty() || e.split == name; });
  return out;
}

fs::path Manifest::resolve(const ManifestEntry& e) const {
  const fs::path p(e.path);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<int> Manifest::folds() const {
  std::set<int> ids;
  for (const auto& e : entries) {
    if (e.fold) ids.insert(*e.fold);
  }
  return {ids.begin(), ids.end()};
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Manifest m;
  m.base_dir = path.parent_path();
  bool header = false;
  std::string line;
  int line_no = 0;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    try {
      const json j = json::parse(line);
      if (!j.is_object()) throw DatasetError(where + ": record is not an object");
      if (!j.contains("path")) {
        if (header || !m.entries.empty() || !j.contains("num_classes")) throw DatasetError(where + ": record has no path");
        m.num_classes = j.at("num_classes").get<int>();
        m.task = parse_task(j.value("task", std::string("single_label")));
        header = true;
        continue;
      }
      ManifestEntry e;
      e.path = j.at("path").get<std::string>();
      if (j.contains("labels")) {
        e.labels = j.at("labels").get<std::vector<int>>();
      } else if (j.contains("label")) {
        e.labels = {j.at("label").get<int>()};
      }
      e.split = j.value("split", std::string("train"));
      if (j.contains("fold") && !j.at("fold").is_null()) e.fold = j.at("fold").get<int>();
      for (int l : e.labels) max_label = std::max(max_label, l);
      m.entries.push_back(std::move(e));
    } catch (const json::exception& e) {
      throw DatasetError(where + ": " + e.what());
    }
  }
  if (!header) m.num_classes = max_label + 1;
  m.validate();
  return m;
}

void save_manifest(const fs::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out << json{{"num_classes", manifest.num_classes}, {"task", task_name(manifest.task)}}.dump() << '\n';
  for (const auto& e : manifest.entries) {
    json j = {{"path", e.path}, {"split", e.split}};
    if (e.labels.size() == 1 && manifest.task == Task::kSingleLabel) {
      j["label"] = e.labels.front();
    } else {
      j["labels"] = e.labels;
    }
    if (e.fold) j["fold"] = *e.fold;
    out << j.dump() << '\n';
  }
}

std::vector<double> label_vector(const std::vector<int>& labels, int num_classes) {
  std::vector<double> out(static_cast<std::size_t>(num_classes), 0.0);
  for (int l : labels) {
    if (l < 0 || l >= num_classes) throw LabelError("label " + std::to_string(l) + " out of range");
    out[static_cast<std::size_t>(l)] = 1.0;
  }
  return out;
}

FoldSplit fold_split(const Manifest& manifest, int fold) {
  FoldSplit out;
  for (const auto& e : manifest.entries) {
    (e.fold && *e.fold == fold ? out.eval : out.train).push_back(e);
  }
  return out;
}

// ---- datasets ----

LoadResult load_entries(const Manifest& manifest, const std::vector<ManifestEntry>& entries,
                        const LoadOptions& options) {
  if (entries.empty()) throw DatasetError("no manifest entries selected");
  LoadResult result;
  std::optional<augment::TranscodeCache> cache;
  if (options.bitrates) {
    options.bitrates->validate(options.transcode_codec);
    cache.emplace(options.cache_dir.empty() ? fs::temp_directory_path() / "tempest-transcode-cache"
                                            : options.cache_dir);
  }
  for (const auto& entry : entries) {
    const fs::path path = manifest.resolve(entry);
    try {
      Example ex;
      ex.id = entry.path;
      ex.fold = entry.fold.value_or(0);
      const auto label = label_vector(entry.labels, manifest.num_classes);
      std::vector<ByteStream> streams;
      if (options.bitrates) {
        for (int rate : options.bitrates->rates_bps) {
          augment::TranscodeJob job{path, options.transcode_codec, rate, options.samplerate_hz, {}};
          streams.push_back(cache->get(job, options.transcoder));
        }
      } else {
        streams.push_back(open_stream(path, options.strip_metadata, options.format));
      }
      for (const auto& s : streams) {
        TokenMatrix m = tokenize_stream(parse_blocks(s, options.jpeg), options.l_max, options.max_blocks);
        m.label = label;
        ex.variants.push_back(std::move(m));
      }
      result.data.push_back(std::move(ex));
    } catch (const Error& e) {
      ++result.skipped;
      result.warnings.push_back(path.string() + ": " + e.what());
    }
  }
  if (result.data.empty()) {
    throw DatasetError("every file was skipped (" + std::to_string(result.skipped) + "); first: " +
                       result.warnings.front());
  }
  return result;
}

std::uint8_t dialect_byte(std::uint8_t b, int dialect) {
  if (dialect == 0) return b;
  return static_cast<std::uint8_t>(167 * b + 13 * dialect);
}

Dataset synthetic_dataset(const SyntheticOptions& o) {
  if (o.count < 1 || o.blocks < 1 || o.l_max < 1 || o.dialects < 1 || o.folds < 1) {
    throw ConfigError("synthetic dataset sizes must be positive");
  }
  if (!(o.noise >= 0.0 && o.noise <= 1.0)) throw ConfigError("noise must be in [0, 1]");
  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<int> any(0, 255);
  std::uniform_int_distribution<int> half(0, 127);
  std::uniform_int_distribution<int> length(std::max(1, o.l_max / 2), o.l_max);
  std::bernoulli_distribution flip(o.noise);
  Dataset data;
  for (int i = 0; i < o.count; ++i) {
    const int cls = i % 2;
    std::vector<Bytes> blocks;
    for (int b = 0; b < o.blocks; ++b) {
      Bytes bytes(static_cast<std::size_t>(length(rng)));
      for (auto& x : bytes) x = static_cast<std::uint8_t>(flip(rng) ? any(rng) : half(rng) + 128 * cls);
      blocks.push_back(std::move(bytes));
    }
    Example ex;
    ex.id = "synthetic-" + std::to_string(i);
    ex.fold = i % o.folds + 1;
    for (int d = 0; d < o.dialects; ++d) {
      TokenMatrix m;
      for (const auto& bytes : blocks) {
        Bytes mapped(bytes.size());
        std::transform(bytes.begin(), bytes.end(), mapped.begin(), [d](std::uint8_t x) { return dialect_byte(x, d); });
        m.rows.push_back(tokenize_block(mapped, o.l_max));
      }
      m.label = label_vector({cls}, 2);
      ex.variants.push_back(std::move(m));
    }
    data.push_back(std::move(ex));
  }
  return data;
}

// ---- configuration ----

void TrainConfig::validate() const {
  model.validate();
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
  };
  require(batch_size >= 1, "batch_size must be >= 1");
  require(steps >= 1, "steps must be >= 1");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(schedule == "cosine" || schedule == "constant", "schedule must be cosine or constant");
  require(warmup_steps >= 0, "warmup_steps must be >= 0");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "Adam betas must be in [0, 1)");
  require(adam_eps > 0.0, "adam_eps must be positive");
  require(grad_clip >= 0.0, "grad_clip must be >= 0");
  require(cutmix_probability >= 0.0 && cutmix_probability <= 1.0, "cutmix_probability must be in [0, 1]");
  require(cutmix_max_fraction > 0.0 && cutmix_max_fraction <= 1.0, "cutmix_max_fraction must be in (0, 1]");
  require(eval_interval >= 1, "eval_interval must be >= 1");
  require(max_blocks >= 1, "max_blocks must be >= 1");
  if (bitrates && bitrates->rates_bps.empty()) throw ConfigError("bitrates must not be empty");
}

json to_json(const TrainConfig& c) {
  json j = {{"model", model::to_json(c.model)},
            {"batch_size", c.batch_size},
            {"steps", c.steps},
            {"learning_rate", c.learning_rate},
            {"schedule", c.schedule},
            {"warmup_steps", c.warmup_steps},
            {"weight_decay", c.weight_decay},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps},
            {"grad_clip", c.grad_clip},
            {"seed", c.seed},
            {"cutmix", c.cutmix},
            {"cutmix_probability", c.cutmix_probability},
            {"cutmix_max_fraction", c.cutmix_max_fraction},
            {"eval_interval", c.eval_interval},
            {"max_blocks", c.max_blocks}};
  if (c.bitrates) j["bitrates"] = c.bitrates->rates_bps;
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  static const std::set<std::string> kKnown = {
      "model",    "batch_size", "steps",  "learning_rate", "schedule",           "warmup_steps",
      "weight_decay", "beta1",  "beta2",  "adam_eps",      "grad_clip",          "seed",
      "cutmix",   "cutmix_probability",   "cutmix_max_fraction", "eval_interval", "max_blocks", "bitrates"};
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  for (const auto& item : j.items()) {
    if (!kKnown.count(item.key())) throw ConfigError("unknown train config key '" + item.key() + "'");
  }
  TrainConfig c;
  try {
    if (j.contains("model")) c.model = model::model_config_from_json(j.at("model"));
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.schedule = j.value("schedule", c.schedule);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.seed = j.value("seed", c.seed);
    c.cutmix = j.value("cutmix", c.cutmix);
    c.cutmix_probability = j.value("cutmix_probability", c.cutmix_probability);
    c.cutmix_max_fraction = j.value("cutmix_max_fraction", c.cutmix_max_fraction);
    c.eval_interval = j.value("eval_interval", c.eval_interval);
    c.max_blocks = j.value("max_blocks", c.max_blocks);
    if (j.contains("bitrates")) c.bitrates = augment::BitrateSet{j.at("bitrates").get<std::vector<int>>()};
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return train_config_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

double learning_rate_at(const TrainConfig& c, int step) {
  if (step < c.warmup_steps) return c.learning_rate * (step + 1) / c.warmup_steps;
  if (c.schedule == "constant") return c.learning_rate;
  const double span = std::max(1, c.steps - c.warmup_steps);
  const double progress = std::min(1.0, (step - c.warmup_steps) / span);
  return c.learning_rate * 0.5 * (1.0 + std::cos(M_PI * progress));
}

// ---- optimizer ----

AdamW::AdamW(const model::ModelParams& params, const TrainConfig& config)
    : beta1_(config.beta1), beta2_(config.beta2), eps_(config.adam_eps), weight_decay_(config.weight_decay) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& p = params.tensor(i);
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
    decay_.push_back(p.rows() > 1 && p.cols() > 1);
  }
}

void AdamW::step(model::ModelParams& params, const std::vector<Matrix>& grads, double lr) {
  if (grads.size() != params.size()) throw ShapeError("gradient count does not match parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = params.tensor(i);
    const Matrix& g = grads[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    const Matrix update = (m_[i] / c1).array() / ((v_[i] / c2).array().sqrt() + eps_);
    if (decay_[i]) p -= lr * weight_decay_ * p;
    p -= lr * update;
  }
}

// ---- training ----

json to_json(const MetricRecord& r) {
  json j = {{"step", r.step},
            {"L_r", r.reconstruction},
            {"L_c", r.classification},
            {"train_acc", r.train_accuracy},
            {"lr", r.learning_rate}};
  if (r.eval_metric) j["eval_metric"] = *r.eval_metric;
  return j;
}

TrainResult train(const Dataset& data, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (data.empty()) throw DatasetError("training set is empty");
  check_labels(data, config.model);

  TrainResult result;
  result.params = options.initial ? *options.initial : model::ModelParams::initialize(config.model, config.seed);
  AdamW optimizer(result.params, config);
  std::mt19937_64 rng(config.seed ^ 0xD1B54A32D192ED03ull);

  std::ofstream metrics;
  if (!options.metrics_path.empty()) {
    metrics.open(options.metrics_path, std::ios::trunc);
    if (!metrics) throw IoError("cannot create " + options.metrics_path.string());
  }

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const auto next_index = [&] {
    if (cursor == order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    return order[cursor++];
  };

  double sum_r = 0.0;
  double sum_c = 0.0;
  double correct = 0.0;
  double seen = 0.0;
  for (int step = 0; step < config.steps; ++step) {
    std::vector<TokenMatrix> batch;
    for (int b = 0; b < config.batch_size; ++b) {
      const Example& ex = data[next_index()];
      const std::size_t v = std::uniform_int_distribution<std::size_t>(0, ex.variants.size() - 1)(rng);
      const TokenMatrix& m = ex.variants[v];
      batch.push_back(m.num_rows() > config.max_blocks ? head_rows(m, config.max_blocks) : m);
    }
    if (config.cutmix && batch.size() > 1) {
      const std::vector<TokenMatrix> originals = batch;
      std::bernoulli_distribution apply(config.cutmix_probability);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (!apply(rng)) continue;
        const TokenMatrix& partner = originals[(i + 1) % originals.size()];
        const int rows = std::min(batch[i].num_rows(), partner.num_rows());
        batch[i] = augment::block_cutmix(head_rows(originals[i], rows), head_rows(partner, rows), rng,
                                         {config.cutmix_max_fraction, augment::SpanMode::kContiguous})
                       .mixed;
      }
    }

    const model::BatchResult r = model::batch_gradients(batch, result.params, config.model);
    std::vector<Matrix> grads = r.gradients.grads;
    if (config.grad_clip > 0.0) {
      const double norm = global_norm(grads);
      if (norm > config.grad_clip) {
        for (auto& g : grads) g *= config.grad_clip / norm;
      }
    }
    const double lr = learning_rate_at(config, step);
    optimizer.step(result.params, grads, lr);
    if (!result.params.all_finite()) throw NumericsError("parameters diverged at step " + std::to_string(step + 1));

    sum_r += r.reconstruction * static_cast<double>(batch.size());
    sum_c += r.classification * static_cast<double>(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& label = *batch[i].label;
      if (config.model.task == Task::kSingleLabel) {
        correct += argmax(r.logits[i]) == argmax(label) ? 1.0 : 0.0;
      } else {
        double agree = 0.0;
        for (std::size_t c = 0; c < label.size(); ++c) agree += ((r.logits[i][c] > 0.0) == (label[c] >= 0.5)) ? 1.0 : 0.0;
        correct += agree / static_cast<double>(label.size());
      }
    }
    seen += static_cast<double>(batch.size());

    if ((step + 1) % config.eval_interval == 0 || step + 1 == config.steps) {
      MetricRecord rec;
      rec.step = step + 1;
      rec.reconstruction = sum_r / seen;
      rec.classification = sum_c / seen;
      rec.train_accuracy = correct / seen;
      rec.learning_rate = lr;
      if (options.validation != nullptr && !options.validation->empty()) {
        rec.eval_metric = evaluate(*options.validation, result.params, config.model).value;
      }
      if (metrics) metrics << to_json(rec).dump() << '\n' << std::flush;
      result.log.push_back(rec);
      sum_r = sum_c = correct = seen = 0.0;
    }
  }

  model::quantize_to_float(result.params);
  if (!options.checkpoint_path.empty()) model::save_checkpoint(options.checkpoint_path, config.model, result.params);
  return result;
}

// ---- evaluation ----

std::vector<double> to_probabilities(std::span<const double> logits, Task task) {
  std::vector<double> out(logits.begin(), logits.end());
  if (task == Task::kMultiLabel) {
    for (auto& x : out) x = 1.0 / (1.0 + std::exp(-x));
    return out;
  }
  const double peak = *std::max_element(out.begin(), out.end());
  double total = 0.0;
  for (auto& x : out) total += (x = std::exp(x - peak));
  for (auto& x : out) x /= total;
  return out;
}

std::vector<double> mean_of(std::vector<std::vector<double>> vectors) {
  if (vectors.empty()) throw EmptyInput("nothing to average");
  for (const auto& v : vectors) {
    if (v.size() != vectors.front().size()) throw ShapeError("vectors to average differ in length");
  }
  std::sort(vectors.begin(), vectors.end());
  const std::vector<double>& ref = vectors.front();
  const double k = static_cast<double>(vectors.size());
  std::vector<double> out = ref;
  for (std::size_t c = 0; c < out.size(); ++c) {
    double offset = 0.0;
    for (std::size_t i = 1; i < vectors.size(); ++i) offset += vectors[i][c] - ref[c];
    out[c] = ref[c] + offset / k;
  }
  return out;
}

Prediction predict(const TokenMatrix& m, const model::ModelParams& params, const model::ModelConfig& config) {
  Prediction p;
  p.probs = to_probabilities(model::predict_logits(m, params, config), config.task);
  p.predicted = argmax(p.probs);
  return p;
}

Prediction multirate_infer(std::span<const TokenMatrix> streams, const model::ModelParams& params,
                           const model::ModelConfig& config, Aggregation aggregation) {
  if (streams.empty()) throw EmptyInput("multi-rate inference needs at least one stream");
  std::vector<std::vector<double>> per_stream;
  for (const auto& m : streams) {
    auto logits = model::predict_logits(m, params, config);
    per_stream.push_back(aggregation == Aggregation::kLogitMean ? std::move(logits)
                                                                : to_probabilities(logits, config.task));
  }
  Prediction p;
  p.probs = mean_of(std::move(per_stream));
  if (aggregation == Aggregation::kLogitMean) p.probs = to_probabilities(p.probs, config.task);
  p.predicted = argmax(p.probs);
  return p;
}

Prediction multirate_infer(const std::vector<ByteStream>& streams, const model::Checkpoint& checkpoint,
                           Aggregation aggregation, int max_blocks, const jpeg::ScanOptions& jpeg_options) {
  if (streams.empty()) throw EmptyInput("multi-rate inference needs at least one stream");
  std::vector<TokenMatrix> matrices;
  for (const auto& s : streams) {
    matrices.push_back(tokenize_stream(parse_blocks(s, jpeg_options), checkpoint.config.l_max, max_blocks));
  }
  return multirate_infer(matrices, checkpoint.params, checkpoint.config, aggregation);
}

double accuracy(const std::vector<std::vector<double>>& scores, const std::vector<std::vector<double>>& labels) {
  if (scores.empty()) throw EmptyInput("no predictions");
  if (scores.size() != labels.size()) throw ShapeError("prediction and label counts differ");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (argmax(scores[i]) == argmax(labels[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

double mean_average_precision(const std::vector<std::vector<double>>& scores,
                              const std::vector<std::vector<double>>& labels) {
  if (scores.empty()) throw EmptyInput("no predictions");
  if (scores.size() != labels.size()) throw ShapeError("prediction and label counts differ");
  const std::size_t classes = labels.front().size();
  double total = 0.0;
  int counted = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a][c] > scores[b][c]; });
    double hits = 0.0;
    double precision_sum = 0.0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
      if (labels[order[rank]][c] >= 0.5) {
        hits += 1.0;
        precision_sum += hits / static_cast<double>(rank + 1);
      }
    }
    if (hits > 0.0) {
      total += precision_sum / hits;
      ++counted;
    }
  }
  if (counted == 0) throw EmptyInput("no class has a positive example");
  return total / counted;
}

json to_json(const EvalReport& r) {
  json j = {{"metric", r.metric}, {"value", r.value}, {"count", r.count}};
  if (!r.per_fold.empty()) {
    json folds = json::object();
    for (const auto& [fold, v] : r.per_fold) folds[std::to_string(fold)] = v;
    j["per_fold"] = folds;
  }
  if (r.fold_mean) j["fold_mean"] = *r.fold_mean;
  return j;
}

EvalReport evaluate(const Dataset& data, const model::ModelParams& params, const model::ModelConfig& config,
                    const EvalOptions& options) {
  if (data.empty()) throw EmptyInput("evaluation set is empty");
  check_labels(data, config);
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<double>> labels;
  std::vector<int> folds;
  for (const auto& ex : data) {
    Prediction p;
    if (options.variant) {
      if (*options.variant < 0 || *options.variant >= static_cast<int>(ex.variants.size())) {
        throw ConfigError("example " + ex.id + " has no variant " + std::to_string(*options.variant));
      }
      p = predict(ex.variants[static_cast<std::size_t>(*options.variant)], params, config);
    } else if (options.variants == VariantUse::kEnsemble) {
      p = multirate_infer(ex.variants, params, config, options.aggregation);
    } else {
      p = predict(ex.variants.front(), params, config);
    }
    scores.push_back(std::move(p.probs));
    labels.push_back(ex.label());
    folds.push_back(ex.fold);
  }
  const auto score = [&](const std::vector<std::vector<double>>& s, const std::vector<std::vector<double>>& l) {
    return config.task == Task::kSingleLabel ? accuracy(s, l) : mean_average_precision(s, l);
  };
  EvalReport report;
  report.metric = config.task == Task::kSingleLabel ? "accuracy" : "mAP";
  report.value = score(scores, labels);
  report.count = data.size();
  std::set<int> ids(folds.begin(), folds.end());
  ids.erase(0);
  if (!ids.empty()) {
    double sum = 0.0;
    for (int f : ids) {
      std::vector<std::vector<double>> s;
      std::vector<std::vector<double>> l;
      for (std::size_t i = 0; i < folds.size(); ++i) {
        if (folds[i] == f) {
          s.push_back(scores[i]);
          l.push_back(labels[i]);
        }
      }
      report.per_fold[f] = score(s, l);
      sum += report.per_fold[f];
    }
    report.fold_mean = sum / static_cast<double>(ids.size());
  }
  return report;
}

CrossValidation cross_validate(const Dataset& data, const TrainConfig& config) {
  std::set<int> ids;
  for (const auto& ex : data) ids.insert(ex.fold);
  if (ids.size() < 2) throw DatasetError("cross-validation needs at least two folds");
  CrossValidation cv;
  for (int f : ids) {
    Dataset train_part;
    Dataset eval_part;
    for (const auto& ex : data) (ex.fold == f ? eval_part : train_part).push_back(ex);
    const TrainResult trained = train(train_part, config);
    cv.per_fold[f] = evaluate(eval_part, trained.params, config.model).value;
    cv.mean += cv.per_fold[f];
  }
  cv.mean /= static_cast<double>(ids.size());
  return cv;
}

// ---- bench ----

json to_json(const BenchReport& r) {
  return {{"blocks", r.blocks},
          {"tokens", r.tokens},
          {"attention_entries", r.attention_entries},
          {"flops", r.flops},
          {"params", r.params},
          {"tps", r.tps},
          {"tbr", r.tbr},
          {"byte_baseline_tokens", r.byte_baseline_tokens},
          {"byte_baseline_attention_entries", r.byte_baseline_attention_entries},
          {"byte_baseline_flops", r.byte_baseline_flops}};
}

BenchReport bench(const model::ModelConfig& config, double clip_seconds, double blocks_per_second,
                  double avg_block_bytes) {
  config.validate();
  if (!(clip_seconds > 0.0) || !(blocks_per_second > 0.0)) throw ConfigError("bench inputs must be positive");
  const double block_bytes = avg_block_bytes > 0.0 ? avg_block_bytes : config.l_max;
  BenchReport r;
  r.blocks = static_cast<int>(std::max<long long>(1, std::llround(clip_seconds * blocks_per_second)));
  r.tokens = r.blocks * config.l_prime + 1;
  r.attention_entries = static_cast<std::int64_t>(r.tokens) * r.tokens;
  r.flops = model::flops_estimate(config, r.blocks);
  r.params = model::param_count(config);
  r.tps = compute_tps(static_cast<std::size_t>(r.blocks), clip_seconds, config.l_prime);
  r.tbr = compute_tbr(config.l_prime, block_bytes);
  const long long raw = std::llround(r.blocks * block_bytes);
  const int kept = static_cast<int>(std::min<long long>(raw, config.byte_token_cap));
  r.byte_baseline_tokens = kept + 1;
  r.byte_baseline_attention_entries = static_cast<std::int64_t>(r.byte_baseline_tokens) * r.byte_baseline_tokens;
  r.byte_baseline_flops = model::byte_baseline_flops(config, kept);
  return r;
}

}  // namespace tempest::harness
