#include <doctest.h>

#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <set>

#include "support.hpp"
#include "tempest/errors.hpp"
#include "tempest/harness.hpp"
#include "tempest/mp3.hpp"

using namespace tempest;
using namespace tempest::harness;

namespace {

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << '\n';
}

TrainConfig quick_config(int steps) {
  TrainConfig c;
  c.model = model::ModelConfig::tiny(2);
  c.steps = steps;
  c.eval_interval = 5;
  c.learning_rate = 3e-3;
  c.batch_size = 4;
  return c;
}

}  // namespace

TEST_CASE("manifest parsing and validation") {
  const Manifest m = load_manifest(testing::fixture_dir() / "audio_manifest.jsonl");
  CHECK(m.num_classes == 2);
  CHECK(m.task == model::Task::kSingleLabel);
  CHECK(m.entries.size() == 32);
  CHECK(m.folds() == std::vector<int>{1, 2, 3, 4, 5});
  CHECK(std::filesystem::exists(m.resolve(m.entries.front())));
  CHECK(m.split("train").size() + m.split("eval").size() == 32);

  for (int fold : m.folds()) {
    const FoldSplit s = fold_split(m, fold);
    std::set<std::string> train_paths;
    for (const auto& e : s.train) train_paths.insert(e.path);
    for (const auto& e : s.eval) {
      CHECK(*e.fold == fold);
      CHECK(train_paths.count(e.path) == 0);
    }
    CHECK(s.train.size() + s.eval.size() == 32);
  }

  testing::TempDir dir;
  write_lines(dir / "a.jsonl", {R"({"path": "x.mp3", "label": 3})", R"({"path": "y.mp3", "label": 1, "split": "eval"})"});
  const Manifest inferred = load_manifest(dir / "a.jsonl");
  CHECK(inferred.num_classes == 4);
  CHECK(inferred.entries[0].split == "train");
  CHECK_FALSE(inferred.entries[0].fold);

  write_lines(dir / "b.jsonl", {R"({"num_classes": 2})", R"({"path": "x.mp3", "label": 2})"});
  CHECK_THROWS_AS(load_manifest(dir / "b.jsonl"), DatasetError);
  write_lines(dir / "c.jsonl", {R"({"path": "x.mp3", "label": 0})", R"({"path": "x.mp3", "label": 1})"});
  CHECK_THROWS_AS(load_manifest(dir / "c.jsonl"), DatasetError);
  write_lines(dir / "d.jsonl", {R"({"path": "x.mp3", "labels": [0, 1]})"});
  CHECK_THROWS_AS(load_manifest(dir / "d.jsonl"), DatasetError);
  write_lines(dir / "e.jsonl", {R"({"num_classes": 3, "task": "multi_label"})", R"({"path": "x.mp3", "labels": [0, 2]})"});
  const Manifest multi = load_manifest(dir / "e.jsonl");
  CHECK(multi.task == model::Task::kMultiLabel);
  CHECK(label_vector(multi.entries[0].labels, 3) == std::vector<double>{1.0, 0.0, 1.0});
  write_lines(dir / "f.jsonl", {"not json"});
  CHECK_THROWS_AS(load_manifest(dir / "f.jsonl"), DatasetError);

  save_manifest(dir / "round.jsonl", m);
  const Manifest back = load_manifest(dir / "round.jsonl");
  CHECK(back.entries.size() == m.entries.size());
  CHECK(back.entries[5].path == m.entries[5].path);
  CHECK(back.entries[5].fold == m.entries[5].fold);
}

TEST_CASE("loading skips unparseable files") {
  testing::TempDir dir;
  save_bytes(dir / "good.mp3", mp3::synth_stream(6, 32000, 32000, 1).bytes);
  save_bytes(dir / "bad.mp3", Bytes(100, 0x00));
  write_lines(dir / "m.jsonl", {R"({"path": "good.mp3", "label": 0})", R"({"path": "bad.mp3", "label": 1})",
                                R"({"path": "missing.mp3", "label": 1})"});
  const Manifest m = load_manifest(dir / "m.jsonl");
  LoadOptions opts;
  opts.l_max = 6;
  opts.max_blocks = 4;
  const LoadResult r = load_entries(m, m.entries, opts);
  REQUIRE(r.data.size() == 1);
  CHECK(r.skipped == 2);
  CHECK(r.warnings.size() == 2);
  CHECK(r.data[0].variants.front().num_rows() == 4);
  CHECK(r.data[0].label() == std::vector<double>{1.0, 0.0});

  const std::vector<ManifestEntry> broken(m.entries.begin() + 1, m.entries.end());
  CHECK_THROWS_AS(load_entries(m, broken, opts), DatasetError);
}

TEST_CASE("synthetic byte-pattern data") {
  SyntheticOptions o;
  o.dialects = 2;
  const Dataset a = synthetic_dataset(o);
  const Dataset b = synthetic_dataset(o);
  REQUIRE(a.size() == 64);
  CHECK(a[3].variants[0].rows[1].tokens == b[3].variants[0].rows[1].tokens);
  for (const auto& ex : a) {
    const bool high = ex.label()[1] == 1.0;
    for (const auto& row : ex.variants[0].rows) {
      for (int j = 0; j < row.valid_len; ++j) CHECK((row.tokens[j] >= 128) == high);
    }
    REQUIRE(ex.variants.size() == 2);
    for (std::size_t r = 0; r < ex.variants[0].rows.size(); ++r) {
      const auto& plain = ex.variants[0].rows[r];
      const auto& mapped = ex.variants[1].rows[r];
      CHECK(plain.valid_len == mapped.valid_len);
      for (int j = 0; j < plain.valid_len; ++j) {
        CHECK(mapped.tokens[j] == dialect_byte(static_cast<std::uint8_t>(plain.tokens[j]), 1));
      }
    }
  }
  std::set<int> image;
  for (int x = 0; x < 256; ++x) image.insert(dialect_byte(static_cast<std::uint8_t>(x), 1));
  CHECK(image.size() == 256);
}

TEST_CASE("train config JSON and schedule") {
  TrainConfig c;
  c.steps = 100;
  c.bitrates = augment::BitrateSet{{20000, 32000}};
  const TrainConfig back = train_config_from_json(to_json(c));
  CHECK(back.steps == 100);
  CHECK(back.bitrates->rates_bps == std::vector<int>{20000, 32000});
  CHECK(train_config_from_json(nlohmann::json::object()).steps == TrainConfig{}.steps);
  CHECK_THROWS_AS(train_config_from_json({{"stepz", 1}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"steps", 0}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"steps", "many"}}), ConfigError);

  CHECK(learning_rate_at(c, 0) == doctest::Approx(c.learning_rate));
  CHECK(learning_rate_at(c, 50) == doctest::Approx(c.learning_rate * 0.5));
  CHECK(learning_rate_at(c, 99) < 1e-5 * c.learning_rate * 100);
  c.warmup_steps = 10;
  CHECK(learning_rate_at(c, 4) == doctest::Approx(c.learning_rate * 0.5));
  c.schedule = "constant";
  CHECK(learning_rate_at(c, 80) == c.learning_rate);
}

TEST_CASE("AdamW first step moves each weight by the learning rate") {
  model::ModelParams p;
  p.add("w", model::Matrix::Constant(2, 2, 1.0));
  p.add("b", model::Matrix::Constant(1, 2, 1.0));
  TrainConfig c;
  c.weight_decay = 0.1;
  AdamW opt(p, c);
  opt.step(p, {model::Matrix::Constant(2, 2, 0.5), model::Matrix::Constant(1, 2, -2.0)}, 0.01);
  // m_hat / sqrt(v_hat) = sign(g) (up to eps); decay only on the matrix.
  CHECK(p.at("w")(0, 0) == doctest::Approx(1.0 - 0.01 * 0.1 - 0.01).epsilon(1e-9));
  CHECK(p.at("b")(0, 1) == doctest::Approx(1.0 + 0.01).epsilon(1e-9));
}

TEST_CASE("training is deterministic and writes its artifacts") {
  const Dataset data = synthetic_dataset({16, 2, 6, 0.0, 1, 5, 3});
  testing::TempDir dir;
  TrainConfig c = quick_config(12);
  TrainOptions opts;
  opts.checkpoint_path = dir / "m.ckpt";
  opts.metrics_path = dir / "metrics.jsonl";
  opts.validation = &data;
  const TrainResult a = train(data, c, opts);
  const TrainResult b = train(data, c);
  REQUIRE(a.log.size() == 3);
  CHECK(a.log[2].step == 12);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(to_json(a.log[i]).dump().find("\"eval_metric\"") != std::string::npos);
    CHECK(a.log[i].reconstruction == b.log[i].reconstruction);
    CHECK(a.log[i].classification == b.log[i].classification);
    CHECK(a.log[i].train_accuracy == b.log[i].train_accuracy);
  }

  std::ifstream metrics(dir / "metrics.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(metrics, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("step"));
    CHECK(j.contains("L_r"));
    CHECK(j.contains("L_c"));
    CHECK(j.contains("train_acc"));
    ++lines;
  }
  CHECK(lines == 3);

  const model::Checkpoint ck = model::load_checkpoint(dir / "m.ckpt");
  const EvalReport direct = evaluate(data, a.params, c.model);
  const EvalReport loaded = evaluate(data, ck.params, ck.config);
  CHECK(direct.value == loaded.value);
  CHECK(direct.per_fold == loaded.per_fold);

  TrainConfig no_cls = c;
  no_cls.model.lambda = 0.0;
  const TrainResult z = train(data, no_cls);
  CHECK(z.log[2].reconstruction != a.log[2].reconstruction);

  TrainConfig wrong = c;
  wrong.model.num_classes = 3;
  CHECK_THROWS_AS(train(data, wrong), ConfigError);
  CHECK_THROWS_AS(train(Dataset{}, c), DatasetError);
}

TEST_CASE("training with CutMix and variants") {
  SyntheticOptions o;
  o.count = 8;
  o.dialects = 3;
  const Dataset data = synthetic_dataset(o);
  TrainConfig c = quick_config(6);
  c.cutmix = true;
  c.cutmix_probability = 1.0;
  const TrainResult r = train(data, c);
  CHECK(r.params.all_finite());
  CHECK(r.log.back().step == 6);
}

TEST_CASE("metrics") {
  const std::vector<std::vector<double>> labels = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  CHECK(accuracy(labels, labels) == 1.0);
  CHECK(accuracy({{0.1, 0.9, 0}, {0, 1, 0}, {1, 0, 0}}, labels) == doctest::Approx(1.0 / 3.0));

  // Uniform random scores over 50 classes land near chance.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<double>> truth;
  for (int i = 0; i < 20000; ++i) {
    std::vector<double> s(50);
    for (auto& x : s) x = u(rng);
    scores.push_back(s);
    std::vector<double> t(50, 0.0);
    t[static_cast<std::size_t>(i % 50)] = 1.0;
    truth.push_back(t);
  }
  CHECK(std::abs(accuracy(scores, truth) - 0.02) < 0.005);

  // Class 0 positives ranked 1st and 3rd: AP = (1/1 + 2/3) / 2; class 1: AP = 1.
  const std::vector<std::vector<double>> s = {{0.9, 0.1}, {0.8, 0.7}, {0.7, 0.2}};
  const std::vector<std::vector<double>> l = {{1, 0}, {0, 1}, {1, 0}};
  CHECK(mean_average_precision(s, l) == doctest::Approx(((1.0 + 2.0 / 3.0) / 2.0 + 1.0) / 2.0));
  CHECK_THROWS_AS(accuracy({}, {}), EmptyInput);
}

TEST_CASE("evaluation reports folds") {
  const Dataset data = synthetic_dataset({20, 2, 6, 0.0, 1, 5, 9});
  const model::ModelConfig c = model::ModelConfig::tiny(2);
  const auto p = model::ModelParams::initialize(c, 1);
  const EvalReport r = evaluate(data, p, c);
  CHECK(r.metric == "accuracy");
  CHECK(r.count == 20);
  REQUIRE(r.per_fold.size() == 5);
  double sum = 0.0;
  for (const auto& [fold, v] : r.per_fold) sum += v;
  CHECK(*r.fold_mean == doctest::Approx(sum / 5.0));

  model::ModelConfig three = c;
  three.num_classes = 3;
  CHECK_THROWS_AS(evaluate(data, model::ModelParams::initialize(three, 1), three), ConfigError);
  CHECK_THROWS_AS(evaluate(Dataset{}, p, c), EmptyInput);
}

TEST_CASE("multi-rate aggregation") {
  const std::vector<double> m = mean_of({{0.6, 0.4}, {0.2, 0.8}});
  CHECK(m[0] == doctest::Approx(0.4));
  CHECK(m[1] == doctest::Approx(0.6));
  CHECK_THROWS_AS(mean_of({}), EmptyInput);

  const Dataset data = synthetic_dataset({4, 3, 6, 0.3, 3, 5, 2});
  const model::ModelConfig c = model::ModelConfig::tiny(2);
  auto p = model::ModelParams::initialize(c, 4);
  const auto& v = data[1].variants;

  const Prediction single = predict(v[0], p, c);
  CHECK(multirate_infer(std::span(v.data(), 1), p, c).probs == single.probs);

  const std::vector<TokenMatrix> fwd = {v[0], v[1], v[2]};
  const std::vector<TokenMatrix> rev = {v[2], v[0], v[1]};
  CHECK(multirate_infer(fwd, p, c).probs == multirate_infer(rev, p, c).probs);
  CHECK(multirate_infer(fwd, p, c, Aggregation::kLogitMean).probs ==
        multirate_infer(rev, p, c, Aggregation::kLogitMean).probs);

  const std::vector<TokenMatrix> copies = {v[1], v[1], v[1]};
  CHECK(multirate_infer(copies, p, c).probs == predict(v[1], p, c).probs);

  double total = 0.0;
  for (double x : multirate_infer(fwd, p, c).probs) total += x;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(multirate_infer(std::span<const TokenMatrix>{}, p, c), EmptyInput);
}

TEST_CASE("bench report") {
  model::ModelConfig c;
  const BenchReport r = bench(c, 1.0, 31.0);
  CHECK(r.tokens == 32);
  CHECK(r.attention_entries == 1024);
  CHECK(r.byte_baseline_tokens == 14 * 144 + 1);
  CHECK(r.params == model::param_count(c));
  CHECK(r.tbr == doctest::Approx(1.0 / 144.0));
  c.l_prime = 2;
  CHECK(bench(c, 1.0, 31.0).tokens - 1 == 2 * (r.tokens - 1));
  CHECK_THROWS_AS(bench(c, 0.0, 31.0), ConfigError);
}

TEST_CASE("cross-validation averages folds") {
  const Dataset data = synthetic_dataset({12, 2, 6, 0.0, 1, 3, 4});
  const CrossValidation cv = cross_validate(data, quick_config(4));
  REQUIRE(cv.per_fold.size() == 3);
  double sum = 0.0;
  for (const auto& [fold, v] : cv.per_fold) sum += v;
  CHECK(cv.mean == doctest::Approx(sum / 3.0));
}
