#include "tempest/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "tempest/errors.hpp"

namespace tempest::model {

namespace {

using ag::Var;

enum class Init { kNormal, kZero, kOne, kMixer };

struct Registrar {
  ModelParams& params;
  std::mt19937_64* rng;  // null: zero-fill everything

  void add(const std::string& name, Eigen::Index rows, Eigen::Index cols, Init init) {
    Matrix m = Matrix::Zero(rows, cols);
    if (rng != nullptr) {
      std::normal_distribution<double> normal(0.0, 0.02);
      switch (init) {
        case Init::kNormal:
          for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(*rng);
          break;
        case Init::kMixer:
          // Start near mean pooling over block positions.
          for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 1.0 / static_cast<double>(cols) + normal(*rng);
          break;
        case Init::kOne: m.setOnes(); break;
        case Init::kZero: break;
      }
    }
    params.add(name, std::move(m));
  }

  void layer_norm(const std::string& prefix, int n) {
    add(prefix + ".g", 1, n, Init::kOne);
    add(prefix + ".b", 1, n, Init::kZero);
  }
  void attention(const std::string& prefix, int n) {
    for (const char* p : {"q", "k", "v", "o"}) {
      add(prefix + ".w" + p, n, n, Init::kNormal);
      add(prefix + ".b" + p, 1, n, Init::kZero);
    }
  }
  void feed_forward(const std::string& prefix, int n, int ff) {
    add(prefix + ".w1", n, ff, Init::kNormal);
    add(prefix + ".b1", 1, ff, Init::kZero);
    add(prefix + ".w2", ff, n, Init::kNormal);
    add(prefix + ".b2", 1, n, Init::kZero);
  }
  void encoder_stack(const std::string& prefix, int layers, int n, int ff) {
    for (int l = 0; l < layers; ++l) {
      const std::string p = prefix + "." + std::to_string(l);
      layer_norm(p + ".ln1", n);
      attention(p + ".attn", n);
      layer_norm(p + ".ln2", n);
      feed_forward(p + ".ff", n, ff);
    }
    layer_norm(prefix + ".final_ln", n);
  }

  void model(const ModelConfig& c) {
    const int n = c.width;
    add("byte_embedding", c.vocab, n, Init::kNormal);
    encoder_stack("embed", c.embed_layers, n, c.ff_dim);
    add("mixer.pos.w", c.l_prime, c.l_max, Init::kMixer);
    add("mixer.pos.b", c.l_prime, 1, Init::kZero);
    layer_norm("mixer.ln", n);
    feed_forward("mixer.ff", n, c.ff_dim);
    if (c.use_reconstruction) {
      add("decoder.queries", c.l_max, n, Init::kNormal);
      for (int l = 0; l < c.decoder_layers; ++l) {
        const std::string p = "decoder." + std::to_string(l);
        layer_norm(p + ".ln_q", n);
        layer_norm(p + ".ln_kv", n);
        attention(p + ".attn", n);
        layer_norm(p + ".ln2", n);
        feed_forward(p + ".ff", n, c.ff_dim);
      }
      layer_norm("decoder.final_ln", n);
      add("decoder.head.w", n, c.vocab, Init::kNormal);
      add("decoder.head.b", 1, c.vocab, Init::kZero);
    }
    add("cls_token", 1, n, Init::kNormal);
    encoder_stack("classify", c.classify_layers, n, c.ff_dim);
    add("classifier.w", n, c.num_classes, Init::kNormal);
    add("classifier.b", 1, c.num_classes, Init::kZero);
  }
};

std::vector<int> to_ints(std::span<const Token> tokens, int vocab) {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (Token t : tokens) {
    if (static_cast<int>(t) >= vocab) throw VocabError("token " + std::to_string(t) + " outside vocabulary");
    out.push_back(t);
  }
  return out;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

constexpr char kCheckpointMagic[4] = {'T', 'M', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

// ---- config ----

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
  };
  require(width > 0 && width % 2 == 0, "width must be positive and even");
  require(heads > 0 && width % heads == 0, "width must be divisible by heads");
  require(ff_dim > 0, "ff_dim must be positive");
  require(embed_layers >= 0 && classify_layers >= 0, "layer counts must be non-negative");
  require(decoder_layers == 1, "the reconstruction decoder has exactly one layer");
  require(l_max >= 1, "l_max must be >= 1");
  require(l_prime >= 1, "l_prime must be >= 1");
  require(vocab == kVocabSize, "vocab must be 257");
  require(num_classes >= 1, "num_classes must be >= 1");
  require(lambda >= 0.0, "lambda must be >= 0");
  require(byte_token_cap >= 1, "byte_token_cap must be >= 1");
}

ModelConfig ModelConfig::tiny(int num_classes) {
  ModelConfig c;
  c.width = 8;
  c.ff_dim = 16;
  c.embed_layers = 1;
  c.classify_layers = 1;
  c.l_max = 6;
  c.l_prime = 1;
  c.num_classes = num_classes;
  c.heads = 4;
  c.byte_token_cap = 64;
  return c;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"width", c.width},
          {"ff_dim", c.ff_dim},
          {"embed_layers", c.embed_layers},
          {"classify_layers", c.classify_layers},
          {"decoder_layers", c.decoder_layers},
          {"l_max", c.l_max},
          {"l_prime", c.l_prime},
          {"vocab", c.vocab},
          {"num_classes", c.num_classes},
          {"lambda", c.lambda},
          {"heads", c.heads},
          {"use_reconstruction", c.use_reconstruction},
          {"byte_token_cap", c.byte_token_cap},
          {"task", c.task == Task::kMultiLabel ? "multi_label" : "single_label"}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  static const std::vector<std::string> kKnown = {
      "width",   "ff_dim",      "embed_layers", "classify_layers", "decoder_layers",     "l_max", "l_prime",
      "vocab",   "num_classes", "lambda",       "heads",           "use_reconstruction", "byte_token_cap", "task"};
  for (const auto& item : j.items()) {
    if (std::find(kKnown.begin(), kKnown.end(), item.key()) == kKnown.end()) {
      throw ConfigError("unknown model config key '" + item.key() + "'");
    }
  }
  try {
    c.width = j.value("width", c.width);
    c.ff_dim = j.value("ff_dim", c.ff_dim);
    c.embed_layers = j.value("embed_layers", c.embed_layers);
    c.classify_layers = j.value("classify_layers", c.classify_layers);
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.l_max = j.value("l_max", c.l_max);
    c.l_prime = j.value("l_prime", c.l_prime);
    c.vocab = j.value("vocab", c.vocab);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.lambda = j.value("lambda", c.lambda);
    c.heads = j.value("heads", c.heads);
    c.use_reconstruction = j.value("use_reconstruction", c.use_reconstruction);
    c.byte_token_cap = j.value("byte_token_cap", c.byte_token_cap);
    const std::string task = j.value("task", std::string("single_label"));
    if (task == "multi_label") {
      c.task = Task::kMultiLabel;
    } else if (task != "single_label") {
      throw ConfigError("task must be single_label or multi_label");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- params ----

ModelParams ModelParams::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  std::mt19937_64 rng(seed);
  Registrar{p, &rng}.model(config);
  return p;
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  Registrar{p, nullptr}.model(config);
  return p;
}

std::size_t ModelParams::add(std::string name, Matrix value) {
  const std::size_t idx = tensors_.size();
  if (!index_.emplace(name, idx).second) throw ConfigError("duplicate parameter " + name);
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
  return idx;
}

std::size_t ModelParams::index_of(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no parameter named " + name);
  return it->second;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
  return n;
}

bool ModelParams::all_finite() const {
  for (const auto& t : tensors_) {
    if (!t.allFinite()) return false;
  }
  return true;
}

Matrix sinusoidal_pe(int length, int n) {
  if (n <= 0 || n % 2 != 0) throw ConfigError("positional encoding width must be positive and even");
  Matrix pe(length, n);
  for (int p = 0; p < length; ++p) {
    for (int i = 0; i < n / 2; ++i) {
      const double angle = p / std::pow(10000.0, 2.0 * i / n);
      pe(p, 2 * i) = std::sin(angle);
      pe(p, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

// ---- network ----

Network::Network(ag::Graph& graph, const ModelParams& params, const ModelConfig& config)
    : graph_(graph), params_(params), config_(config) {
  leaves_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) leaves_.push_back(graph.parameter(params.tensor(i)));
}

Var Network::param(const std::string& name) const { return leaves_[params_.index_of(name)]; }

Var Network::attention(Var query_in, Var kv_in, const std::string& prefix) {
  const Var q = ag::add_row(ag::matmul(query_in, param(prefix + ".wq")), param(prefix + ".bq"));
  const Var k = ag::add_row(ag::matmul(kv_in, param(prefix + ".wk")), param(prefix + ".bk"));
  const Var v = ag::add_row(ag::matmul(kv_in, param(prefix + ".wv")), param(prefix + ".bv"));
  const int heads = config_.heads;
  const int d = config_.width / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Var qh = ag::slice_cols(q, h * d, d);
    const Var kh = ag::slice_cols(k, h * d, d);
    const Var vh = ag::slice_cols(v, h * d, d);
    const Var weights = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), inv_sqrt_d));
    outs.push_back(ag::matmul(weights, vh));
  }
  const Var merged = heads == 1 ? outs.front() : ag::concat_cols(outs);
  return ag::add_row(ag::matmul(merged, param(prefix + ".wo")), param(prefix + ".bo"));
}

Var Network::feed_forward(Var x, const std::string& prefix) {
  const Var hidden = ag::gelu(ag::add_row(ag::matmul(x, param(prefix + ".w1")), param(prefix + ".b1")));
  return ag::add_row(ag::matmul(hidden, param(prefix + ".w2")), param(prefix + ".b2"));
}

Var Network::encoder_layer(Var x, const std::string& prefix) {
  const Var h = ag::layer_norm(x, param(prefix + ".ln1.g"), param(prefix + ".ln1.b"));
  x = ag::add(x, attention(h, h, prefix + ".attn"));
  const Var h2 = ag::layer_norm(x, param(prefix + ".ln2.g"), param(prefix + ".ln2.b"));
  return ag::add(x, feed_forward(h2, prefix + ".ff"));
}

Var Network::encoder_stack(Var x, const std::string& prefix, int layers) {
  for (int l = 0; l < layers; ++l) x = encoder_layer(x, prefix + "." + std::to_string(l));
  return ag::layer_norm(x, param(prefix + ".final_ln.g"), param(prefix + ".final_ln.b"));
}

Var Network::embed_block(std::span<const Token> tokens) {
  if (static_cast<int>(tokens.size()) != config_.l_max) {
    throw ShapeError("block has " + std::to_string(tokens.size()) + " tokens, expected " +
                     std::to_string(config_.l_max));
  }
  const std::vector<int> ids = to_ints(tokens, config_.vocab);
  Var x = ag::gather_rows(param("byte_embedding"), ids);
  x = ag::add(x, graph_.constant(sinusoidal_pe(config_.l_max, config_.width)));
  x = encoder_stack(x, "embed", config_.embed_layers);
  Var y = ag::add_col(ag::matmul(param("mixer.pos.w"), x), param("mixer.pos.b"));
  const Var h = ag::layer_norm(y, param("mixer.ln.g"), param("mixer.ln.b"));
  return ag::add(y, feed_forward(h, "mixer.ff"));
}

Var Network::reconstruct_block(Var embedding) {
  if (!config_.use_reconstruction) throw ConfigError("model was built without the reconstruction decoder");
  Var q = ag::add(param("decoder.queries"), graph_.constant(sinusoidal_pe(config_.l_max, config_.width)));
  for (int l = 0; l < config_.decoder_layers; ++l) {
    const std::string p = "decoder." + std::to_string(l);
    const Var hq = ag::layer_norm(q, param(p + ".ln_q.g"), param(p + ".ln_q.b"));
    const Var hkv = ag::layer_norm(embedding, param(p + ".ln_kv.g"), param(p + ".ln_kv.b"));
    q = ag::add(q, attention(hq, hkv, p + ".attn"));
    const Var h2 = ag::layer_norm(q, param(p + ".ln2.g"), param(p + ".ln2.b"));
    q = ag::add(q, feed_forward(h2, p + ".ff"));
  }
  q = ag::layer_norm(q, param("decoder.final_ln.g"), param("decoder.final_ln.b"));
  return ag::add_row(ag::matmul(q, param("decoder.head.w")), param("decoder.head.b"));
}

Var Network::classify(std::span<const Var> embeddings) {
  if (embeddings.empty()) throw EmptyInput("classify needs at least one block");
  Var x = embeddings.size() == 1 ? embeddings.front() : ag::concat_rows(embeddings);
  x = ag::add(x, graph_.constant(sinusoidal_pe(static_cast<int>(x.rows()), config_.width)));
  const std::vector<Var> parts = {param("cls_token"), x};
  Var seq = ag::concat_rows(parts);
  seq = encoder_stack(seq, "classify", config_.classify_layers);
  const Var cls = ag::slice_rows(seq, 0, 1);
  return ag::add_row(ag::matmul(cls, param("classifier.w")), param("classifier.b"));
}

Var Network::classify_bytes(std::span<const Token> tokens) {
  if (tokens.empty()) throw EmptyInput("classify_bytes needs at least one token");
  if (static_cast<int>(tokens.size()) > config_.byte_token_cap) {
    throw LengthError("byte sequence of " + std::to_string(tokens.size()) + " exceeds cap " +
                      std::to_string(config_.byte_token_cap));
  }
  const std::vector<int> ids = to_ints(tokens, config_.vocab);
  Var x = ag::gather_rows(param("byte_embedding"), ids);
  x = ag::add(x, graph_.constant(sinusoidal_pe(static_cast<int>(ids.size()), config_.width)));
  const std::vector<Var> parts = {param("cls_token"), x};
  Var seq = encoder_stack(ag::concat_rows(parts), "classify", config_.classify_layers);
  return ag::add_row(ag::matmul(ag::slice_rows(seq, 0, 1), param("classifier.w")), param("classifier.b"));
}

Network::Losses Network::example_loss(const TokenMatrix& example) {
  if (!example.label) throw LabelError("training example has no label");
  if (example.rows.empty()) throw EmptyInput("example has no blocks");
  check_label(*example.label, config_.num_classes, config_.task);

  std::vector<Var> embeddings;
  std::vector<Var> recon_terms;
  embeddings.reserve(example.rows.size());
  for (const auto& row : example.rows) {
    const Var e = embed_block(row.tokens);
    embeddings.push_back(e);
    if (config_.use_reconstruction) {
      std::vector<int> targets(row.tokens.begin(), row.tokens.end());
      recon_terms.push_back(ag::cross_entropy(reconstruct_block(e), targets));
    }
  }
  Losses out;
  out.logits = classify(embeddings);
  out.classification = config_.task == Task::kSingleLabel
                           ? ag::soft_cross_entropy(out.logits, *example.label)
                           : ag::binary_cross_entropy(out.logits, *example.label);
  const Var weighted = ag::scale(out.classification, config_.lambda);
  if (config_.use_reconstruction) {
    const double positions = static_cast<double>(example.rows.size()) * config_.l_max;
    out.reconstruction = ag::scale(ag::sum(recon_terms), 1.0 / positions);
    const std::vector<Var> terms = {out.reconstruction, weighted};
    out.total = ag::sum(terms);
  } else {
    out.total = weighted;
  }
  return out;
}

// ---- evaluation wrappers ----

BlockEmbedding embed_block(const TokenizedBlock& t, const ModelParams& params, const ModelConfig& config) {
  ag::Graph g(false);
  Network net(g, params, config);
  return {net.embed_block(t.tokens).value()};
}

Matrix reconstruct_block(const BlockEmbedding& e, const ModelParams& params, const ModelConfig& config) {
  if (e.values.rows() != config.l_prime || e.values.cols() != config.width) {
    throw ShapeError("block embedding must be l_prime x width");
  }
  ag::Graph g(false);
  Network net(g, params, config);
  return net.reconstruct_block(g.constant(e.values)).value();
}

namespace {
std::vector<double> row_to_vector(const Matrix& m) { return {m.data(), m.data() + m.size()}; }
}  // namespace

std::vector<double> classify(std::span<const BlockEmbedding> blocks, const ModelParams& params,
                             const ModelConfig& config) {
  if (blocks.empty()) throw EmptyInput("classify needs at least one block");
  ag::Graph g(false);
  Network net(g, params, config);
  std::vector<Var> vars;
  for (const auto& b : blocks) {
    if (b.values.rows() != config.l_prime || b.values.cols() != config.width) {
      throw ShapeError("block embedding must be l_prime x width");
    }
    vars.push_back(g.constant(b.values));
  }
  return row_to_vector(net.classify(vars).value());
}

std::vector<double> predict_logits(const TokenMatrix& m, const ModelParams& params, const ModelConfig& config) {
  if (m.rows.empty()) throw EmptyInput("token matrix has no rows");
  ag::Graph g(false);
  Network net(g, params, config);
  std::vector<Var> vars;
  vars.reserve(m.rows.size());
  for (const auto& row : m.rows) vars.push_back(net.embed_block(row.tokens));
  return row_to_vector(net.classify(vars).value());
}

std::vector<double> classify_bytes(std::span<const Token> raw_tokens, const ModelParams& params,
                                   const ModelConfig& config) {
  ag::Graph g(false);
  Network net(g, params, config);
  return row_to_vector(net.classify_bytes(raw_tokens).value());
}

void check_label(std::span<const double> label, int num_classes, Task task) {
  if (static_cast<int>(label.size()) != num_classes) {
    throw ShapeError("label has " + std::to_string(label.size()) + " classes, expected " +
                     std::to_string(num_classes));
  }
  if (task == Task::kSingleLabel) {
    check_distribution(std::vector<double>(label.begin(), label.end()));
    return;
  }
  for (double v : label) {
    if (!(v >= 0.0 && v <= 1.0)) throw LabelError("multi-label targets must lie in [0, 1]");
  }
}

JointLoss joint_loss(std::span<const Matrix> recon_logits, std::span<const TokenizedBlock> original,
                     std::span<const double> class_logits, std::span<const double> label, double lambda,
                     Task task) {
  if (recon_logits.size() != original.size()) throw ShapeError("one reconstruction per block is required");
  if (class_logits.size() != label.size()) throw ShapeError("class logits and label differ in size");
  check_label(label, static_cast<int>(label.size()), task);

  ag::Graph g(false);
  JointLoss out;
  double positions = 0.0;
  for (std::size_t k = 0; k < recon_logits.size(); ++k) {
    if (recon_logits[k].rows() != original[k].size()) throw ShapeError("reconstruction rows != block length");
    std::vector<int> targets(original[k].tokens.begin(), original[k].tokens.end());
    for (int t : targets) {
      if (t >= recon_logits[k].cols()) throw VocabError("target token outside reconstruction vocabulary");
    }
    out.reconstruction += ag::cross_entropy(g.constant(recon_logits[k]), targets).value()(0, 0);
    positions += static_cast<double>(targets.size());
  }
  if (positions > 0.0) out.reconstruction /= positions;
  Matrix logits(1, static_cast<Eigen::Index>(class_logits.size()));
  for (std::size_t c = 0; c < class_logits.size(); ++c) logits(0, static_cast<Eigen::Index>(c)) = class_logits[c];
  const Var z = g.constant(logits);
  out.classification = (task == Task::kSingleLabel ? ag::soft_cross_entropy(z, label)
                                                   : ag::binary_cross_entropy(z, label))
                           .value()(0, 0);
  out.total = out.reconstruction + lambda * out.classification;
  return out;
}

// ---- gradients ----

Gradients gradients(const LossFn& loss_fn, const ModelParams& params, const ModelConfig& config) {
  if (!params.all_finite()) throw NumericsError("parameters contain non-finite values");
  ag::Graph g(true);
  Network net(g, params, config);
  const Var loss = loss_fn(net);
  Gradients out;
  out.loss = loss.value()(0, 0);
  if (!std::isfinite(out.loss)) throw NumericsError("loss is not finite");
  g.backward(loss);
  out.grads.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& grad = g.grad(net.param(i));
    out.grads.push_back(grad.size() == 0 ? Matrix::Zero(params.tensor(i).rows(), params.tensor(i).cols()) : grad);
  }
  return out;
}

BatchResult batch_gradients(std::span<const TokenMatrix> batch, const ModelParams& params,
                            const ModelConfig& config) {
  if (batch.empty()) throw EmptyInput("empty batch");
  BatchResult result;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& example : batch) {
    double recon = 0.0;
    double cls = 0.0;
    std::vector<double> logits;
    Gradients g = gradients(
        [&](Network& net) {
          const auto losses = net.example_loss(example);
          if (losses.reconstruction.id >= 0) recon = losses.reconstruction.value()(0, 0);
          cls = losses.classification.value()(0, 0);
          logits = row_to_vector(losses.logits.value());
          return losses.total;
        },
        params, config);
    if (result.gradients.grads.empty()) {
      result.gradients.grads.reserve(g.grads.size());
      for (auto& m : g.grads) result.gradients.grads.push_back(m * inv);
    } else {
      for (std::size_t i = 0; i < g.grads.size(); ++i) result.gradients.grads[i] += g.grads[i] * inv;
    }
    result.gradients.loss += g.loss * inv;
    result.reconstruction += recon * inv;
    result.classification += cls * inv;
    result.logits.push_back(std::move(logits));
  }
  return result;
}

// ---- accounting ----

std::int64_t encoder_layer_params(int width, int ff_dim) {
  const std::int64_t n = width;
  const std::int64_t f = ff_dim;
  const std::int64_t layer_norms = 2 * (2 * n);
  const std::int64_t attention = 4 * (n * n + n);
  const std::int64_t feed_forward = (n * f + f) + (f * n + n);
  return layer_norms + attention + feed_forward;
}

std::int64_t param_count(const ModelConfig& c) {
  const std::int64_t n = c.width;
  const std::int64_t f = c.ff_dim;
  const std::int64_t v = c.vocab;
  const std::int64_t ln = 2 * n;
  const std::int64_t ff = (n * f + f) + (f * n + n);
  const std::int64_t layer = encoder_layer_params(c.width, c.ff_dim);

  std::int64_t total = v * n;                                   // byte embedding
  total += c.embed_layers * layer + ln;                         // block encoder
  total += static_cast<std::int64_t>(c.l_prime) * c.l_max + c.l_prime + ln + ff;  // mixer
  if (c.use_reconstruction) {
    const std::int64_t decoder_layer = 3 * ln + 4 * (n * n + n) + ff;
    total += static_cast<std::int64_t>(c.l_max) * n + c.decoder_layers * decoder_layer + ln + n * v + v;
  }
  total += n;                                                   // [CLS]
  total += c.classify_layers * layer + ln;                      // sequence encoder
  total += n * c.num_classes + c.num_classes;                   // classifier
  return total;
}

namespace {

// Multiply-accumulates of one encoder layer over t tokens.
double encoder_layer_macs(double t, double n, double f) {
  const double projections = 4.0 * t * n * n;
  const double scores_and_values = 2.0 * t * t * n;
  const double feed_forward = 2.0 * t * n * f;
  return projections + scores_and_values + feed_forward;
}

}  // namespace

double flops_estimate(const ModelConfig& c, int num_blocks) {
  if (num_blocks < 1) throw ConfigError("num_blocks must be >= 1");
  const double n = c.width;
  const double f = c.ff_dim;
  const double l = c.l_max;
  const double lp = c.l_prime;
  const double blocks = num_blocks;

  double per_block = c.embed_layers * encoder_layer_macs(l, n, f);
  per_block += lp * l * n + 2.0 * lp * n * f;  // mixer
  if (c.use_reconstruction) {
    const double cross = l * n * n + 2.0 * lp * n * n + 2.0 * l * lp * n + l * n * n;
    per_block += c.decoder_layers * (cross + 2.0 * l * n * f) + l * n * c.vocab;
  }
  const double seq = blocks * lp + 1.0;
  const double sequence = c.classify_layers * encoder_layer_macs(seq, n, f) + n * c.num_classes;
  return 2.0 * (blocks * per_block + sequence);
}

double byte_baseline_flops(const ModelConfig& c, int sequence_len) {
  const double t = sequence_len + 1.0;
  return 2.0 * (c.classify_layers * encoder_layer_macs(t, c.width, c.ff_dim) + c.width * c.num_classes);
}

// ---- checkpoints ----

void quantize_to_float(ModelParams& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& m = params.tensor(i);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<double>(static_cast<float>(m.data()[k]));
  }
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  const std::string cfg = to_json(config).dump();
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(i);
    const Matrix& m = params.tensor(i);
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c))));
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint");
  }
  if (get_u32(in) != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version");
  std::string cfg(get_u32(in), '\0');
  if (!in.read(cfg.data(), static_cast<std::streamsize>(cfg.size()))) throw CheckpointError("checkpoint truncated");

  Checkpoint ck;
  try {
    ck.config = model_config_from_json(nlohmann::json::parse(cfg));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint config: ") + e.what());
  }
  ck.params = ModelParams::zeros(ck.config);
  const std::uint32_t count = get_u32(in);
  if (count != ck.params.size()) throw CheckpointError("tensor count does not match config");
  for (std::uint32_t t = 0; t < count; ++t) {
    std::string name(get_u32(in), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) throw CheckpointError("checkpoint truncated");
    Matrix& m = ck.params.at(name);
    const std::uint32_t rows = get_u32(in);
    const std::uint32_t cols = get_u32(in);
    if (rows != m.rows() || cols != m.cols()) throw CheckpointError("shape mismatch for " + name);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = std::bit_cast<float>(get_u32(in));
    }
  }
  return ck;
}

}  // namespace tempest::model
