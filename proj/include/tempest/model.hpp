#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tempest/autograd.hpp"
#include "tempest/tokenizer.hpp"

namespace tempest::model {

using ag::Matrix;

enum class Task : std::uint8_t { kSingleLabel, kMultiLabel };

struct ModelConfig {
  int width = 216;            // N: model width shared by every sub-network
  int ff_dim = 864;           // feed-forward hidden width
  int embed_layers = 2;       // P: block encoder depth
  int classify_layers = 7;    // C: sequence encoder depth
  int decoder_layers = 1;     // reconstruction decoder depth
  int l_max = 144;            // tokens per block before embedding
  int l_prime = 1;            // embedded tokens per block
  int vocab = kVocabSize;
  int num_classes = 50;
  double lambda = 1.0;        // weight of the classification loss
  int heads = 4;
  bool use_reconstruction = true;  // false drops the decoder and its loss
  int byte_token_cap = 14 * 144;   // longest raw byte sequence for the byte baseline
  Task task = Task::kSingleLabel;

  // Throws ConfigError on any violated invariant.
  void validate() const;

  // Small configuration used by tests and desk-scale runs.
  static ModelConfig tiny(int num_classes = 2);
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Named learnable tensors. Registration order is fixed by the config, so
// two models with equal configs have identical layouts.
class ModelParams {
 public:
  ModelParams() = default;
  // Seeded initialization: N(0, 0.02) weights, zero biases, unit LN gains.
  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);
  // All tensors zero-filled with the right shapes.
  static ModelParams zeros(const ModelConfig& config);

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Matrix& tensor(std::size_t i) { return tensors_[i]; }
  const Matrix& tensor(std::size_t i) const { return tensors_[i]; }
  std::size_t index_of(const std::string& name) const;
  Matrix& at(const std::string& name) { return tensors_[index_of(name)]; }
  const Matrix& at(const std::string& name) const { return tensors_[index_of(name)]; }
  std::size_t scalar_count() const;
  bool all_finite() const;

  std::size_t add(std::string name, Matrix value);

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

// L' x N output of the block embedding network.
struct BlockEmbedding {
  Matrix values;
};

// Sinusoidal position table: pe[p, 2i] = sin(p / 10000^(2i/N)),
// pe[p, 2i+1] = cos(...). Throws ConfigError for odd n.
Matrix sinusoidal_pe(int length, int n);

// Differentiable forward passes bound to one graph.
class Network {
 public:
  Network(ag::Graph& graph, const ModelParams& params, const ModelConfig& config);

  ag::Var param(const std::string& name) const;
  ag::Var param(std::size_t index) const { return leaves_[index]; }
  std::span<const ag::Var> params() const { return leaves_; }

  // Token ids -> L' x N. Throws VocabError for ids outside 0..vocab-1.
  ag::Var embed_block(std::span<const Token> tokens);
  // L' x N -> l_max x vocab logits.
  ag::Var reconstruct_block(ag::Var embedding);
  // Blocks' embeddings -> 1 x num_classes logits. Throws EmptyInput.
  ag::Var classify(std::span<const ag::Var> embeddings);
  // Byte baseline: raw tokens straight into the sequence encoder.
  ag::Var classify_bytes(std::span<const Token> tokens);

  struct Losses {
    ag::Var total;
    ag::Var reconstruction;  // invalid (id -1) when reconstruction is off
    ag::Var classification;
    ag::Var logits;
  };
  // Joint objective of one example. The label must be set.
  Losses example_loss(const TokenMatrix& example);

  ag::Var encoder_layer(ag::Var x, const std::string& prefix);
  ag::Var attention(ag::Var query_in, ag::Var kv_in, const std::string& prefix);

 private:
  ag::Var feed_forward(ag::Var x, const std::string& prefix);
  ag::Var encoder_stack(ag::Var x, const std::string& prefix, int layers);

  ag::Graph& graph_;
  const ModelParams& params_;
  const ModelConfig& config_;
  std::vector<ag::Var> leaves_;
};

// ---- evaluation-mode wrappers (no gradient tape kept) ----

BlockEmbedding embed_block(const TokenizedBlock& t, const ModelParams& params, const ModelConfig& config);
Matrix reconstruct_block(const BlockEmbedding& e, const ModelParams& params, const ModelConfig& config);
std::vector<double> classify(std::span<const BlockEmbedding> blocks, const ModelParams& params,
                             const ModelConfig& config);
// Full inference on a token matrix: embed every row, then classify.
std::vector<double> predict_logits(const TokenMatrix& m, const ModelParams& params, const ModelConfig& config);
// Throws LengthError past config.byte_token_cap.
std::vector<double> classify_bytes(std::span<const Token> raw_tokens, const ModelParams& params,
                                   const ModelConfig& config);

// L_r + lambda * L_c. recon_logits[k] is l_max x vocab for block k, and
// original[k] its tokens. L_r is the mean cross-entropy over every block
// position (pad included); L_c is (soft) cross-entropy for single-label
// tasks and mean binary cross-entropy for multi-label ones.
// Throws LabelError for a label that is not a distribution (single-label)
// or has entries outside [0, 1] (multi-label), ShapeError on mismatches.
struct JointLoss {
  double total = 0.0;
  double reconstruction = 0.0;
  double classification = 0.0;
};
JointLoss joint_loss(std::span<const Matrix> recon_logits, std::span<const TokenizedBlock> original,
                     std::span<const double> class_logits, std::span<const double> label, double lambda,
                     Task task = Task::kSingleLabel);

void check_label(std::span<const double> label, int num_classes, Task task);

// ---- gradients ----

struct Gradients {
  double loss = 0.0;
  std::vector<Matrix> grads;  // aligned with ModelParams indices
};

using LossFn = std::function<ag::Var(Network&)>;

// Reverse-mode gradient of a scalar loss with respect to every parameter.
// Throws NumericsError when the loss is not finite.
Gradients gradients(const LossFn& loss_fn, const ModelParams& params, const ModelConfig& config);

// Batch-mean gradient of the joint objective.
struct BatchResult {
  Gradients gradients;
  double reconstruction = 0.0;
  double classification = 0.0;
  std::vector<std::vector<double>> logits;
};
BatchResult batch_gradients(std::span<const TokenMatrix> batch, const ModelParams& params,
                            const ModelConfig& config);

// ---- accounting ----

// Learnable scalars implied by the config (closed form).
std::int64_t param_count(const ModelConfig& config);
// Parameters of one pre-norm encoder layer.
std::int64_t encoder_layer_params(int width, int ff_dim);

// 2 x multiply-accumulates of every matmul in one forward pass over
// num_blocks blocks: block encoder, mixer, decoder, sequence encoder, head.
double flops_estimate(const ModelConfig& config, int num_blocks);
// Same convention for the byte baseline on sequence_len raw tokens.
double byte_baseline_flops(const ModelConfig& config, int sequence_len);

// ---- checkpoints ----
//   char[4] "TMCK" | u32 version (1) | u32 config-json length | config json
//   | u32 tensor count | per tensor: u32 name length, name, u32 rows,
//   u32 cols, rows*cols f32 (row-major). Little-endian throughout.
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams& params);
struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rounds every tensor to float precision so the in-memory model equals
// what a checkpoint stores.
void quantize_to_float(ModelParams& params);

}  // namespace tempest::model
