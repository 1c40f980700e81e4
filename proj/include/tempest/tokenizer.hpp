#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "tempest/blocks.hpp"

namespace tempest {

inline constexpr int kPadToken = 256;
inline constexpr int kVocabSize = 257;

using Token = std::uint16_t;

struct TokenizedBlock {
  std::vector<Token> tokens;  // always L_max entries
  int valid_len = 0;

  int size() const { return static_cast<int>(tokens.size()); }
  // Bytes before the pad suffix.
  Bytes detokenize() const;
};

struct TokenMatrix {
  std::vector<TokenizedBlock> rows;
  std::optional<std::vector<double>> label;
  double duration_s = 0.0;

  int num_rows() const { return static_cast<int>(rows.size()); }
  int row_length() const { return rows.empty() ? 0 : rows.front().size(); }
};

struct TokenizeStats {
  std::size_t truncated_blocks = 0;
};

// Maps block bytes to tokens 0..255 and pads with 256 up to l_max. Longer
// blocks are truncated and counted in stats.
TokenizedBlock tokenize_block(ByteView bytes, int l_max, TokenizeStats* stats = nullptr);
inline TokenizedBlock tokenize_block(const CompressedBlock& b, int l_max, TokenizeStats* stats = nullptr) {
  return tokenize_block(b.bytes, l_max, stats);
}

// One row per block, keeping at most max_blocks from the front.
// Throws EmptyInput for an empty sequence.
TokenMatrix tokenize_stream(const BlockSequence& seq, int l_max, int max_blocks, TokenizeStats* stats = nullptr);

// Tokens per second: l_prime * blocks / duration. Throws NotApplicable when
// the sequence has no duration (images).
double compute_tps(const BlockSequence& seq, int l_prime);
double compute_tps(std::size_t blocks, double duration_s, int l_prime);

// Token-to-byte ratio l_prime / l_avg.
double compute_tbr(int l_prime, double l_avg);

// Label checks shared by tokenizer, augment and model: non-negative entries
// summing to 1 within 1e-6. Throws LabelError.
void check_distribution(const std::vector<double>& label);

// Flat little-endian layout:
//   char[4] "TMTK" | u32 l_max | u32 rows | u32 num_classes (0: no label)
//   | rows * l_max u16 tokens (row-major) | num_classes f32 label
void write_token_matrix(const std::filesystem::path& path, const TokenMatrix& m);
TokenMatrix read_token_matrix(const std::filesystem::path& path);
Bytes encode_token_matrix(const TokenMatrix& m);
TokenMatrix decode_token_matrix(ByteView bytes);

}  // namespace tempest
