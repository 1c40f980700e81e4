#include "tempest/tokenizer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "tempest/errors.hpp"

namespace tempest {

namespace {

constexpr char kMagic[4] = {'T', 'M', 'T', 'K'};
constexpr std::size_t kHeaderSize = 16;

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(ByteView in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
  return v;
}

}  // namespace

Bytes TokenizedBlock::detokenize() const {
  Bytes out;
  out.reserve(static_cast<std::size_t>(valid_len));
  for (int j = 0; j < valid_len; ++j) out.push_back(static_cast<std::uint8_t>(tokens[j]));
  return out;
}

TokenizedBlock tokenize_block(ByteView bytes, int l_max, TokenizeStats* stats) {
  if (l_max < 1) throw ConfigError("L_max must be >= 1");
  TokenizedBlock t;
  t.tokens.assign(static_cast<std::size_t>(l_max), static_cast<Token>(kPadToken));
  const std::size_t keep = std::min(bytes.size(), static_cast<std::size_t>(l_max));
  std::copy_n(bytes.begin(), keep, t.tokens.begin());
  t.valid_len = static_cast<int>(keep);
  if (bytes.size() > keep && stats != nullptr) ++stats->truncated_blocks;
  return t;
}

TokenMatrix tokenize_stream(const BlockSequence& seq, int l_max, int max_blocks, TokenizeStats* stats) {
  if (seq.blocks.empty()) throw EmptyInput("block sequence is empty");
  if (max_blocks < 1) throw ConfigError("max_blocks must be >= 1");
  TokenMatrix m;
  const std::size_t rows = std::min(seq.blocks.size(), static_cast<std::size_t>(max_blocks));
  m.rows.reserve(rows);
  for (std::size_t i = 0; i < rows; ++i) m.rows.push_back(tokenize_block(seq.blocks[i], l_max, stats));
  m.duration_s = seq.total_duration_s;
  return m;
}

double compute_tps(std::size_t blocks, double duration_s, int l_prime) {
  if (!(duration_s > 0.0)) throw NotApplicable("tokens per second needs a positive duration");
  return static_cast<double>(l_prime) * static_cast<double>(blocks) / duration_s;
}

double compute_tps(const BlockSequence& seq, int l_prime) {
  return compute_tps(seq.blocks.size(), seq.total_duration_s, l_prime);
}

double compute_tbr(int l_prime, double l_avg) {
  if (!(l_avg > 0.0)) throw ConfigError("average block length must be positive");
  return static_cast<double>(l_prime) / l_avg;
}

void check_distribution(const std::vector<double>& label) {
  if (label.empty()) throw LabelError("label is empty");
  double sum = 0.0;
  for (double p : label) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw LabelError("label has a negative or non-finite entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw LabelError("label does not sum to 1");
}

Bytes encode_token_matrix(const TokenMatrix& m) {
  const auto l_max = static_cast<std::uint32_t>(m.row_length());
  const auto num_classes = static_cast<std::uint32_t>(m.label ? m.label->size() : 0);
  Bytes out(kMagic, kMagic + 4);
  put_u32(out, l_max);
  put_u32(out, static_cast<std::uint32_t>(m.rows.size()));
  put_u32(out, num_classes);
  for (const auto& row : m.rows) {
    if (static_cast<std::uint32_t>(row.size()) != l_max) throw ShapeError("ragged token matrix");
    for (Token t : row.tokens) {
      out.push_back(static_cast<std::uint8_t>(t & 0xFF));
      out.push_back(static_cast<std::uint8_t>(t >> 8));
    }
  }
  if (m.label) {
    for (double p : *m.label) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(p)));
  }
  return out;
}

TokenMatrix decode_token_matrix(ByteView in) {
  if (in.size() < kHeaderSize || std::memcmp(in.data(), kMagic, 4) != 0) {
    throw IoError("not a token matrix file");
  }
  const std::size_t l_max = get_u32(in, 4);
  const std::size_t rows = get_u32(in, 8);
  const std::size_t num_classes = get_u32(in, 12);
  const std::size_t expected = kHeaderSize + rows * l_max * 2 + num_classes * 4;
  if (in.size() != expected) throw IoError("token matrix size does not match its header");

  TokenMatrix m;
  std::size_t at = kHeaderSize;
  for (std::size_t r = 0; r < rows; ++r) {
    TokenizedBlock row;
    row.tokens.resize(l_max);
    for (std::size_t j = 0; j < l_max; ++j, at += 2) {
      row.tokens[j] = static_cast<Token>(in[at] | (in[at + 1] << 8));
      if (row.tokens[j] > kPadToken) throw VocabError("token out of range");
    }
    const auto first_pad = std::find(row.tokens.begin(), row.tokens.end(), static_cast<Token>(kPadToken));
    row.valid_len = static_cast<int>(first_pad - row.tokens.begin());
    m.rows.push_back(std::move(row));
  }
  if (num_classes > 0) {
    std::vector<double> label;
    for (std::size_t c = 0; c < num_classes; ++c, at += 4) label.push_back(std::bit_cast<float>(get_u32(in, at)));
    m.label = std::move(label);
  }
  return m;
}

void write_token_matrix(const std::filesystem::path& path, const TokenMatrix& m) {
  save_bytes(path, encode_token_matrix(m));
}

TokenMatrix read_token_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_token_matrix(bytes);
}

}  // namespace tempest
