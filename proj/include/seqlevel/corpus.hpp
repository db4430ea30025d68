#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "seqlevel/rng.hpp"

namespace seqlevel {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kNumReserved = 4;

inline constexpr std::size_t kDefaultMaxSentenceLength = 175;

// Token <-> id bijection. Ids 0..3 are always pad, bos, eos, unk.
class Vocab {
 public:
  Vocab();
  explicit Vocab(std::vector<std::string> tokens);

  // A vocabulary of `size` entries whose real tokens are "w0", "w1", ...
  static Vocab synthetic(std::size_t size);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  TokenId id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  // 64-bit FNV-1a over the newline-joined token list.
  std::uint64_t hash() const;

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct SentencePair {
  TokenSeq source;
  TokenSeq target;

  bool operator==(const SentencePair&) const = default;
};

struct Batch {
  std::vector<SentencePair> pairs;
  std::vector<std::size_t> indices;  // position of each pair in the input list
  std::size_t target_tokens = 0;
};

enum class SyntheticTask { kCopy, kNoisyCopy, kReverse };

struct SyntheticSpec {
  SyntheticTask task = SyntheticTask::kCopy;
  double p_sub = 0.0;          // noisy copy only
  std::size_t min_len = 1;     // real tokens, eos excluded
  std::size_t max_len = 12;
};

SyntheticTask parse_task(std::string_view name);
std::string task_name(SyntheticTask task);

std::vector<std::string> split_whitespace(std::string_view line);

// Keeps the max_size - 4 most frequent tokens; ties go to first occurrence.
Vocab build_vocab(const std::vector<std::string>& lines, std::size_t max_size);

// Appends eos; out-of-vocabulary tokens map to unk.
TokenSeq encode_line(const Vocab& vocab, std::string_view text);

// Stops at the first eos and drops pad/bos.
std::string decode_ids(const Vocab& vocab, const TokenSeq& ids);

// Strips a trailing eos (and anything after the first eos).
TokenSeq strip_eos(const TokenSeq& ids);

std::vector<SentencePair> gen_synthetic(const SyntheticSpec& spec, std::size_t count,
                                        const Vocab& vocab, std::uint64_t seed);

// Shuffles by seed, then packs greedily so each batch holds at most
// max_tokens target tokens (eos included).
std::vector<Batch> batch_by_tokens(const std::vector<SentencePair>& pairs,
                                   std::size_t max_tokens, std::uint64_t seed);

// Deterministic held-out split: returns {train, valid}.
std::pair<std::vector<SentencePair>, std::vector<SentencePair>> split_validation(
    const std::vector<SentencePair>& pairs, double valid_fraction, std::uint64_t seed);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

// Reads two line-aligned files. Pairs longer than max_len tokens on either side are dropped.
std::vector<SentencePair> read_parallel(const Vocab& vocab, const std::filesystem::path& source,
                                        const std::filesystem::path& target,
                                        std::size_t max_len = kDefaultMaxSentenceLength);

void write_parallel(const Vocab& vocab, const std::vector<SentencePair>& pairs,
                    const std::filesystem::path& source, const std::filesystem::path& target);

}  // namespace seqlevel
