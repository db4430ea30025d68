#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "seqlevel/metrics.hpp"
#include "seqlevel/model.hpp"

namespace seqlevel {

enum class SearchMode { kBeam, kSample };

SearchMode parse_search_mode(std::string_view name);
std::string search_mode_name(SearchMode mode);

struct GenerationConfig {
  std::size_t k = 16;
  std::size_t max_len = kMaxGenerationLength;
  SearchMode mode = SearchMode::kBeam;
  bool online = true;
  // Rank beams by length-normalized log-probability. Off reproduces the
  // unnormalized k=5 setup.
  bool normalize = true;
  std::uint64_t seed = 1;
  // Offline only: rebuild the cache every this many batches (0 = never).
  std::size_t refresh_every = 0;
};

// Tokens a search may emit: everything but pad, bos and unk.
bool is_generatable(TokenId id);

// Finished hypotheses, best first, at most k. Per-token scores are the full
// (unmasked) model log-probabilities and logits, so teacher-forced rescoring
// reproduces them. At step max_len only eos may be emitted, so every
// hypothesis is eos-terminated. Ties are broken by token sequence order.
std::vector<ScoredCandidate> beam_search(const Params& params, std::span<const TokenId> source, std::size_t k,
                                         std::size_t max_len, bool normalize = true);

// k ancestral samples from the model restricted to generatable tokens,
// duplicates merged in order of first appearance.
std::vector<ScoredCandidate> sample_k(const Params& params, std::span<const TokenId> source, std::size_t k,
                                      std::size_t max_len, std::uint64_t seed);

std::vector<ScoredCandidate> generate(const Params& params, std::span<const TokenId> source,
                                      const GenerationConfig& config, std::uint64_t seed);

// Sort key shared by search and tests: normalized (or raw) log-probability
// descending, then token sequence ascending.
bool hypothesis_before(const ScoredCandidate& a, const ScoredCandidate& b, bool normalize);

struct CandidateSet {
  std::size_t source_id = 0;
  std::vector<ScoredCandidate> members;
  std::size_t pseudo_ref = 0;  // u*: highest metric score
  std::size_t model_best = 0;  // u-hat: highest avg_score

  std::size_t size() const { return members.size(); }
  // Recomputes u* (max metric, i.e. min cost) and u-hat (max avg_score);
  // lowest index wins ties.
  void select();
};

// Deduplicates (first occurrence kept, order preserved), attaches metric
// scores and costs against ref, and selects u* and u-hat. The reference is
// never inserted; a generated copy of it stays.
CandidateSet make_candidate_set(std::vector<ScoredCandidate> hyps, std::span<const TokenId> ref, MetricKind metric,
                                std::size_t source_id = 0);

// Affine map of the set's costs onto [0,1]. u* is left in place.
CandidateSet rescale_set_costs(CandidateSet set);

// Offline candidates: token sequences only (eos included), keyed by source index.
class CandidateCache {
 public:
  void put(std::size_t source_id, std::vector<TokenSeq> candidates);
  const std::vector<TokenSeq>& get(std::size_t source_id) const;
  bool contains(std::size_t source_id) const { return entries_.count(source_id) > 0; }
  std::size_t size() const { return entries_.size(); }

  // One line per source: "<index>\t<ids>|<ids>|...", ids space-separated.
  void save(const std::filesystem::path& path) const;
  static CandidateCache load(const std::filesystem::path& path);
  std::string to_string() const;
  static CandidateCache parse(std::istream& in);

  bool operator==(const CandidateCache&) const = default;

 private:
  std::map<std::size_t, std::vector<TokenSeq>> entries_;
};

CandidateCache build_cache(const Params& params, const std::vector<SentencePair>& pairs,
                           const GenerationConfig& config);

// Hands out candidate token sequences for a training example: freshly
// generated under the current parameters (online) or read from the cache
// (offline). Scores are always recomputed by the caller.
class CandidateProvider {
 public:
  explicit CandidateProvider(GenerationConfig config, std::optional<CandidateCache> cache = std::nullopt);

  std::vector<TokenSeq> tokens(const Params& params, std::size_t source_id, std::span<const TokenId> source,
                               std::size_t epoch);

  // Tokens plus teacher-forced scores, metric and selection.
  CandidateSet provide(const Params& params, std::size_t source_id, std::span<const TokenId> source,
                       std::span<const TokenId> ref, MetricKind metric, std::size_t epoch);

  void refresh(const Params& params, const std::vector<SentencePair>& pairs);

  const GenerationConfig& config() const { return config_; }
  std::size_t generation_calls() const { return generation_calls_; }

 private:
  GenerationConfig config_;
  std::optional<CandidateCache> cache_;
  std::size_t generation_calls_ = 0;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace seqlevel
