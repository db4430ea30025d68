#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seqlevel/corpus.hpp"

namespace seqlevel {

enum class MetricKind { kBleu, kRouge1, kRouge2, kRougeL };

MetricKind parse_metric(std::string_view name);  // bleu, rouge1, rouge2, rougeL
std::string metric_name(MetricKind kind);

using Tokens = std::span<const TokenId>;

// Smoothed sentence BLEU. Orders >= 2 start match and total counts at one;
// unigrams are unsmoothed. Includes the standard brevity penalty.
// An empty hypothesis scores 0.
double sentence_bleu(Tokens ref, Tokens hyp, int max_order = 4);

// Aggregate-count BLEU-4 without smoothing.
double corpus_bleu(const std::vector<TokenSeq>& refs, const std::vector<TokenSeq>& hyps, int max_order = 4);

// ROUGE F1. variant is kRouge1, kRouge2 or kRougeL.
double rouge(Tokens ref, Tokens hyp, MetricKind variant);

double metric_score(Tokens ref, Tokens hyp, MetricKind kind);

// 1 - metric score.
double cost(Tokens ref, Tokens hyp, MetricKind kind);

// Maps costs affinely onto [0,1] by the set's min/max. Equal costs map to 0.
// Fewer than two entries: returned unchanged.
std::vector<double> rescale_costs(std::span<const double> costs);

// Interns whitespace tokens so string sentences can be scored by the
// id-based metrics.
class TokenInterner {
 public:
  TokenSeq intern(std::string_view line);

 private:
  std::unordered_map<std::string, TokenId> ids_;
};

}  // namespace seqlevel
